"""
Tests for imaging/cs.py.
"""

import math

import numpy as np
import pytest

from imaging import cs


def random_problem(seed=0, m=32, n=64):
    rng = np.random.default_rng(seed)
    a = cs.make_sensing_matrix("bernoulli_pm1", m, n, seed=seed)
    return a, rng.normal(size=m)


def sparse_signal(rng, n, k):
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x[support] = rng.choice([-1.0, 1.0], size=k) * rng.uniform(0.5, 1.5, size=k)
    return x


def relative_error(x, truth):
    return np.linalg.norm(x - truth) / np.linalg.norm(truth)


def test_hadamard_full_is_orthonormal():
    a = cs.make_sensing_matrix("hadamard_subsampled", 64, 64, seed=3).data
    assert np.allclose(a @ a.T, np.eye(64), atol=1e-12)


@pytest.mark.parametrize("kind", ["bernoulli_pm1", "binary01", "hadamard_subsampled"])
def test_generated_patterns_are_deterministic_unit_rows(kind):
    first = cs.make_sensing_matrix(kind, 12, 32, seed=9)
    second = cs.make_sensing_matrix(kind, 12, 32, seed=9)
    other = cs.make_sensing_matrix(kind, 12, 32, seed=10)
    assert np.array_equal(first.data, second.data)
    assert not np.array_equal(first.data, other.data)
    assert np.allclose(np.linalg.norm(first.data, axis=1), 1.0)


def test_binary01_entries():
    a = cs.make_sensing_matrix("binary01", 5, 10, seed=1).data
    c = 1 / math.sqrt(5)
    assert set(np.unique(np.round(a, 12))) <= {0.0, round(c, 12)}
    assert np.all(np.count_nonzero(a, axis=1) == 5)


def test_sensing_matrix_validation():
    with pytest.raises(ValueError):
        cs.make_sensing_matrix("hadamard_subsampled", 4, 12)
    with pytest.raises(ValueError):
        cs.make_sensing_matrix("hadamard_subsampled", 9, 8)
    with pytest.raises(ValueError):
        cs.make_sensing_matrix("bernoulli_pm1", 0, 8)
    with pytest.raises(ValueError):
        cs.make_sensing_matrix("explicit", 2, 2)
    with pytest.raises(ValueError):
        cs.make_sensing_matrix("gaussian", 2, 2)


def test_soft_threshold():
    assert cs.soft_threshold(np.array([3.0]), 1.0).tolist() == [2.0]
    assert cs.soft_threshold(np.array([-0.5]), 1.0).tolist() == [0.0]
    assert cs.soft_threshold(np.array([-3.0]), 1.0).tolist() == [-2.0]
    v = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(cs.soft_threshold(v, 0.0), v)
    with pytest.raises(ValueError):
        cs.soft_threshold(v, -0.1)


def test_objective():
    eye = np.eye(1)
    assert cs.objective(eye, np.array([2.0]), np.array([1.0]), 1.0) == pytest.approx(1.5)
    a, s = random_problem()
    assert cs.objective(a, s, np.zeros(64), 0.3) == pytest.approx(0.5 * np.sum(s ** 2))
    x = np.random.default_rng(1).normal(size=64)
    assert cs.objective(a, a.data @ x, x, 0.0) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        cs.objective(a, s, np.zeros(63), 0.1)


def test_power_iteration():
    diag = np.diag([1.0, 2.0, 3.0])
    assert cs.power_iteration(diag) == pytest.approx(9.0, rel=1e-4)
    assert cs.lipschitz_constant(diag) == pytest.approx(9.0 * 1.02, rel=1e-4)
    assert cs.power_iteration(np.zeros((2, 3))) == 0.0


def test_momentum_sequence():
    t = cs.momentum_sequence(4)
    assert t[0] == 1.0
    assert t[1] == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-12)
    for k in range(1, 4):
        assert t[k] == pytest.approx((1 + math.sqrt(1 + 4 * t[k - 1] ** 2)) / 2, abs=1e-12)


@pytest.mark.parametrize("solver", [cs.ista, cs.fista])
def test_identity_operator_closed_form(solver):
    s = np.array([3.0, -0.2, 0.7, -4.0])
    result = solver(np.eye(4), s, 0.5, iters=200, tol=0.0)
    assert np.allclose(result.x, cs.soft_threshold(s, 0.5), atol=1e-8)


@pytest.mark.parametrize("solver", [cs.ista, cs.fista])
def test_orthonormal_least_squares(solver):
    a = cs.make_sensing_matrix("hadamard_subsampled", 16, 16, seed=0)
    s = np.random.default_rng(2).normal(size=16)
    result = solver(a, s, 0.0, iters=200, tol=0.0)
    assert np.allclose(result.x, a.data.T @ s, atol=1e-8)


@pytest.mark.parametrize("solver", [cs.ista, cs.fista])
def test_large_lambda_gives_zero(solver):
    a, s = random_problem(4)
    lam = 1.01 * np.max(np.abs(a.data.T @ s))
    assert not solver(a, s, lam, iters=20).x.any()


def test_solvers_reject_negative_lambda():
    a, s = random_problem()
    with pytest.raises(ValueError):
        cs.ista(a, s, -1.0)
    with pytest.raises(ValueError):
        cs.fista(a, s[:-1], 0.1)


def test_ista_objective_never_increases():
    for seed in range(5):
        a, s = random_problem(seed)
        history = cs.ista(a, s, 0.05, iters=200, tol=0.0).history
        assert all(cur <= prev + 1e-12 for prev, cur in zip(history, history[1:]))


def test_fista_beats_ista_at_equal_iterations():
    for seed in range(5):
        a, s = random_problem(seed, m=48, n=128)
        ista_final = cs.ista(a, s, 0.01, iters=60, tol=0.0).history[-1]
        fista_final = cs.fista(a, s, 0.01, iters=60, tol=0.0).history[-1]
        assert fista_final <= ista_final + 1e-12


def test_ista_fixed_point():
    a = cs.make_sensing_matrix("hadamard_subsampled", 32, 32, seed=5)
    s = np.random.default_rng(5).normal(size=32)
    x_star = cs.ista(a, s, 0.2, iters=500, tol=0.0).x
    again = cs.ista(a, s, 0.2, iters=1, tol=0.0, x0=x_star).x
    assert np.allclose(again, x_star, atol=1e-12)


def test_scaling_covariance():
    s0 = np.array([2.0, -0.3, 0.9])
    lam, c = 0.4, 3.0
    scaled = cs.ista(c * np.eye(3), c * s0, lam * c ** 2, iters=300, tol=0.0).x
    plain = cs.ista(np.eye(3), s0, lam, iters=300, tol=0.0).x
    assert np.allclose(scaled, plain, atol=1e-9)
    assert np.allclose(plain, cs.soft_threshold(s0, lam), atol=1e-9)


def test_sparse_recovery_bernoulli():
    recovered = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        x_true = sparse_signal(rng, 256, 8)
        a = cs.make_sensing_matrix("bernoulli_pm1", 128, 256, seed=seed)
        x = cs.solve_continuation(a, a.data @ x_true, 1e-4).x
        same_support = np.array_equal(np.abs(x) > 0.05, x_true != 0)
        error = np.linalg.norm(x - x_true) / np.linalg.norm(x_true)
        recovered += same_support and error <= 1e-3
    assert recovered >= 18


def test_continuation_matches_direct_solve():
    a = cs.make_sensing_matrix("hadamard_subsampled", 32, 32, seed=1)
    s = np.random.default_rng(8).normal(size=32)
    direct = cs.fista(a, s, 0.1, iters=500, tol=0.0).x
    path = cs.solve_continuation(a, s, 0.1, "ista", stages=4, iters=200)
    assert np.allclose(path.x, direct, atol=1e-6)
    assert len(path.history) > 4


def test_write_history(tmp_path):
    cs.write_history([2.0, 1.5], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["iteration,objective", "0,2", "1,1.5"]


def test_fresnel_operator_at_zero_distance_is_plain():
    base = cs.make_sensing_matrix("bernoulli_pm1", 20, 64, seed=2)
    op = cs.fresnel_operator(base, 0.0, 0.5, (8, 8), 0.5)
    x = np.random.default_rng(0).normal(size=64)
    assert np.allclose(op.matvec(x), base.data @ x, atol=1e-12)


def test_fresnel_operator_adjoint():
    base = cs.make_sensing_matrix("binary01", 40, 256, seed=4)
    op = cs.fresnel_operator(base, 15.0, 0.5, (16, 16), 0.5)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.normal(size=256) + 1j * rng.normal(size=256)
        y = rng.normal(size=40) + 1j * rng.normal(size=40)
        ax = op.matvec(x)
        lhs = np.vdot(y, ax)
        rhs = np.vdot(op.rmatvec(y), x)
        assert abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y)) <= 1e-6


def test_fresnel_operator_validation():
    base = cs.make_sensing_matrix("bernoulli_pm1", 4, 64, seed=0)
    with pytest.raises(ValueError):
        cs.fresnel_operator(base, 1.0, 0.5, (4, 16))
    with pytest.raises(ValueError):
        cs.fresnel_operator(base, 1.0, 0.5, (4, 4))


def test_diffraction_aware_solve_beats_plain():
    improvements = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x_true = np.abs(sparse_signal(rng, 256, 6))
        masks = cs.make_sensing_matrix("hadamard_subsampled", 256, 256, seed=seed)
        op = cs.fresnel_operator(masks, 20.0, 0.5, (16, 16), 0.5)
        s = op.matvec(x_true)
        aware = cs.fista(op, s, 1e-3, iters=300).x
        plain = cs.fista(masks, s, 1e-3, iters=300).x
        improvements.append(relative_error(plain, x_true) - relative_error(aware, x_true))
    assert np.mean(improvements) > 0
