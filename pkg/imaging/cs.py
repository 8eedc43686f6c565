"""
Compressive sensing: sensing matrices, L1 proximal solvers and a
diffraction-aware forward operator.

Solvers minimise the squared surrogate 0.5 ||s - A x||^2 + lambda ||x||_1
with step 1/L, L taken from power iteration on A^H A plus a 2% margin.
Operators may be complex (the Fresnel composite); the unknown x is real and
its gradient is Re(A^H (A x - s)).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import hadamard
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from imaging.holo import propagate_array
from imaging.physics import is_power_of_two
from lib.tensorio import export_csv

LOGGER = logging.getLogger(__name__)

POWER_ITERATIONS = 30
POWER_TOL = 1e-6
LIPSCHITZ_MARGIN = 1.02


class SensingKind(str, Enum):
    BERNOULLI_PM1 = "bernoulli_pm1"
    BINARY01 = "binary01"
    HADAMARD_SUBSAMPLED = "hadamard_subsampled"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class SensingMatrix:
    """Illumination patterns, one per row. Generated kinds have unit-norm rows."""

    kind: SensingKind
    m: int
    n: int
    seed: Optional[int]
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.shape != (self.m, self.n):
            raise ValueError(f"matrix data {self.data.shape} does not match ({self.m}, {self.n})")

    def as_operator(self) -> LinearOperator:
        return aslinearoperator(self.data)


def make_sensing_matrix(
    kind: Union[SensingKind, str],
    m: int,
    n: int,
    seed: Optional[int] = None,
    data: Optional[np.ndarray] = None,
) -> SensingMatrix:
    """Deterministic pattern set from ``seed``.

    bernoulli_pm1        entries +-1/sqrt(n)
    binary01             n/2 ones per row, scaled to unit norm
    hadamard_subsampled  m distinct Sylvester-Hadamard rows, scaled by 1/sqrt(n)
    explicit             ``data`` taken as is
    """
    kind = SensingKind(kind)
    if kind is SensingKind.EXPLICIT:
        if data is None:
            raise ValueError("explicit sensing matrix needs data")
        arr = np.atleast_2d(np.asarray(data))
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"invalid explicit matrix shape {arr.shape}")
        return SensingMatrix(kind, arr.shape[0], arr.shape[1], seed, arr)

    if m < 1 or n < 1:
        raise ValueError(f"sensing matrix needs m >= 1 and n >= 1, got m={m}, n={n}")
    rng = np.random.default_rng(seed)

    if kind is SensingKind.BERNOULLI_PM1:
        matrix = rng.choice(np.array([-1.0, 1.0]), size=(m, n)) / math.sqrt(n)
    elif kind is SensingKind.BINARY01:
        ones = n // 2
        if ones < 1:
            raise ValueError(f"binary01 patterns need n >= 2, got {n}")
        matrix = np.zeros((m, n))
        for row in range(m):
            matrix[row, rng.permutation(n)[:ones]] = 1.0
        matrix /= math.sqrt(ones)
    else:
        if not is_power_of_two(n):
            raise ValueError(f"hadamard patterns need n a power of two, got {n}")
        if m > n:
            raise ValueError(f"cannot select {m} distinct rows from a {n}x{n} Hadamard matrix")
        rows = np.sort(rng.permutation(n)[:m])
        matrix = hadamard(n).astype(np.float64)[rows] / math.sqrt(n)
    return SensingMatrix(kind, m, n, seed, matrix)


OperatorLike = Union[SensingMatrix, np.ndarray, LinearOperator]


def as_operator(a: OperatorLike) -> LinearOperator:
    if isinstance(a, SensingMatrix):
        return a.as_operator()
    if isinstance(a, LinearOperator):
        return a
    return aslinearoperator(np.atleast_2d(np.asarray(a)))


def soft_threshold(v: np.ndarray, tau: float) -> np.ndarray:
    """Componentwise sign(v) max(|v| - tau, 0)."""
    if tau < 0:
        raise ValueError(f"threshold must be >= 0, got {tau}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def objective(a: OperatorLike, s: np.ndarray, x: np.ndarray, lam: float) -> float:
    """0.5 ||s - A x||^2 + lambda ||x||_1."""
    op = as_operator(a)
    x = np.asarray(x)
    s = np.asarray(s)
    if x.shape != (op.shape[1],) or s.shape != (op.shape[0],):
        raise ValueError(f"operator {op.shape} does not match x {x.shape} and s {s.shape}")
    residual = s - op.matvec(x)
    return float(0.5 * np.vdot(residual, residual).real + lam * np.abs(x).sum())


def power_iteration(
    a: OperatorLike,
    iters: int = POWER_ITERATIONS,
    tol: float = POWER_TOL,
    seed: int = 0,
) -> float:
    """Largest eigenvalue of A^H A (real domain) by power iteration."""
    op = as_operator(a)
    x = np.random.default_rng(seed).standard_normal(op.shape[1])
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = np.real(op.rmatvec(op.matvec(x)))
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(norm - estimate) <= tol * norm:
            estimate = norm
            break
        estimate = norm
    return estimate


def lipschitz_constant(a: OperatorLike) -> float:
    return power_iteration(a) * LIPSCHITZ_MARGIN


def momentum_sequence(count: int) -> np.ndarray:
    """t_1 = 1, t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2."""
    t = np.empty(count)
    if count:
        t[0] = 1.0
    for k in range(1, count):
        t[k] = (1.0 + math.sqrt(1.0 + 4.0 * t[k - 1] ** 2)) / 2.0
    return t


class SolveResult(NamedTuple):
    x: np.ndarray
    history: List[float]


def _prepare(a: OperatorLike, s: np.ndarray, lam: float, x0: Optional[np.ndarray]) -> Tuple[LinearOperator, np.ndarray, np.ndarray, float]:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    op = as_operator(a)
    s = np.asarray(s)
    if s.shape != (op.shape[0],):
        raise ValueError(f"measurements {s.shape} do not match operator {op.shape}")
    x = np.zeros(op.shape[1]) if x0 is None else np.array(x0, dtype=np.float64)
    lipschitz = lipschitz_constant(op)
    if lipschitz == 0:
        raise ValueError("operator is identically zero")
    return op, s, x, lipschitz


def _gradient(op: LinearOperator, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.real(op.rmatvec(op.matvec(x) - s))


def _converged(history: Sequence[float], tol: float) -> bool:
    if len(history) < 2:
        return False
    prev, cur = history[-2], history[-1]
    return abs(prev - cur) <= tol * max(abs(prev), np.finfo(float).tiny)


def ista(
    a: OperatorLike,
    s: np.ndarray,
    lam: float,
    iters: int = 500,
    tol: float = 1e-10,
    x0: Optional[np.ndarray] = None,
) -> SolveResult:
    """Iterative shrinkage-thresholding; the objective never increases."""
    op, s, x, lipschitz = _prepare(a, s, lam, x0)
    history = [objective(op, s, x, lam)]
    for k in range(iters):
        x = soft_threshold(x - _gradient(op, x, s) / lipschitz, lam / lipschitz)
        history.append(objective(op, s, x, lam))
        if _converged(history, tol):
            LOGGER.debug("ista converged after %d iterations", k + 1)
            break
    else:
        LOGGER.debug("ista stopped at iteration cap %d", iters)
    return SolveResult(x, history)


def fista(
    a: OperatorLike,
    s: np.ndarray,
    lam: float,
    iters: int = 500,
    tol: float = 1e-10,
    x0: Optional[np.ndarray] = None,
) -> SolveResult:
    """ISTA with Nesterov momentum."""
    op, s, x, lipschitz = _prepare(a, s, lam, x0)
    y = x.copy()
    t = 1.0
    history = [objective(op, s, x, lam)]
    for k in range(iters):
        x_next = soft_threshold(y - _gradient(op, y, s) / lipschitz, lam / lipschitz)
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        x, t = x_next, t_next
        history.append(objective(op, s, x, lam))
        if _converged(history, tol):
            LOGGER.debug("fista converged after %d iterations", k + 1)
            break
    else:
        LOGGER.debug("fista stopped at iteration cap %d", iters)
    return SolveResult(x, history)


SOLVERS: dict = {"ista": ista, "fista": fista}


def solve_continuation(
    a: OperatorLike,
    s: np.ndarray,
    lam: float,
    solver: Union[str, Callable[..., SolveResult]] = "fista",
    stages: int = 8,
    iters: int = 300,
    tol: float = 1e-12,
) -> SolveResult:
    """Warm-started solves along a geometric lambda path ending at ``lam``.

    The path starts at half of ||A^H s||_inf, where the solution is still zero.
    The returned history concatenates every stage.
    """
    solve = SOLVERS[solver] if isinstance(solver, str) else solver
    op = as_operator(a)
    lam_max = float(np.max(np.abs(np.real(op.rmatvec(np.asarray(s))))))
    start = max(lam, 0.5 * lam_max)
    path = np.geomspace(start, lam, stages) if lam > 0 and stages > 1 else np.array([lam])
    x: Optional[np.ndarray] = None
    history: List[float] = []
    for stage_lam in path:
        x, stage_history = solve(op, s, float(stage_lam), iters, tol, x)
        history.extend(stage_history)
    return SolveResult(x, history)


def write_history(history: Sequence[float], path) -> None:
    export_csv([(str(k), [value]) for k, value in enumerate(history)], path, header=("iteration", "objective"))


class FresnelOperator(LinearOperator):
    """s = A vec(P_z x): patterns applied after angular-spectrum propagation.

    The adjoint is P_{-z} applied to A^H s, exact on the propagating band.
    """

    def __init__(self, base: SensingMatrix, z_mm: float, freq_thz: float, grid: Tuple[int, int], pitch_mm: float):
        rows, cols = grid
        if rows != cols:
            raise ValueError(f"Fresnel operator needs a square pixel grid, got {grid}")
        if base.n != rows * cols:
            raise ValueError(f"sensing matrix has {base.n} columns, grid has {rows * cols} pixels")
        super().__init__(dtype=np.complex128, shape=(base.m, base.n))
        self.base = base
        self.z_mm = z_mm
        self.freq_thz = freq_thz
        self.grid = (rows, cols)
        self.pitch_mm = pitch_mm

    def _matvec(self, x: np.ndarray) -> np.ndarray:
        field = propagate_array(np.asarray(x).reshape(self.grid), self.pitch_mm, self.freq_thz, self.z_mm)
        return self.base.data @ field.reshape(-1)

    def _rmatvec(self, y: np.ndarray) -> np.ndarray:
        back = self.base.data.conj().T @ np.asarray(y).reshape(-1)
        return propagate_array(back.reshape(self.grid), self.pitch_mm, self.freq_thz, -self.z_mm).reshape(-1)

    def _adjoint(self) -> LinearOperator:
        return LinearOperator(self.shape[::-1], matvec=self._rmatvec, rmatvec=self._matvec, dtype=self.dtype)


def fresnel_operator(
    base: SensingMatrix,
    z_mm: float,
    f_thz: float,
    grid: Tuple[int, int],
    pitch_mm: float = 0.5,
) -> FresnelOperator:
    return FresnelOperator(base, z_mm, f_thz, grid, pitch_mm)
