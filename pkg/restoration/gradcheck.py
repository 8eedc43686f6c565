"""
Central finite-difference checks of the autograd gradients.

The scalar probed is sum(out * R) for a fixed random R. Up to ``max_coords``
coordinates per tensor are sampled with a fixed seed; a coordinate whose
perturbation flips any ReLU mask sits on a kink and is skipped.
"""

from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from restoration.autograd import NnTensor, record_relu_masks

LOGGER = logging.getLogger(__name__)

MAX_COORDS = 512
EPS_RANGE = (1e-4, 1e-2)


def _masks_equal(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def relative_error(numeric: float, analytic: float, floor: float) -> float:
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), floor)


def grad_check(
    fn: Callable[..., NnTensor],
    inputs: Sequence[np.ndarray],
    params: Sequence[NnTensor] = (),
    eps: float = 1e-3,
    max_coords: int = MAX_COORDS,
    seed: int = 0,
    report: Optional[Dict[str, float]] = None,
) -> float:
    """Largest relative error between analytic and numeric gradients.

    ``fn`` receives one ``NnTensor`` per input array and builds its output
    from those and from ``params``. Both inputs and parameters are checked.
    """
    if not EPS_RANGE[0] <= eps <= EPS_RANGE[1]:
        raise ValueError(f"eps must lie in [{EPS_RANGE[0]}, {EPS_RANGE[1]}], got {eps}")
    rng = np.random.default_rng(seed)
    tensors = [NnTensor(np.array(x, dtype=np.float64)) for x in inputs]
    checked = tensors + list(params)

    def probe() -> float:
        return float(np.sum(fn(*tensors).data * weights))

    for t in checked:
        t.zero_grad()
    out = fn(*tensors)
    weights = rng.standard_normal(out.shape)
    out.backward(weights)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in checked]

    with record_relu_masks() as trace:
        probe()
    baseline = list(trace)

    worst = 0.0
    for index, (t, grad) in enumerate(zip(checked, analytic)):
        flat = t.data.reshape(-1)
        count = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False) if count < flat.size else np.arange(flat.size)
        floor = 1e-8 + 1e-3 * float(np.max(np.abs(grad))) if grad.size else 1e-8
        grad_flat = grad.reshape(-1)
        tensor_worst = 0.0
        skipped = 0
        for k in coords:
            original = flat[k]
            flat[k] = original + eps
            with record_relu_masks() as plus_trace:
                plus = probe()
            flat[k] = original - eps
            with record_relu_masks() as minus_trace:
                minus = probe()
            flat[k] = original
            if not (_masks_equal(plus_trace, baseline) and _masks_equal(minus_trace, baseline)):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * eps)
            tensor_worst = max(tensor_worst, relative_error(numeric, float(grad_flat[k]), floor))
        name = f"{index}:{getattr(t, 'name', '') or 'input'}"
        if report is not None:
            report[name] = tensor_worst
        LOGGER.debug("grad check %s: max rel err %.3g (%d kinks skipped)", name, tensor_worst, skipped)
        worst = max(worst, tensor_worst)
    return worst
