"""Central finite-difference check of the composite-loss gradient for every parameter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, KinkCollisionError
from .losses import DEFAULT_MARGIN, build_pairs, composite_loss
from .model import PARAM_NAMES, backward, forward, init_params

STEP = 1e-4
TOLERANCE = 1e-5
KINK_EPS = 1e-6
MAX_ATTEMPTS = 10


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    worst_tensor: str
    per_tensor: dict[str, float]
    failing: list[str]
    n_params: int
    attempts: int
    seed: int
    tolerance: float = TOLERANCE
    step: float = STEP
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "worst_tensor": self.worst_tensor,
            "per_tensor": self.per_tensor,
            "failing": self.failing,
            "n_params": self.n_params,
            "attempts": self.attempts,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "step": self.step,
        }


def _draw_problem(rng: np.random.Generator, batch: int, size: int):
    params = init_params(int(rng.integers(2**31)), dtype=np.float64)
    for name in PARAM_NAMES:
        if name.endswith(".b"):
            params[name] = rng.uniform(-0.1, 0.1, size=params[name].shape)
    x = rng.standard_normal((batch, 4, size, size))
    y = rng.uniform(4.0, 7.0, size=batch)
    return params, x, y


def _near_hinge(pred, y, margin) -> bool:
    pairs = build_pairs(pred, y, margin)
    t = -pairs.y * (pairs.x1 - pairs.x2) + pairs.m
    return bool(np.any(np.abs(t) <= KINK_EPS))


def _pattern(trace, pred, y, margin, ranking) -> bytes:
    key = trace.pattern()
    if ranking:
        pairs = build_pairs(pred, y, margin)
        key += (-pairs.y * (pairs.x1 - pairs.x2) + pairs.m > 0).tobytes()
    return key


def _numeric_grads(params, x, y, margin, ranking, step, base_pattern):
    """Central differences for every parameter, or None if a perturbation crosses a kink."""
    def loss_at():
        pred, trace = forward(params, x)
        if _pattern(trace, pred, y, margin, ranking) != base_pattern:
            return None
        return composite_loss(pred, y, margin, ranking).total

    numeric = {}
    for name in PARAM_NAMES:
        flat = params[name].reshape(-1)
        g = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = loss_at()
            flat[k] = orig - step
            fm = loss_at()
            flat[k] = orig
            if fp is None or fm is None:
                return None
            g[k] = (fp - fm) / (2.0 * step)
        numeric[name] = g
    return numeric


def gradcheck(
    seed: int = 0,
    dtype=np.float64,
    batch: int = 2,
    size: int = 8,
    margin: float = DEFAULT_MARGIN,
    step: float = STEP,
    tolerance: float = TOLERANCE,
    backward_fn=backward,
) -> GradcheckReport:
    """Compare analytic gradients of the composite loss against central differences.

    A problem is redrawn (up to ``MAX_ATTEMPTS`` times) if its predictions sit
    within ``KINK_EPS`` of a hinge kink, or if any +-step perturbation flips a
    ReLU, a max-pool winner or a hinge branch, since central differences are
    meaningless across a kink.
    """
    if np.dtype(dtype) != np.float64:
        raise ConfigError("gradcheck requires float64; float32 cannot resolve a 1e-4 step to 1e-5 accuracy")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C4E]))
    ranking = batch >= 2
    for attempt in range(1, MAX_ATTEMPTS + 1):
        params, x, y = _draw_problem(rng, batch, size)
        pred, trace = forward(params, x)
        if ranking and _near_hinge(pred, y, margin):
            continue
        numeric = _numeric_grads(params, x, y, margin, ranking, step, _pattern(trace, pred, y, margin, ranking))
        if numeric is not None:
            break
    else:
        raise KinkCollisionError(f"kink hit on all {MAX_ATTEMPTS} draws (seed {seed})")

    out = composite_loss(pred, y, margin, ranking)
    analytic = backward_fn(params, trace, out.grad_wrt_predictions)

    per_tensor: dict[str, float] = {}
    for name in PARAM_NAMES:
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        n = numeric[name]
        rel = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        per_tensor[name] = float(rel.max())

    worst = max(per_tensor, key=per_tensor.get)
    failing = [n for n, e in per_tensor.items() if not e < tolerance]
    return GradcheckReport(
        passed=not failing,
        max_rel_error=per_tensor[worst],
        worst_tensor=worst,
        per_tensor=per_tensor,
        failing=failing,
        n_params=sum(p.size for p in params.values()),
        attempts=attempt,
        seed=seed,
        tolerance=tolerance,
        step=step,
    )
