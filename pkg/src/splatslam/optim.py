"""First-order optimizer with per-group learning rates, plus the
finite-difference oracle the test suite checks analytic gradients against.

The update rule is the adaptive-moment method (beta1 = 0.9, beta2 = 0.999,
eps = 1e-8).  Moments are kept per parameter group; groups never interact.
A step with any non-finite gradient is skipped entirely and reported via a
warning so a single bad iteration cannot poison the moment estimates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    """Per-group moment accumulators and learning rates."""

    lrs: dict[str, float]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def ensure(self, name: str, shape) -> None:
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)

    def extend(self, name: str, n_new: int) -> None:
        """Append zero moments for freshly spawned parameters in ``name``."""
        if name not in self.m or n_new == 0:
            return
        pad = (n_new,) + self.m[name].shape[1:]
        self.m[name] = np.concatenate([self.m[name], np.zeros(pad)])
        self.v[name] = np.concatenate([self.v[name], np.zeros(pad)])


def make_state(lrs: dict[str, float]) -> OptimizerState:
    return OptimizerState(lrs=dict(lrs))


def step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
         state: OptimizerState) -> dict[str, np.ndarray]:
    """One adaptive-moment step over all groups; returns the updated params.

    Moments in ``state`` are updated in place.  If any gradient is
    non-finite the whole step is skipped (state untouched) and a warning is
    emitted.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            warnings.warn(f"non-finite gradient in group {name!r}; step skipped")
            return {k: np.array(p, dtype=float, copy=True) for k, p in params.items()}
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    out = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=float)
        g = np.asarray(grads[name], dtype=float)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} in {name!r}")
        state.ensure(name, p.shape)
        state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
        state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = p - state.lrs[name] * m_hat / (np.sqrt(v_hat) + EPS)
    return out


def finite_diff_grad(objective, params: np.ndarray, h: float) -> np.ndarray:
    """Central differences (f(p + h e_k) - f(p - h e_k)) / 2h per coordinate.

    The objective must be deterministic; a non-finite value raises.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = np.asarray(params, dtype=float)
    flat = params.reshape(-1)
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        bump = np.zeros_like(flat)
        bump[k] = h
        hi = float(objective((flat + bump).reshape(params.shape)))
        lo = float(objective((flat - bump).reshape(params.shape)))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("objective returned a non-finite value")
        grad[k] = (hi - lo) / (2.0 * h)
    return grad.reshape(params.shape)
