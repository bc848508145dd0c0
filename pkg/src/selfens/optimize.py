"""Adam optimizer with bias-corrected moments and scheduled lr / beta1."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the trainable tensors."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(trainables: dict[str, np.ndarray], beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    if not 0.0 < beta2 < 1.0:
        raise ConfigurationError(f"beta2 must lie in (0, 1), got {beta2}")
    m = {k: np.zeros_like(p) for k, p in trainables.items()}
    v = {k: np.zeros_like(p) for k, p in trainables.items()}
    return AdamState(m=m, v=v, t=0, beta2=beta2, eps=eps)


def set_beta2(state: AdamState, beta2: float) -> AdamState:
    """Change the second-moment decay; subsequent steps use the new value.

    Lowering it (e.g. 0.99) is the stability knob for runs that explode
    during the unsupervised ramp-up.
    """
    if not 0.0 < beta2 < 1.0:
        raise ConfigurationError(f"beta2 must lie in (0, 1), got {beta2}")
    state.beta2 = beta2
    return state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr_t: float, beta1_t: float) -> None:
    """One in-place Adam update with the scheduled lr and beta1.

    With lr_t == 0 the parameters come out bit-identical (moments still
    advance). The eps sits outside the square root, next to sqrt(v_hat).
    """
    if lr_t < 0:
        raise ConfigurationError("learning rate must be >= 0")
    if set(grads) != set(state.m):
        missing = set(state.m).symmetric_difference(grads)
        raise ConfigurationError(f"gradient keys do not match optimizer state: {missing}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1_t ** t
    bc2 = 1.0 - state.beta2 ** t
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for '{key}'")
        m = state.m[key]
        v = state.v[key]
        m *= beta1_t
        m += (1.0 - beta1_t) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        update = lr_t * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        params[key] -= update
