"""Finite-difference verification of the reverse-mode gradients.

Runs at 64-bit precision with recorded stochastic draws replayed across
every perturbed evaluation, so the loss is a deterministic function of the
parameters and central differences are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consistency import consistency_mse, consistency_mse_grad, cross_entropy_masked_grad
from .errors import ConfigurationError
from .nn import EvalContext, backward, calibrate_scales, forward, init_params
from .zoo import Layer


@dataclass
class LossSpec:
    """Loss driving the check.

    kind 'squared_error': sum of squared differences against `targets`.
    kind 'cross_entropy': masked cross-entropy (`labels`, `labeled_mask`).
    kind 'consistency_pair': cross-entropy on branch a plus `weight` times
    the mean-square difference between two stochastic branches, replayed
    independently; this exercises both loss terms through both tapes.
    """

    kind: str
    targets: np.ndarray | None = None
    labels: np.ndarray | None = None
    labeled_mask: np.ndarray | None = None
    weight: float = 1.0


def _branch_ctx(seed: int, record: bool = False,
                replay: list | None = None) -> EvalContext:
    ss = np.random.SeedSequence(seed).spawn(2)
    return EvalContext(mode="train", noise_rng=np.random.default_rng(ss[0]),
                       dropout_rng=np.random.default_rng(ss[1]),
                       record=record, replay=replay, update_stats=False)


def gradient_check(layers: tuple[Layer, ...], batch: np.ndarray, loss: LossSpec,
                   eps: float, n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random sample of at least `n_coords` parameter coordinates."""
    if eps <= 0:
        raise ConfigurationError(f"finite-difference step must be > 0, got {eps}")
    if loss.kind not in ("squared_error", "cross_entropy", "consistency_pair"):
        raise ConfigurationError(f"unknown loss kind '{loss.kind}'")
    batch = np.asarray(batch, dtype=np.float64)
    rng = np.random.default_rng(seed)
    params = init_params(layers, batch.shape[1:], rng, dtype=np.float64)
    calibrate_scales(params, layers, batch)

    rec_a = _branch_ctx(seed + 1, record=True)
    z_a, tape_a = forward(params, layers, batch, rec_a)
    replay_a = _branch_ctx(seed + 1, replay=rec_a.recorded)
    if loss.kind == "consistency_pair":
        rec_b = _branch_ctx(seed + 2, record=True)
        z_b, tape_b = forward(params, layers, batch, rec_b)
        replay_b = _branch_ctx(seed + 2, replay=rec_b.recorded)

    def loss_value(z_a: np.ndarray, z_b: np.ndarray | None) -> float:
        if loss.kind == "squared_error":
            return float(np.sum(np.square(z_a - loss.targets)))
        ce, _ = cross_entropy_masked_grad(z_a, loss.labels, loss.labeled_mask)
        if loss.kind == "cross_entropy":
            return ce
        return ce + loss.weight * consistency_mse(z_a, z_b)

    # Analytic gradients through every branch that depends on the parameters.
    if loss.kind == "squared_error":
        grads = backward(tape_a, 2.0 * (z_a - loss.targets))
    elif loss.kind == "cross_entropy":
        _, g = cross_entropy_masked_grad(z_a, loss.labels, loss.labeled_mask)
        grads = backward(tape_a, g)
    else:
        _, g_ce = cross_entropy_masked_grad(z_a, loss.labels, loss.labeled_mask)
        g_mse = loss.weight * consistency_mse_grad(z_a, z_b)
        grads = backward(tape_a, g_ce + g_mse)
        for key, val in backward(tape_b, -g_mse).items():
            grads[key] += val

    def eval_loss() -> float:
        za, _ = forward(params, layers, batch, replay_a)
        zb = None
        if loss.kind == "consistency_pair":
            zb, _ = forward(params, layers, batch, replay_b)
        return loss_value(za, zb)

    coords = [(key, j) for key, arr in params.tensors.items() for j in range(arr.size)]
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[int(p)] for p in picked]

    max_rel = 0.0
    for key, j in coords:
        flat = params.tensors[key].reshape(-1)
        saved = flat[j]
        flat[j] = saved + eps
        up = eval_loss()
        flat[j] = saved - eps
        down = eval_loss()
        flat[j] = saved
        numeric = (up - down) / (2.0 * eps)
        analytic = grads[key].reshape(-1)[j]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
