"""Stochastic input transformations and dataset-level preprocessing.

Augmentation works on batches: integer translations with zero fill,
horizontal flips, additive Gaussian noise. `apply_pair` produces the two
branch realizations for paired-evaluation training and honors the flip
pairing policy (translations and noise are always drawn independently per
branch; 'shared_per_pair' pins the flip decision across the pair).

Preprocessing: ZCA whitening (fit once on the training inputs) and
per-image standardization to zero mean, unit variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class AugmentPolicy:
    """Per-branch stochastic input transform.

    translate: shifts drawn uniformly from [-translate, translate] pixels
    per axis. flip: horizontal mirror with probability 1/2. noise_sigma:
    i.i.d. additive Gaussian. pairing: 'independent' or 'shared_per_pair'
    (flip decided once per pair).
    """

    translate: int = 0
    flip: bool = False
    noise_sigma: float = 0.0
    pairing: str = "independent"

    def validate(self) -> None:
        if self.translate < 0:
            raise ConfigurationError("translate range must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.pairing not in ("independent", "shared_per_pair"):
            raise ConfigurationError(f"unknown pairing policy '{self.pairing}'")

    @property
    def active(self) -> bool:
        return self.translate > 0 or self.flip or self.noise_sigma > 0


def _translate_batch(x: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Shift each item by integer (dy, dx) with zero fill outside."""
    out = np.zeros_like(x)
    h, w = x.shape[-2], x.shape[-1]
    for i, (dy, dx) in enumerate(shifts):
        ys_src = slice(max(0, -dy), min(h, h - dy))
        ys_dst = slice(max(0, dy), min(h, h + dy))
        xs_src = slice(max(0, -dx), min(w, w - dx))
        xs_dst = slice(max(0, dx), min(w, w + dx))
        out[i, ..., ys_dst, xs_dst] = x[i, ..., ys_src, xs_src]
    return out


def apply(policy: AugmentPolicy, batch: np.ndarray,
          rng: np.random.Generator) -> np.ndarray:
    """Augment one batch. Draw order is fixed (translations, flips, noise)
    and a disabled transform draws nothing, so pair application can share
    flip decisions without perturbing the other draws."""
    out, _ = _apply_with(policy, batch, rng, shared_flips=None)
    return out


def _apply_with(policy: AugmentPolicy, batch: np.ndarray, rng: np.random.Generator,
                shared_flips: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    policy.validate()
    x = batch
    flips = None
    if policy.translate > 0:
        if x.ndim < 3:
            raise ConfigurationError("translation needs image inputs (.., H, W)")
        h, w = x.shape[-2], x.shape[-1]
        if policy.translate >= h or policy.translate >= w:
            raise ConfigurationError(
                f"translation range {policy.translate} exceeds image extent {h}x{w}")
        shifts = rng.integers(-policy.translate, policy.translate + 1,
                              size=(x.shape[0], 2))
        x = _translate_batch(x, shifts)
    if policy.flip:
        if x.ndim < 3:
            raise ConfigurationError("horizontal flip needs image inputs (.., H, W)")
        flips = shared_flips if shared_flips is not None else rng.random(x.shape[0]) < 0.5
        x = x.copy() if x is batch else x
        x[flips] = x[flips, ..., ::-1]
    if policy.noise_sigma > 0:
        x = x + rng.normal(0.0, policy.noise_sigma, size=x.shape).astype(x.dtype)
    if x is batch:
        x = x.copy()
    return x, flips


def apply_pair(policy: AugmentPolicy, batch: np.ndarray, rng_a: np.random.Generator,
               rng_b: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two branch realizations of one batch.

    Branch a consumes rng_a exactly as `apply` would, so a single-branch
    run and the first branch of a paired run see identical draws.
    """
    branch_a, flips = _apply_with(policy, batch, rng_a, shared_flips=None)
    shared = flips if policy.pairing == "shared_per_pair" else None
    branch_b, _ = _apply_with(policy, batch, rng_b, shared_flips=shared)
    return branch_a, branch_b


@dataclass
class ZcaTransform:
    """Whitening transform fitted on a training set: x -> (x - mean) @ matrix."""

    mean: np.ndarray
    matrix: np.ndarray
    epsilon: float
    item_shape: tuple[int, ...]


def zca_fit(inputs: np.ndarray, epsilon: float = 1e-5) -> ZcaTransform:
    """Fit ZCA whitening on flattened inputs.

    epsilon regularizes the eigenvalues; with epsilon 0 a (near-)singular
    covariance is an error.
    """
    item_shape = inputs.shape[1:]
    flat = inputs.reshape(inputs.shape[0], -1).astype(np.float64)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / flat.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)
    if epsilon <= 0 and evals.min() < 1e-10 * max(1.0, evals.max()):
        raise DataError("singular covariance; supply epsilon > 0 or more varied data")
    matrix = (evecs * (1.0 / np.sqrt(evals + epsilon))) @ evecs.T
    return ZcaTransform(mean=mean.astype(np.float32),
                        matrix=matrix.astype(np.float32),
                        epsilon=epsilon, item_shape=tuple(item_shape))


def zca_apply(transform: ZcaTransform, inputs: np.ndarray) -> np.ndarray:
    flat = inputs.reshape(inputs.shape[0], -1)
    if flat.shape[1] != transform.mean.shape[0]:
        raise DataError(f"input dimension {flat.shape[1]} does not match "
                        f"fitted transform ({transform.mean.shape[0]})")
    out = (flat - transform.mean) @ transform.matrix
    return out.reshape(inputs.shape[0], *transform.item_shape).astype(np.float32)


def save_zca(path: str, transform: ZcaTransform) -> None:
    tensorio.save_tensors(path, {
        "mean": transform.mean,
        "matrix": transform.matrix,
        "epsilon": np.array([transform.epsilon], dtype=np.float32),
        "item_shape": np.array(transform.item_shape, dtype=np.float32),
    })


def load_zca(path: str) -> ZcaTransform:
    records = tensorio.load_tensors(path)
    return ZcaTransform(mean=records["mean"], matrix=records["matrix"],
                        epsilon=float(records["epsilon"][0]),
                        item_shape=tuple(int(v) for v in records["item_shape"]))


def standardize_per_image(inputs: np.ndarray, variance_floor: float = 1e-8) -> np.ndarray:
    """Bias and scale each item to zero mean, unit variance over its own
    pixels. Constant items hit the variance floor and come out all zero."""
    flat = inputs.reshape(inputs.shape[0], -1).astype(np.float64)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    std = np.maximum(std, variance_floor)
    out = (flat - mean) / std
    return out.reshape(inputs.shape).astype(np.float32)
