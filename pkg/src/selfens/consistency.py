"""Loss components and the temporal ensemble target machinery.

The supervised term is a masked cross-entropy over labeled rows. The
unsupervised term penalizes the mean square difference between two
prediction matrices, normalized by batch size times class count. The
ensemble state accumulates per-row EMAs of past predictions and serves
bias-corrected targets; per-row update counters generalize the global
epoch counter so partially updated rows (extra-pool regime) stay unbiased.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, EnsembleStartupError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def cross_entropy_masked(predictions: np.ndarray, labels: np.ndarray,
                         labeled_mask: np.ndarray) -> float:
    """Mean over labeled rows of -log p[y]; 0.0 when no row is labeled.

    `predictions` rows must be probability vectors; probabilities at the
    floor 1e-12 are clamped (logged, not fatal).
    """
    loss, _ = cross_entropy_masked_grad(predictions, labels, labeled_mask)
    return loss


def cross_entropy_masked_grad(predictions: np.ndarray, labels: np.ndarray,
                              labeled_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Masked cross-entropy and its gradient w.r.t. the predictions."""
    grad = np.zeros_like(predictions)
    rows = np.flatnonzero(labeled_mask)
    if rows.size == 0:
        return 0.0, grad
    picked = predictions[rows, labels[rows]]
    if np.any(picked < PROB_FLOOR):
        logger.warning("cross-entropy probabilities clamped at %g", PROB_FLOOR)
        picked = np.maximum(picked, PROB_FLOOR)
    loss = float(np.mean(-np.log(picked)))
    grad[rows, labels[rows]] = -1.0 / (rows.size * picked)
    return loss, grad


def consistency_mse(z: np.ndarray, z_tilde: np.ndarray) -> float:
    """(1 / (C * batch)) * sum of squared differences, over all rows."""
    if z.shape != z_tilde.shape:
        raise DataError(f"shape mismatch {z.shape} vs {z_tilde.shape}")
    d = z - z_tilde
    return float(np.mean(np.square(d)))


def consistency_mse_grad(z: np.ndarray, z_tilde: np.ndarray) -> np.ndarray:
    """Gradient of `consistency_mse` w.r.t. z: 2 (z - z_tilde) / (C * batch)."""
    if z.shape != z_tilde.shape:
        raise DataError(f"shape mismatch {z.shape} vs {z_tilde.shape}")
    return (2.0 / z.size) * (z - z_tilde)


@dataclass
class EnsembleState:
    """EMA accumulator Z (N x C) with per-row update counters.

    Rows never updated stay all-zero with counter 0. Targets are served
    bias-corrected: z_tilde_i = Z_i / (1 - alpha^t_i).
    """

    z: np.ndarray
    alpha: float
    counters: np.ndarray = field(default=None)  # type: ignore[assignment]
    epoch: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise DataError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.counters is None:
            self.counters = np.zeros(self.z.shape[0], dtype=np.int64)

    @property
    def num_rows(self) -> int:
        return self.z.shape[0]

    @property
    def num_classes(self) -> int:
        return self.z.shape[1]


def init_ensemble(n_rows: int, n_classes: int, alpha: float,
                  dtype=np.float32) -> EnsembleState:
    return EnsembleState(z=np.zeros((n_rows, n_classes), dtype=dtype), alpha=alpha)


def ensemble_update(state: EnsembleState, row_indices: np.ndarray,
                    z_rows: np.ndarray) -> EnsembleState:
    """EMA-update the named rows: Z_i <- alpha Z_i + (1 - alpha) z_i.

    Counters of the named rows advance by one; all other rows are untouched.
    """
    idx = np.asarray(row_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= state.num_rows):
        raise DataError(f"row index out of range 0..{state.num_rows - 1}")
    rows = np.asarray(z_rows, dtype=state.z.dtype)
    if rows.shape != (idx.size, state.num_classes):
        raise DataError(f"expected z rows of shape {(idx.size, state.num_classes)}, "
                        f"got {rows.shape}")
    state.z[idx] = state.alpha * state.z[idx] + (1.0 - state.alpha) * rows
    state.counters[idx] += 1
    return state


def targets_from_ensemble(state: EnsembleState, row_indices: np.ndarray) -> np.ndarray:
    """Bias-corrected target rows z_tilde_i = Z_i / (1 - alpha^t_i).

    Every requested row must have been updated at least once.
    """
    idx = np.asarray(row_indices, dtype=np.int64)
    t = state.counters[idx]
    if np.any(t < 1):
        raise EnsembleStartupError(
            "targets requested for rows with no accumulated predictions; "
            "keep the unsupervised weight at zero until rows are updated")
    correction = 1.0 - state.alpha ** t.astype(np.float64)
    return (state.z[idx] / correction[:, None].astype(state.z.dtype)).astype(state.z.dtype)


# Flat binary layout for Z, suitable for memory-mapped access:
#   magic 8 bytes b"ZENSMBL1", u64 N, u64 C, f64 alpha, u64 epoch,
#   u64 counters[N], f32 z[N*C] row-major, all little-endian.
Z_MAGIC = b"ZENSMBL1"


def save_ensemble(path: str, state: EnsembleState) -> None:
    with open(path, "wb") as f:
        f.write(Z_MAGIC)
        f.write(struct.pack("<QQdQ", state.num_rows, state.num_classes,
                            state.alpha, state.epoch))
        f.write(np.ascontiguousarray(state.counters, dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(state.z, dtype="<f4").tobytes())


def load_ensemble(path: str) -> EnsembleState:
    with open(path, "rb") as f:
        raw = f.read()
    header = len(Z_MAGIC) + 32
    if len(raw) < header:
        raise DataError(f"{path}: truncated ensemble file")
    if raw[: len(Z_MAGIC)] != Z_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:len(Z_MAGIC)]!r}, expected {Z_MAGIC!r}")
    n, c, alpha, epoch = struct.unpack_from("<QQdQ", raw, len(Z_MAGIC))
    expected = header + 8 * n + 4 * n * c
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for N={n} C={c}, "
                        f"got {len(raw)}")
    counters = np.frombuffer(raw, dtype="<u8", count=n, offset=header).astype(np.int64)
    z = np.frombuffer(raw, dtype="<f4", count=n * c, offset=header + 8 * n)
    return EnsembleState(z=z.reshape(n, c).copy(), alpha=alpha,
                         counters=counters, epoch=int(epoch))
