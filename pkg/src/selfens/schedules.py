"""Time-dependent training scalars: ramp curves, unsupervised weight,
learning rate, and the annealed Adam beta1. All functions are pure and
operate at epoch granularity."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass
class ScheduleConfig:
    """Scalar schedule knobs. Defaults follow the reference recipe:
    300 epochs, 80-epoch ramp-up, 50-epoch ramp-down, lr 0.003,
    beta1 annealed 0.9 -> 0.5, beta2 0.999."""

    total_epochs: int = 300
    rampup_epochs: int = 80
    rampdown_epochs: int = 50
    w_max: float = 100.0
    lr_max: float = 0.003
    beta1_start: float = 0.9
    beta1_end: float = 0.5
    beta2: float = 0.999
    temporal_first_epoch_zero: bool = True

    def validate(self) -> None:
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be >= 1")
        if self.rampup_epochs < 0 or self.rampdown_epochs < 0:
            raise ConfigurationError("ramp lengths must be >= 0")
        if self.rampup_epochs + self.rampdown_epochs > self.total_epochs:
            raise ConfigurationError(
                "rampup_epochs + rampdown_epochs must not exceed total_epochs")
        if self.w_max < 0:
            raise ConfigurationError("w_max must be >= 0")
        if self.lr_max <= 0:
            raise ConfigurationError("lr_max must be > 0")
        if not 0.0 < self.beta2 < 1.0:
            raise ConfigurationError("beta2 must lie in (0, 1)")


def rampup(epoch: int, rampup_epochs: int) -> float:
    """Gaussian ramp-up exp(-5 (1-T)^2), T advancing linearly 0 -> 1.

    A zero-length ramp returns 1 for all epochs.
    """
    if epoch < 0:
        raise ConfigurationError("epoch must be >= 0")
    if rampup_epochs == 0:
        return 1.0
    t = min(epoch / rampup_epochs, 1.0)
    return math.exp(-5.0 * (1.0 - t) ** 2)


def rampdown(epoch: int, total_epochs: int, rampdown_epochs: int) -> float:
    """Time-reversed Gaussian ramp-down exp(-12.5 T^2) over the final
    `rampdown_epochs`; 1 before the ramp starts."""
    if epoch > total_epochs:
        raise ConfigurationError("epoch must not exceed total_epochs")
    start = total_epochs - rampdown_epochs
    if rampdown_epochs == 0 or epoch <= start:
        return 1.0
    t = (epoch - start) / rampdown_epochs
    return math.exp(-12.5 * t * t)


def unsup_weight(epoch: int, cfg: ScheduleConfig, m_labeled: int, n_total: int,
                 algo: str = "pi") -> float:
    """Unsupervised loss weight w(epoch) = w_max * (M/N) * rampup(epoch).

    Temporal ensembling has no targets on the first epoch, so w(0) = 0
    there regardless of the ramp value.
    """
    if not 0 < m_labeled <= n_total:
        raise ConfigurationError(
            f"labeled count {m_labeled} must satisfy 0 < M <= N ({n_total})")
    if algo == "temporal" and cfg.temporal_first_epoch_zero and epoch == 0:
        return 0.0
    return cfg.w_max * (m_labeled / n_total) * rampup(epoch, cfg.rampup_epochs)


def learning_rate(epoch: int, cfg: ScheduleConfig) -> float:
    """lr(epoch) = lr_max * rampup * rampdown."""
    return (cfg.lr_max * rampup(epoch, cfg.rampup_epochs)
            * rampdown(epoch, cfg.total_epochs, cfg.rampdown_epochs))


def adam_beta1(epoch: int, cfg: ScheduleConfig) -> float:
    """beta1 annealed from beta1_start to beta1_end through the ramp-down curve."""
    r = rampdown(epoch, cfg.total_epochs, cfg.rampdown_epochs)
    return cfg.beta1_end + (cfg.beta1_start - cfg.beta1_end) * r
