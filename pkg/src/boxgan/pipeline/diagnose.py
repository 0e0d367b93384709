"""Rule-based reading of the critic/generator balance from a metrics window."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import MetricsLog

CRITIC_DOMINANT = "critic_dominant"
WEAK_CRITIC = "weak_critic"
BALANCED = "balanced"


class DiagnosisError(ValueError):
    pass


@dataclass(frozen=True)
class BalanceThresholds:
    """Defaults for diagnose_balance.

    gap_slope: minimum per-iteration growth of (real - fake) for critic_dominant.
    gen_slope: the generator loss counts as non-improving when its slope is at least -gen_slope.
    band: the 95th percentile of |real|, |fake| and |real - fake| must stay below this for weak_critic.
    """

    gap_slope: float = 2e-3
    gen_slope: float = 1e-3
    band: float = 0.05


def _slope(y: np.ndarray) -> float:
    x = np.arange(len(y), dtype=np.float64)
    return float(np.polyfit(x, y, 1)[0])


def diagnose_balance(log: MetricsLog, window: int, thresholds: BalanceThresholds = BalanceThresholds()) -> str:
    """Classify the last ``window`` rows as critic_dominant, weak_critic or balanced."""
    if window < 2:
        raise DiagnosisError("window must cover at least 2 iterations")
    if window > len(log):
        raise DiagnosisError(f"window {window} exceeds log length {len(log)}")
    rows = log.rows[-window:]
    real = np.array([r.real_score for r in rows])
    fake = np.array([r.fake_score for r in rows])
    gen = np.array([r.gen_loss for r in rows])
    gap = real - fake
    if gap.mean() > 0 and _slope(gap) > thresholds.gap_slope and _slope(gen) >= -thresholds.gen_slope:
        return CRITIC_DOMINANT
    q = lambda a: float(np.quantile(np.abs(a), 0.95))  # noqa: E731
    if max(q(real), q(fake), q(gap)) <= thresholds.band:
        return WEAK_CRITIC
    return BALANCED
