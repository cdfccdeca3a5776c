"""Measurement utilities shared by the oracles and the acceptance suite.

Statistical gates use exact tests only; desk-scale counts are too small
for normal approximations to be trustworthy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import json

import numpy as np
from scipy import stats


def tv_distance(empirical: dict, reference: dict) -> float:
    """Total-variation distance 0.5 * sum |p - q| over a shared support."""
    if set(empirical) != set(reference):
        raise ValueError("distributions must share a support")
    return 0.5 * sum(abs(empirical[k] - reference[k]) for k in reference)


def binomial_test(successes: int, trials: int, p0: float, alpha: float) -> bool:
    """Exact two-sided binomial test; True = consistent with p0 at level alpha."""
    if not 0 <= successes <= trials:
        raise ValueError("successes must be within [0, trials]")
    pval = stats.binomtest(successes, trials, p0, alternative="two-sided").pvalue
    return pval > alpha


def binomial_bounds(trials: int, p0: float, alpha: float) -> tuple[int, int]:
    """Smallest central interval [lo, hi] with P(lo <= X <= hi) >= 1 - alpha."""
    lo = int(stats.binom.ppf(alpha / 2, trials, p0))
    hi = int(stats.binom.ppf(1 - alpha / 2, trials, p0))
    while stats.binom.cdf(hi, trials, p0) - stats.binom.cdf(lo - 1, trials, p0) < 1 - alpha:
        lo = max(0, lo - 1)
        hi = min(trials, hi + 1)
    return lo, hi


@dataclass
class MetricsReport:
    config_hash: str
    seed: int
    interval: str = "full run"
    agreement_fraction: float | None = None
    validity: bool | None = None
    good_tokens: int | None = None
    bad_tokens: int | None = None
    boundary_crossings: int | None = None
    tv_distance: float | None = None
    simulated_rounds: int | None = None
    wall_clock_s: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def aggregate(reports: list[MetricsReport]) -> dict:
    """Associative per-metric summary (mean and quartiles) across seeds."""
    if not reports:
        raise ValueError("no reports")
    if len({r.config_hash for r in reports}) != 1:
        raise ValueError("reports come from mixed configs")
    numeric = ["agreement_fraction", "good_tokens", "bad_tokens",
               "boundary_crossings", "tv_distance", "simulated_rounds"]
    summary: dict = {"config_hash": reports[0].config_hash, "runs": len(reports)}
    for name in numeric:
        vals = sorted(getattr(r, name) for r in reports if getattr(r, name) is not None)
        if vals:
            arr = np.array(vals, dtype=float)
            summary[name] = {
                "mean": float(arr.mean()),
                "q25": float(np.quantile(arr, 0.25)),
                "q50": float(np.quantile(arr, 0.50)),
                "q75": float(np.quantile(arr, 0.75)),
            }
    return summary
