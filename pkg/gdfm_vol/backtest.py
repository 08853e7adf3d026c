"""
Coverage backtests for prediction intervals

A hit is 1 when the realization falls inside [𝓛, 𝓤]. Tests follow the
Christoffersen framework (unconditional coverage, first-order Markov
independence, and their sum) plus one-sided exact binomial checks of
validity and sharpness and a McNemar comparison of two interval methods.
All likelihoods use 0·log 0 = 0.
"""

from dataclasses import dataclass, field
from typing import Dict, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special, stats

from .errors import BacktestError

DEFAULT_DELTAS = (0.1, 0.05, 0.01)


@dataclass(frozen=True, eq=False)
class HitSeries:
    """Per-evaluation-point coverage outcomes for one series and level"""

    hits: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    lengths: np.ndarray
    alpha: float

    def __post_init__(self) -> None:
        arrays = [np.asarray(a, dtype=bool) for a in (self.hits, self.upper, self.lower)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise BacktestError("hits, upper and lower must be 1-d sequences of equal length")
        total = arrays[0].astype(int) + arrays[1] + arrays[2]
        if np.any(total != 1):
            raise BacktestError("Each evaluation point must be exactly one of hit, upper or lower violation")
        object.__setattr__(self, "hits", arrays[0])
        object.__setattr__(self, "upper", arrays[1])
        object.__setattr__(self, "lower", arrays[2])
        object.__setattr__(self, "lengths", np.asarray(self.lengths, dtype=float))

    @property
    def M(self) -> int:
        return int(self.hits.size)

    @classmethod
    def from_intervals(
        cls, realized: Sequence[float], lower: Sequence[float], upper: Sequence[float], alpha: float
    ) -> "HitSeries":
        y, lo, up = (np.asarray(a, dtype=float) for a in (realized, lower, upper))
        below, above = y < lo, y > up
        return cls(~(below | above), above, below, up - lo, alpha)


HitsLike = Union[HitSeries, Sequence[int], np.ndarray]


def _hit_array(hits: HitsLike) -> np.ndarray:
    values = hits.hits if isinstance(hits, HitSeries) else np.asarray(hits)
    values = values.astype(int)
    if values.ndim != 1 or values.size == 0:
        raise BacktestError("Need a non-empty 1-d hit sequence")
    if np.any((values != 0) & (values != 1)):
        raise BacktestError("Hit sequences must be binary")
    return values


# ─────────────────────────────── Statistics ───────────────────────────────── #


def summarize(hits: HitSeries) -> Tuple[float, float, float, float]:
    """(C, V₊, V₋, L): coverage, upper and lower violation rates, mean length"""
    if hits.M < 1:
        raise BacktestError("Empty hit series")
    return (
        float(hits.hits.mean()),
        float(hits.upper.mean()),
        float(hits.lower.mean()),
        float(hits.lengths.mean()),
    )


def lr_cover(hits: HitsLike, alpha: float) -> Tuple[float, float]:
    """(n₁ − M(1−α))² / (Mα(1−α)) against χ²(1)"""
    h = _hit_array(hits)
    M, n1 = h.size, int(h.sum())
    statistic = (n1 - M * (1 - alpha)) ** 2 / (M * alpha * (1 - alpha))
    return float(statistic), float(stats.chi2.sf(statistic, 1))


def one_sided_coverage_tests(
    hits: HitsLike, alpha: float, delta: float, normal_approximation: bool = False
) -> Tuple[bool, bool]:
    """(valid, sharp): False on the side where the hit count is rejected at level δ

    Validity is rejected when n₁ falls below the δ-quantile of Bin(M, 1−α),
    sharpness when it exceeds the (1−δ)-quantile. The normal approximation
    uses (1−α) ∓ z_δ·√(α(1−α)/M) on the hit rate.
    """
    h = _hit_array(hits)
    M, n1 = h.size, int(h.sum())
    if normal_approximation:
        z = stats.norm.ppf(1 - delta)
        half = z * np.sqrt(alpha * (1 - alpha) / M)
        rate = n1 / M
        return bool(rate >= (1 - alpha) - half), bool(rate <= (1 - alpha) + half)
    low = stats.binom.ppf(delta, M, 1 - alpha)
    high = stats.binom.ppf(1 - delta, M, 1 - alpha)
    return bool(n1 >= low), bool(n1 <= high)


@dataclass(frozen=True)
class IndependenceResult:
    statistic: float
    p_value: float
    counts: Dict[str, int]
    pi: float
    pi01: float
    pi11: float
    degenerate: bool = False


def transition_counts(hits: HitsLike) -> Dict[str, int]:
    h = _hit_array(hits)
    prev, curr = h[:-1], h[1:]
    return {
        "n00": int(np.sum((prev == 0) & (curr == 0))),
        "n01": int(np.sum((prev == 0) & (curr == 1))),
        "n10": int(np.sum((prev == 1) & (curr == 0))),
        "n11": int(np.sum((prev == 1) & (curr == 1))),
    }


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def displayed_counts(hits: HitsLike) -> Dict[str, int]:
    """Counts with n₁₀ := n₁ − n₁₁ and n₀₀ := n₀ − n₀₁, n₁ and n₀ taken over all M points"""
    h = _hit_array(hits)
    c = transition_counts(h)
    n1 = int(h.sum())
    n0 = int(h.size) - n1
    return {"n00": n0 - c["n01"], "n01": c["n01"], "n10": n1 - c["n11"], "n11": c["n11"]}


IndependenceConvention = Literal["transition", "displayed"]


def lr_independence(hits: HitsLike, convention: IndependenceConvention = "transition") -> IndependenceResult:
    """LR = 2[L₁ − L₀] for a first-order Markov chain of hits against χ²(1)

    'transition' estimates every probability from the M − 1 consecutive
    pairs: π = (n₀₁ + n₁₁)/(M − 1), π₀₁ = n₀₁/(n₀₀ + n₀₁), π₁₁ = n₁₁/(n₁₀ + n₁₁).
    'displayed' uses the level-count form π = (n₀₁ + n₁₁)/M,
    π₁₁ = n₁₁/n₁ and π₀₁ = n₀₁/(M − n₁), with n₁₀ and n₀₀ from displayed_counts.
    Both are likelihood ratios of nested binomial models, so the statistic
    is never negative.
    """
    h = _hit_array(hits)
    if h.size < 2:
        raise BacktestError("Independence test needs at least two evaluation points")
    if convention == "transition":
        c = transition_counts(h)
        n00, n01, n10, n11 = c["n00"], c["n01"], c["n10"], c["n11"]
        pi = _ratio(n01 + n11, n00 + n01 + n10 + n11)
        pi01 = _ratio(n01, n00 + n01)
        pi11 = _ratio(n11, n10 + n11)
    elif convention == "displayed":
        c = displayed_counts(h)
        n00, n01, n10, n11 = c["n00"], c["n01"], c["n10"], c["n11"]
        n1 = int(h.sum())
        pi = _ratio(n01 + n11, h.size)
        pi01 = _ratio(n01, h.size - n1)
        pi11 = _ratio(n11, n1)
    else:
        raise BacktestError(f"Unknown independence convention {convention!r}")
    if np.all(h == h[0]):
        return IndependenceResult(0.0, 1.0, c, pi, pi01, pi11, degenerate=True)

    xlogy = special.xlogy
    l0 = xlogy(n00 + n10, 1 - pi) + xlogy(n01 + n11, pi)
    l1 = xlogy(n00, 1 - pi01) + xlogy(n01, pi01) + xlogy(n10, 1 - pi11) + xlogy(n11, pi11)
    statistic = float(2 * (l1 - l0))
    return IndependenceResult(statistic, float(stats.chi2.sf(max(statistic, 0.0), 1)), c, pi, pi01, pi11)


def lr_combined(
    hits: HitsLike, alpha: float, convention: IndependenceConvention = "transition"
) -> Tuple[float, float]:
    """LR_cover + LR_ind against χ²(2)"""
    cover, _ = lr_cover(hits, alpha)
    statistic = cover + lr_independence(hits, convention).statistic
    return float(statistic), float(stats.chi2.sf(max(statistic, 0.0), 2))


@dataclass(frozen=True)
class McNemarResult:
    n12: int
    n21: int
    p_a_better: float
    p_b_better: float
    no_information: bool = False
    delta: float = 0.05

    def decision(self, delta: Optional[float] = None) -> str:
        """'a', 'b' or '' for the method with significantly more coverage at level δ

        δ defaults to the level the test was run at.
        """
        level = self.delta if delta is None else delta
        if self.p_a_better < level:
            return "a"
        if self.p_b_better < level:
            return "b"
        return ""

    @property
    def winner(self) -> str:
        return self.decision()


def mcnemar(hits_a: HitsLike, hits_b: HitsLike, delta: float = 0.05) -> McNemarResult:
    """Exact one-sided McNemar tests on discordant coverage outcomes

    n₁₂ counts points covered by a and missed by b. Conditional on
    n_disc = n₁₂ + n₂₁, n₁₂ ~ Bin(n_disc, 1/2) under equal coverage.
    `delta` is stored on the result and decides `winner`; the p-values
    themselves do not depend on it.
    """
    if not 0 < delta < 1:
        raise BacktestError(f"delta must lie in (0, 1), got {delta}")
    a, b = _hit_array(hits_a), _hit_array(hits_b)
    if a.size != b.size:
        raise BacktestError(f"Hit sequences differ in length: {a.size} vs {b.size}")
    n12 = int(np.sum((a == 1) & (b == 0)))
    n21 = int(np.sum((a == 0) & (b == 1)))
    n_disc = n12 + n21
    if n_disc == 0:
        return McNemarResult(0, 0, 1.0, 1.0, no_information=True, delta=delta)
    return McNemarResult(
        n12,
        n21,
        float(stats.binom.sf(n12 - 1, n_disc, 0.5)),
        float(stats.binom.sf(n21 - 1, n_disc, 0.5)),
        delta=delta,
    )


def sidak_threshold(delta: float, n_tests: int) -> float:
    """Per-test level keeping the family-wise level at δ over independent tests"""
    return float(1 - (1 - delta) ** (1 / n_tests))


# ─────────────────────────────── Full backtest ────────────────────────────── #


@dataclass(frozen=True)
class BacktestResult:
    alpha: float
    M: int
    coverage: float
    upper_rate: float
    lower_rate: float
    mean_length: float
    lr_cover: float
    p_cover: float
    lr_ind: float
    p_ind: float
    lr_cc: float
    p_cc: float
    independence: IndependenceResult
    decisions: Dict[float, Dict[str, bool]] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        row: Dict[str, float] = {
            "alpha": self.alpha,
            "M": self.M,
            "C": self.coverage,
            "V_plus": self.upper_rate,
            "V_minus": self.lower_rate,
            "L": self.mean_length,
            "LR_cover": self.lr_cover,
            "p_cover": self.p_cover,
            "LR_ind": self.lr_ind,
            "p_ind": self.p_ind,
            "LR_cc": self.lr_cc,
            "p_cc": self.p_cc,
            "pi": self.independence.pi,
            "pi01": self.independence.pi01,
            "pi11": self.independence.pi11,
            **self.independence.counts,
        }
        for delta, flags in self.decisions.items():
            for name, value in flags.items():
                row[f"{name}@{delta:g}"] = float(value)
        return row


def backtest(
    hits: HitSeries, deltas: Sequence[float] = DEFAULT_DELTAS, normal_approximation: bool = False
) -> BacktestResult:
    """Every coverage statistic and decision for one hit series"""
    coverage, upper, lower, length = summarize(hits)
    cover, p_cover = lr_cover(hits, hits.alpha)
    independence = lr_independence(hits)
    cc, p_cc = lr_combined(hits, hits.alpha)
    decisions: Dict[float, Dict[str, bool]] = {}
    for delta in deltas:
        valid, sharp = one_sided_coverage_tests(hits, hits.alpha, delta, normal_approximation)
        decisions[delta] = {
            "reject_validity": not valid,
            "reject_sharpness": not sharp,
            "reject_cover": p_cover < delta,
            "reject_ind": independence.p_value < delta,
            "reject_cc": p_cc < delta,
        }
    return BacktestResult(
        alpha=hits.alpha,
        M=hits.M,
        coverage=coverage,
        upper_rate=upper,
        lower_rate=lower,
        mean_length=length,
        lr_cover=cover,
        p_cover=p_cover,
        lr_ind=independence.statistic,
        p_ind=independence.p_value,
        lr_cc=cc,
        p_cc=p_cc,
        independence=independence,
        decisions=decisions,
    )


def report(results: Mapping[Tuple[str, float, object], BacktestResult]) -> pd.DataFrame:
    """One row per (series, α, window) plus a cross-sectional mean row per (α, window)"""
    rows = []
    for (series, alpha, window), result in results.items():
        rows.append({"series": series, "window": "all" if window is None else window, **result.as_row()})
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    numeric = [c for c in frame.columns if c not in ("series", "window", "alpha")]
    means = frame.groupby(["alpha", "window"], sort=False)[numeric].mean().reset_index()
    means.insert(0, "series", "mean")
    return pd.concat([frame, means[frame.columns]], ignore_index=True)
