"""Non-learned baseline motion analyses and nonparametric statistics.

The baseline analyses normalize recordings to a 170 cm standing height
and a body-relative frame (yaw-aligned, head-centered in x/z) before
measuring hand-over-head frequency and gaze pitch.

Statistical tests are implemented directly (mid-rank ties, exact
enumeration for small Wilcoxon samples) with scipy used only for
distribution functions; independent scipy implementations serve as test
oracles, not as the computation path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps

from .errors import ConfigurationError, InvalidInputError
from .geometry import MotionRecording, forward_vectors, pitch_angles, qaxis_angle, qrotate


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test."""

    statistic: float
    p_value: float
    df: int | None = None
    effect_size: float | None = None
    method: str = ""

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise InvalidInputError(f"p-value {self.p_value} outside [0, 1]")


@dataclass(frozen=True)
class BaselineRow:
    """Baseline motion measures for one (user, condition) recording."""

    user_id: str
    condition: str
    hand_over_head_fraction: float
    pitch_mean_deg: float
    pitch_sd_deg: float


STANDARD_HEIGHT_M = 1.70


def body_relative_positions(rec: MotionRecording, scale: float = 1.0):
    """Scale, yaw-align to the head's forward direction, center x/z on the head.

    Returns (hmd, left, right) arrays of shape (n, 3). The vertical axis is
    untouched by the alignment, so heights stay comparable.
    """
    fwd = forward_vectors(rec.hmd_rot)
    yaw = np.arctan2(fwd[:, 0], fwd[:, 2])
    align = qaxis_angle([0.0, 1.0, 0.0], -yaw)
    center = rec.hmd_pos * scale
    out = []
    for pos in (rec.hmd_pos, rec.left_pos, rec.right_pos):
        p = pos * scale
        p = p - np.stack([center[:, 0], np.zeros(len(p)), center[:, 2]], axis=1)
        out.append(qrotate(align, p))
    return tuple(out)


def hand_over_head_fraction(rec: MotionRecording, real_height_cm: float) -> float:
    """Fraction of frames with either hand above the standardized head height.

    All positions are scaled by 170/real_height_cm (the measured body
    height, not the headset height) and expressed body-relatively; a hand
    counts when its vertical coordinate exceeds 1.70 m.
    """
    if real_height_cm is None or not real_height_cm > 0:
        raise InvalidInputError("real_height_cm must be a positive body height")
    scale = 100.0 * STANDARD_HEIGHT_M / real_height_cm
    _, left, right = body_relative_positions(rec, scale=scale)
    above = (left[:, 1] > STANDARD_HEIGHT_M) | (right[:, 1] > STANDARD_HEIGHT_M)
    return float(np.mean(above))


def head_pitch_stats(rec: MotionRecording) -> tuple[float, float]:
    """Mean and standard deviation of head pitch in degrees (positive = down)."""
    pitch = pitch_angles(rec.hmd_rot)
    return float(np.mean(pitch)), float(np.std(pitch))


def compute_baseline(recordings: list[MotionRecording]) -> list[BaselineRow]:
    rows = []
    for rec in recordings:
        frac = hand_over_head_fraction(rec, rec.height_cm)
        mean, sd = head_pitch_stats(rec)
        rows.append(BaselineRow(rec.user_id, rec.condition, frac, mean, sd))
    return rows


def baseline_matrix(rows: list[BaselineRow], field: str,
                    conditions: list[str]) -> tuple[list[str], np.ndarray]:
    """Arrange one baseline measure as a users x conditions matrix."""
    users = sorted({r.user_id for r in rows})
    lookup = {(r.user_id, r.condition): getattr(r, field) for r in rows}
    try:
        matrix = np.array([[lookup[(u, c)] for c in conditions] for u in users])
    except KeyError as exc:
        raise InvalidInputError(f"missing baseline cell for {exc.args[0]}") from None
    return users, matrix


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def friedman_test(values: np.ndarray) -> TestResult:
    """Friedman rank test over a users x conditions matrix.

    chi2 = 12/(n k (k+1)) * sum_j R_j^2 - 3 n (k+1) with mid-rank ties,
    df = k-1, and Kendall's W = chi2 / (n (k-1)) as the effect size.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidInputError("friedman_test expects a 2-D users x conditions matrix")
    n, k = values.shape
    if n < 2 or k < 2:
        raise InvalidInputError(f"friedman_test needs >= 2 users and >= 2 conditions, got {n}x{k}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("friedman_test matrix has missing or non-finite cells")
    ranks = _sps.rankdata(values, axis=1)
    col_sums = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(np.sum(col_sums**2)) - 3.0 * n * (k + 1)
    chi2 = max(chi2, 0.0)
    df = k - 1
    p = float(_sps.chi2.sf(chi2, df)) if chi2 > 0 else 1.0
    w = chi2 / (n * (k - 1))
    return TestResult(statistic=chi2, p_value=p, df=df, effect_size=w, method="friedman")


def _signed_rank_scores(x, y, weights):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InvalidInputError("wilcoxon needs two equal-length 1-D samples of size >= 2")
    d = x - y
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != x.shape:
            raise InvalidInputError("weights must match the sample length")
        if np.any(weights <= 0):
            raise InvalidInputError("weights must be positive")
    nz = d != 0.0
    d = d[nz]
    if d.size == 0:
        raise InvalidInputError("all differences are zero; the test is degenerate")
    w = weights[nz] if weights is not None else np.ones_like(d)
    ranks = _sps.rankdata(np.abs(d))
    return d, w * ranks


def wilcoxon_signed_rank(x, y, weights=None) -> TestResult:
    """Wilcoxon signed-rank test (two-sided); zero differences are dropped.

    Statistic is W+ (possibly weighted: per-pair weights scale the rank
    scores). Exact enumeration over all 2^n sign patterns for n <= 12,
    tie-corrected normal approximation otherwise. The effect size
    r = z / sqrt(n) always uses the normal-approximation z.
    """
    d, scores = _signed_rank_scores(x, y, weights)
    n = d.size
    w_plus = float(scores[d > 0].sum())

    total = float(scores.sum())
    var = float(np.sum(scores**2)) / 4.0
    z = (w_plus - total / 2.0) / math.sqrt(var)
    effect = z / math.sqrt(n)

    if n <= 12:
        sums = np.zeros(1)
        for s in scores:
            sums = np.concatenate([sums, sums + s])
        eps = 1e-12
        p_le = float(np.mean(sums <= w_plus + eps))
        p_ge = float(np.mean(sums >= w_plus - eps))
        p = min(1.0, 2.0 * min(p_le, p_ge))
        method = "wilcoxon-exact"
    else:
        p = float(2.0 * _sps.norm.sf(abs(z)))
        method = "wilcoxon-approx"
    return TestResult(statistic=w_plus, p_value=p, df=None, effect_size=effect, method=method)


def signed_rank_null_distribution(x, y, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """All 2^n equally likely values of W+ under the null, with probabilities."""
    _, scores = _signed_rank_scores(x, y, weights)
    sums = np.zeros(1)
    for s in scores:
        sums = np.concatenate([sums, sums + s])
    return sums, np.full(sums.shape, 1.0 / sums.size)


def bonferroni(p_values, m: int | None = None) -> list[float]:
    """Multiply each p-value by m (default: the family size) and clamp at 1."""
    p_values = list(p_values)
    if m is None:
        m = len(p_values)
    if m < len(p_values):
        raise ConfigurationError(f"m={m} smaller than the number of p-values ({len(p_values)})")
    return [min(1.0, p * m) for p in p_values]


def contrast_groups(values_a: np.ndarray, values_b: np.ndarray,
                    weight_a: float, weight_b: float) -> dict[str, TestResult]:
    """Paired contrast between two level groups' per-user rates.

    The weighted variant scales every pair's rank by the combined group
    cell count; with one pair per user that weight is constant, so the
    weighted statistic standardizes to the unweighted one. Both are
    reported.
    """
    values_a = np.asarray(values_a, dtype=np.float64)
    values_b = np.asarray(values_b, dtype=np.float64)
    pair_weight = np.full(values_a.shape, (weight_a + weight_b) / 2.0)
    return {
        "weighted": wilcoxon_signed_rank(values_a, values_b, weights=pair_weight),
        "unweighted": wilcoxon_signed_rank(values_a, values_b),
    }
