"""Series statistics for experiment results.

Everything here is a pure function of the row values written to rows.csv,
so any summary derived from these helpers can be recomputed exactly from
the emitted CSV (same doubles in, same doubles out).
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np


def moving_average(values: Sequence[float], window: int = 100) -> List[float]:
    """Trailing mean over up to `window` points (the head uses however many
    points exist so the output has the same length as the input)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    y = np.asarray(values, dtype=np.float64)
    if y.size == 0:
        return []
    csum = np.concatenate([[0.0], np.cumsum(y)])
    out = np.empty(y.size, dtype=np.float64)
    for i in range(y.size):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return [float(v) for v in out]


def boxplot_stats(values: Sequence[float]) -> Dict[str, float]:
    y = np.asarray(values, dtype=np.float64)
    if y.size == 0:
        raise ValueError("no values")
    q1, median, q3, p95 = (
        float(np.percentile(y, q)) for q in (25, 50, 75, 95)
    )
    return {
        "count": int(y.size),
        "mean": float(np.mean(y)),
        "median": median,
        "q1": q1,
        "q3": q3,
        "iqr": q3 - q1,
        "p95": p95,
        "outliers_above_p95": int(np.sum(y > p95)),
        "min": float(np.min(y)),
        "max": float(np.max(y)),
    }


def conservation(outcomes: Iterable[str]) -> Dict[str, int]:
    issued = forwarded = denied = errors = 0
    for outcome in outcomes:
        issued += 1
        if outcome == "forwarded":
            forwarded += 1
        elif outcome == "denied":
            denied += 1
        else:
            errors += 1
    return {
        "issued": issued,
        "forwarded": forwarded,
        "denied": denied,
        "errors": errors,
    }


def segment_phases(
    series: Sequence[float],
    max_phases: int = 3,
    min_segment: Optional[int] = None,
    improvement_threshold: float = 0.35,
) -> List[Dict[str, float]]:
    """Piecewise-constant segmentation of a (smoothed) latency series.

    Fits 1..max_phases segments by exact dynamic programming on the sum of
    squared errors; an extra phase is kept only while it reduces the
    residual SSE by at least `improvement_threshold` (so a flat series
    honestly comes back as a single phase). Returns segments as dicts with
    start (inclusive), end (exclusive), and the segment mean.
    """
    y = np.asarray(series, dtype=np.float64)
    n = int(y.size)
    if n == 0:
        raise ValueError("empty series")
    if min_segment is None:
        min_segment = max(5, n // 20)
    if max_phases < 1:
        raise ValueError("max_phases must be >= 1")
    max_k = min(max_phases, n // min_segment) if n >= min_segment else 1
    if max_k < 1:
        max_k = 1
    if max_k == 1 or n < 2 * min_segment:
        return [{"start": 0, "end": n, "mean": float(np.mean(y))}]

    s1 = np.concatenate([[0.0], np.cumsum(y)])
    s2 = np.concatenate([[0.0], np.cumsum(y * y)])

    def cost(i, j):
        length = j - i
        seg_sum = s1[j] - s1[i]
        return np.maximum((s2[j] - s2[i]) - seg_sum * seg_sum / length, 0.0)

    inf = np.inf
    dp = np.full((max_k + 1, n + 1), inf, dtype=np.float64)
    back = np.zeros((max_k + 1, n + 1), dtype=np.int64)
    dp[0, 0] = 0.0
    for k in range(1, max_k + 1):
        for j in range(k * min_segment, n + 1):
            i_lo = (k - 1) * min_segment
            i_hi = j - min_segment
            if i_hi < i_lo:
                continue
            candidates_i = np.arange(i_lo, i_hi + 1)
            candidates = dp[k - 1, candidates_i] + cost(candidates_i, j)
            best = int(np.argmin(candidates))
            dp[k, j] = candidates[best]
            back[k, j] = candidates_i[best]

    sse = {k: float(dp[k, n]) for k in range(1, max_k + 1) if np.isfinite(dp[k, n])}
    chosen = 1
    for k in range(2, max_k + 1):
        if k not in sse:
            break
        previous = sse[chosen]
        if previous <= 1e-18:
            break
        if 1.0 - sse[k] / previous >= improvement_threshold:
            chosen = k
        else:
            break

    boundaries = [n]
    j = n
    for k in range(chosen, 0, -1):
        j = int(back[k, j])
        boundaries.append(j)
    boundaries.reverse()  # [0, b1, ..., n]
    segments = []
    for start, end in zip(boundaries[:-1], boundaries[1:]):
        segments.append(
            {"start": int(start), "end": int(end), "mean": float(np.mean(y[start:end]))}
        )
    return segments


def is_monotone_segmented(
    segments: Sequence[Dict[str, float]], rel_tolerance: float = 0.05
) -> bool:
    """Non-decreasing segment means, allowing a small relative dip."""
    means = [segment["mean"] for segment in segments]
    return all(
        later >= earlier * (1.0 - rel_tolerance)
        for earlier, later in zip(means, means[1:])
    )
