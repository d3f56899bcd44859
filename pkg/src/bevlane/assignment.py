"""Row-grid resampling of 2D lanes and one-to-one lane assignment.

Lanes are compared on a shared grid of image rows. The cost between two
resampled lanes is the mean horizontal distance over the rows both
cover, plus the vertical distance between their start rows and between
their end rows. Assignment minimizes total cost one-to-one and drops
pairs at or above a cost threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .camera import ImageSpec, Lane2D
from .errors import DegenerateLaneError, GridMismatchError, ValidationError

DEFAULT_MATCH_THRESHOLD = 30.0


def first_crossings(points: np.ndarray, rows: np.ndarray):
    """Find where a polyline first crosses each of the given image rows.

    Scanning segments in point order, a segment [p_i, p_i+1] covers row r
    when r lies within its v-interval (inclusive). The first covering
    segment wins; within it the crossing sits at fraction
    t = (r - v_i) / (v_i+1 - v_i), with t = 0 for a segment lying exactly
    on the row. Returns (found, seg_index, t) arrays over rows.
    """
    v = points[:, 1]
    va, vb = v[:-1], v[1:]
    r = rows[:, None]
    lo = np.minimum(va, vb)[None, :]
    hi = np.maximum(va, vb)[None, :]
    covers = (lo <= r) & (r <= hi)
    found = covers.any(axis=1)
    seg = np.argmax(covers, axis=1)
    dv = vb[seg] - va[seg]
    safe_dv = np.where(dv == 0.0, 1.0, dv)
    t = np.where(dv == 0.0, 0.0, (rows - va[seg]) / safe_dv)
    t = np.clip(t, 0.0, 1.0)
    return found, seg, t


@dataclass(frozen=True)
class ResampledLane2D:
    """A 2D lane sampled at fixed image rows.

    v_grid is shared across lanes of a frame; present marks rows the lane
    covers and u_values holds the interpolated column there (NaN
    elsewhere). v_start / v_end are the nearest / farthest present grid
    rows, while v_first / v_last keep the polyline's own continuous
    endpoint rows for endpoint comparisons that need sub-row precision.
    """

    v_grid: np.ndarray
    u_values: np.ndarray
    present: np.ndarray
    v_start: float
    v_end: float
    v_first: float
    v_last: float

    def __post_init__(self):
        for name in ("v_grid", "u_values", "present"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if not (self.v_grid.shape == self.u_values.shape == self.present.shape):
            raise ValidationError("grid, values and presence must share one shape")
        if not self.present.any():
            raise ValidationError("a resampled lane must cover at least one row")


def row_grid(image: ImageSpec, row_step: float = 1.0) -> np.ndarray:
    """Rows 0, row_step, 2*row_step, ... up to the last image row."""
    if row_step <= 0.0:
        raise ValidationError(f"row_step must be > 0, got {row_step}")
    count = int(np.floor((image.height - 1) / row_step + 1e-9)) + 1
    return np.arange(count) * row_step


def resample_lane(lane: Lane2D, image: ImageSpec, row_step: float = 1.0) -> ResampledLane2D:
    """Sample a lane's u at each grid row its polyline covers.

    Interpolation is linear along the polyline; where uneven ground folds
    the projection so a row is crossed several times, the crossing
    nearest the lane's near end is used. Raises DegenerateLaneError when
    the polyline covers no grid row at all.
    """
    rows = row_grid(image, row_step)
    found, seg, t = first_crossings(lane.points, rows)
    if not found.any():
        raise DegenerateLaneError(
            f"lane spanning v in [{lane.v.min():.2f}, {lane.v.max():.2f}] "
            f"covers no row of a {row_step}-step grid"
        )
    u = lane.u
    u_values = np.where(found, (1.0 - t) * u[seg] + t * u[seg + 1], np.nan)
    present_rows = rows[found]
    return ResampledLane2D(
        v_grid=rows,
        u_values=u_values,
        present=found,
        v_start=float(present_rows.max()),
        v_end=float(present_rows.min()),
        v_first=float(lane.v[0]),
        v_last=float(lane.v[-1]),
    )


def matching_cost(p: ResampledLane2D, g: ResampledLane2D) -> float:
    """Mean |u_p - u_g| over shared rows plus start- and end-row distances.

    Returns +inf when the two lanes share no grid row.
    """
    if p.v_grid.shape != g.v_grid.shape or not np.array_equal(p.v_grid, g.v_grid):
        raise GridMismatchError("lanes were resampled on different row grids")
    common = p.present & g.present
    if not common.any():
        return float("inf")
    horizontal = float(np.mean(np.abs(p.u_values[common] - g.u_values[common])))
    return horizontal + abs(p.v_start - g.v_start) + abs(p.v_end - g.v_end)


def cost_matrix(preds: list[ResampledLane2D], gts: list[ResampledLane2D]) -> np.ndarray:
    """Pairwise matching costs, shape (len(preds), len(gts))."""
    costs = np.empty((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            costs[i, j] = matching_cost(p, g)
    return costs


@dataclass(frozen=True)
class MatchResult:
    """One-to-one assignment: matched (pred, gt, cost) triples and leftovers."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_predictions: tuple[int, ...]
    unmatched_ground_truths: tuple[int, ...]

    def pair_map(self) -> dict[int, int]:
        return {i: j for i, j, _ in self.pairs}


def hungarian_assign(costs: np.ndarray, match_threshold: float = DEFAULT_MATCH_THRESHOLD) -> MatchResult:
    """Minimum-total-cost one-to-one assignment with a cost cutoff.

    costs is a (P, G) matrix of non-negative entries; +inf marks
    impossible pairs. Pairs whose cost is >= match_threshold are dropped
    from the result. An empty side yields an all-unmatched result.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 2:
        raise ValidationError(f"cost matrix must be 2-d, got shape {costs.shape}")
    n_pred, n_gt = costs.shape
    if n_pred == 0 or n_gt == 0:
        return MatchResult(
            pairs=(),
            unmatched_predictions=tuple(range(n_pred)),
            unmatched_ground_truths=tuple(range(n_gt)),
        )
    if np.isnan(costs).any() or (costs < 0.0).any():
        raise ValidationError("costs must be non-negative and not NaN")

    # Pad to square with a constant so the rectangular problem keeps its
    # argmin, and stand in for +inf with a finite value that dominates any
    # full assignment.
    side = max(n_pred, n_gt)
    finite = costs[np.isfinite(costs)]
    pad_value = match_threshold if np.isfinite(match_threshold) else 0.0
    top = max(float(finite.max(initial=0.0)), pad_value, 1.0)
    big = (top + 1.0) * (side + 1)
    work = np.full((side, side), pad_value)
    work[:n_pred, :n_gt] = np.where(np.isfinite(costs), costs, big)

    row_idx, col_idx = linear_sum_assignment(work)
    pairs = []
    for i, j in zip(row_idx, col_idx):
        if i < n_pred and j < n_gt and costs[i, j] < match_threshold:
            pairs.append((int(i), int(j), float(costs[i, j])))
    matched_p = {i for i, _, _ in pairs}
    matched_g = {j for _, j, _ in pairs}
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_predictions=tuple(i for i in range(n_pred) if i not in matched_p),
        unmatched_ground_truths=tuple(j for j in range(n_gt) if j not in matched_g),
    )


def match_lanes(
    preds: list[Lane2D],
    gts: list[Lane2D],
    image: ImageSpec,
    row_step: float = 1.0,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> MatchResult:
    """Resample both lane sets on the image row grid and assign them.

    Lanes that cover no grid row cannot be matched; they are kept in the
    index space and reported unmatched.
    """
    def resample_all(lanes):
        out = []
        for lane in lanes:
            try:
                out.append(resample_lane(lane, image, row_step))
            except DegenerateLaneError:
                out.append(None)
        return out

    rp = resample_all(preds)
    rg = resample_all(gts)
    costs = np.full((len(preds), len(gts)), np.inf)
    for i, p in enumerate(rp):
        if p is None:
            continue
        for j, g in enumerate(rg):
            if g is None:
                continue
            costs[i, j] = matching_cost(p, g)
    return hungarian_assign(costs, match_threshold)
