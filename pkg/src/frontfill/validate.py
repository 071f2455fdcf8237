"""Independent oracles for fill output: spacing, containment, coverage, repair.

These validators never touch the spatial tree used during the fill; the
spacing check is an exact all-pairs scan for small inputs and a uniform-grid
bucketing (cell side = the largest local spacing) for large ones. Any pair
closer than the smaller of its two local spacings lies within one bucket of
itself, so the two methods find identical violation sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .geometry import Domain, Spacing

#: Relative slack below which a pair distance counts as violating.
SPACING_SLACK = 1e-9

#: Largest point count scanned all-pairs before switching to bucketing.
EXACT_LIMIT = 10_000


@dataclass
class ValidationReport:
    n_points: int
    min_pair_distance: float
    violating_pairs: list[tuple[int, int, float]] = field(default_factory=list)
    coverage_max_gap: float | None = None
    containment_failures: int | None = None

    @property
    def ok(self) -> bool:
        return not self.violating_pairs and not self.containment_failures

    def to_dict(self) -> dict:
        return {
            "n_points": int(self.n_points),
            "min_pair_distance": float(self.min_pair_distance),
            "violating_pairs": [[int(i), int(j), float(d)] for i, j, d in self.violating_pairs],
            "coverage_max_gap": None
            if self.coverage_max_gap is None
            else float(self.coverage_max_gap),
            "containment_failures": None
            if self.containment_failures is None
            else int(self.containment_failures),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _pairs_exact(points: np.ndarray, h: np.ndarray):
    n = len(points)
    min_dist = np.inf
    violations = []
    chunk = max(1, min(1024, n))
    cols = np.arange(n)[None, :]
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dist = cdist(points[start:stop], points)
        upper = cols > np.arange(start, stop)[:, None]
        masked = np.where(upper, dist, np.inf)
        local_min = float(masked.min()) if masked.size else np.inf
        if local_min < min_dist:
            min_dist = local_min
        limit = np.minimum(h[start:stop, None], h[None, :]) * (1.0 - SPACING_SLACK)
        ii, jj = np.nonzero(upper & (dist < limit))
        for i, j in zip(ii, jj):
            violations.append((start + int(i), int(j), float(dist[i, j])))
    return (float(min_dist) if n > 1 else float("nan")), violations


def _half_offsets(d: int) -> list[tuple[int, ...]]:
    """Nonzero Moore offsets, one per unordered direction pair."""
    offs = []
    for raw in np.ndindex(*([3] * d)):
        off = tuple(v - 1 for v in raw)
        if any(off) and off > tuple(-v for v in off):
            offs.append(off)
    return offs


@njit(cache=True)
def _k_grid_scan(spts, sh, skeys, shifts, slack, out_i, out_j, out_d, out_min):
    """Scan bucketed pairs over sorted keys with a two-pointer merge.

    Returns the violation count, or -1 if the out buffers are too small.
    ``shifts[0]`` must be 0 (the self-bucket pass). Indices reported are
    positions in the sorted arrays.
    """
    n = spts.shape[0]
    d = spts.shape[1]
    cap = out_i.shape[0]
    count = 0
    min_dist2 = np.inf
    for s in range(shifts.shape[0]):
        shift = shifts[s]
        lo = 0
        for i in range(n):
            if shift == 0:
                j = i + 1
            else:
                target = skeys[i] + shift
                while lo < n and skeys[lo] < target:
                    lo += 1
                j = lo
            while j < n and skeys[j] == skeys[i] + shift:
                acc = 0.0
                for a in range(d):
                    dv = spts[i, a] - spts[j, a]
                    acc += dv * dv
                if acc < min_dist2:
                    min_dist2 = acc
                hmin = sh[i] if sh[i] < sh[j] else sh[j]
                lim = hmin * (1.0 - slack)
                if acc < lim * lim:
                    if count >= cap:
                        return -1
                    out_i[count] = i
                    out_j[count] = j
                    out_d[count] = np.sqrt(acc)
                    count += 1
                j += 1
    out_min[0] = np.sqrt(min_dist2) if np.isfinite(min_dist2) else np.nan
    return count


def _pairs_grid(points: np.ndarray, h: np.ndarray):
    n, d = points.shape
    side = float(h.max())
    lo = points.min(axis=0)
    # digits start at 1 so the +-1 offsets below never wrap across an axis
    keys_nd = np.floor((points - lo) / side).astype(np.int64) + 1
    spans = keys_nd.max(axis=0) + 2
    keys = np.zeros(n, dtype=np.int64)
    for a in range(d):
        keys = keys * spans[a] + keys_nd[:, a]

    order = np.argsort(keys, kind="stable")
    spts = np.ascontiguousarray(points[order])
    sh = np.ascontiguousarray(h[order])
    skeys = keys[order]

    shift_vals = [0]
    for off in _half_offsets(d):
        val = 0
        for a in range(d):
            val = val * int(spans[a]) + off[a]
        shift_vals.append(val)
    # two-pointer merge needs increasing targets per pass
    shifts = np.array(sorted(shift_vals), dtype=np.int64)

    cap = 4096
    out_min = np.empty(1, dtype=np.float64)
    while True:
        out_i = np.empty(cap, dtype=np.int64)
        out_j = np.empty(cap, dtype=np.int64)
        out_d = np.empty(cap, dtype=np.float64)
        got = _k_grid_scan(spts, sh, skeys, shifts, SPACING_SLACK, out_i, out_j, out_d, out_min)
        if got >= 0:
            break
        cap *= 8

    violations = []
    for k in range(got):
        i = int(order[out_i[k]])
        j = int(order[out_j[k]])
        if i > j:
            i, j = j, i
        violations.append((i, j, float(out_d[k])))
    min_dist = float(out_min[0])
    return (min_dist if np.isfinite(min_dist) else float("nan")), violations


def check_spacing(points: np.ndarray, spacing: Spacing, method: str = "auto") -> ValidationReport:
    """Report every pair closer than the smaller local spacing (with 1e-9
    relative slack: touching at exactly h is legal).

    The grid method finds the identical violation set; its reported
    min_pair_distance covers only pairs within one bucket side (= max h) of
    each other and is NaN when no pair is that close."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < 2:
        return ValidationReport(n_points=n, min_pair_distance=float("nan"))
    h = spacing.at_many(points)
    if method == "auto":
        method = "exact" if n <= EXACT_LIMIT else "grid"
    if method == "exact":
        min_dist, violations = _pairs_exact(points, h)
    elif method == "grid":
        min_dist, violations = _pairs_grid(points, h)
    else:
        raise ValueError(f"unknown method {method!r}")
    violations.sort(key=lambda t: (t[2], t[0], t[1]))
    return ValidationReport(
        n_points=n, min_pair_distance=min_dist, violating_pairs=violations
    )


def check_coverage(
    domain: Domain,
    points: np.ndarray,
    spacing: Spacing,
    n_samples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over random domain samples of (distance to nearest point) / h."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("coverage check needs at least one point")
    gen = rng if rng is not None else np.random.default_rng(0)
    lo, hi = domain.bounding_box()
    samples = np.empty((n_samples, lo.size))
    filled = 0
    while filled < n_samples:
        cand = gen.uniform(lo, hi, size=(max(2 * n_samples, 64), lo.size))
        keep = cand[domain.contains_many(cand)]
        take = min(n_samples - filled, len(keep))
        samples[filled : filled + take] = keep[:take]
        filled += take
    tree = cKDTree(points)
    dist, _ = tree.query(samples, k=1)
    ratios = dist / spacing.at_many(samples)
    return float(ratios.max())


def containment_failures(domain: Domain, points: np.ndarray) -> int:
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return 0
    return int(np.count_nonzero(~domain.contains_many(points)))


def repair_mask(points: np.ndarray, spacing: Spacing) -> np.ndarray:
    """Keep-mask of the greedy proximity repair.

    Violating pairs are visited in ascending distance order; for each pair
    still alive the larger-index point is dropped. Deterministic, idempotent,
    and the survivors pass check_spacing with zero violations.
    """
    points = np.asarray(points, dtype=np.float64)
    # the grid scan finds the same violation set as the all-pairs scan
    report = check_spacing(points, spacing, method="grid" if len(points) > 2 else "auto")
    keep = np.ones(len(points), dtype=bool)
    for i, j, _dist in report.violating_pairs:
        if keep[i] and keep[j]:
            keep[max(i, j)] = False
    return keep


def repair_proximity(points: np.ndarray, spacing: Spacing) -> tuple[np.ndarray, int]:
    points = np.asarray(points, dtype=np.float64)
    keep = repair_mask(points, spacing)
    removed = int(len(points) - keep.sum())
    return points[keep], removed


def full_report(
    domain: Domain,
    points: np.ndarray,
    spacing: Spacing,
    n_samples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> ValidationReport:
    report = check_spacing(points, spacing)
    report.containment_failures = containment_failures(domain, points)
    if len(points) > 0:
        report.coverage_max_gap = check_coverage(domain, points, spacing, n_samples, rng)
    return report
