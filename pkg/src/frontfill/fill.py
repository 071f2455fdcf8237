"""Sequential and parallel advancing-front fills.

The sequential fill is a FIFO loop: pop a point, generate candidates on the
sphere of radius h around it, keep those inside the domain with no stored
point strictly within h, insert and enqueue them. The parallel fill runs the
same expansion per thread over private FIFO queues, coordinating territory
through the work tree: a point expands only while its cell is claimed by the
expanding thread, candidates landing in foreign cells are stored but deferred
through the restart queue, and global stages separated by barriers restart
the front from deferred cells until nothing is left.

The hot loop is compiled; it leaves the interpreter only to claim or release
work cells, which is rare compared to point insertion.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import validate as _validate
from .geometry import (
    Domain,
    Spacing,
    domain_scale,
    kernel_candidates,
    kernel_contains,
    kernel_spacing,
)
from .rng import RandomStream
from .spatial_index import (
    OK,
    ERR_TEXT,
    CapacityError,
    SpatialTree,
    _k_ball_query,
    _k_insert,
)
from .work_tree import RestartQueue, WorkTree

DEFAULT_RELAX_ITERATIONS = 50
DEFAULT_BOUNDARY_WEIGHT = 1.0 / 16.0

# drain kernel statuses
ST_EMPTY = 0
ST_EVENTS = 1
ST_QFULL = 2
ST_BUDGET = 3
_ST_TREE_BASE = 100


class FillError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExpansionEntry:
    point_index: int
    cell_index: int


@dataclass
class FillConfig:
    domain: Domain
    spacing: Spacing
    threads: int = 1
    candidates_k: int | None = None
    spatial_leaf_capacity: int = 40
    work_leaf_limit: int = 100
    rng_seed: int = 0
    max_stages: int = 64
    repair: bool = True
    pin_threads: bool = False
    record_events: bool = False
    debug_leaf_tags: bool = False
    relax_iterations: int = DEFAULT_RELAX_ITERATIONS

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.spatial_leaf_capacity < 1 or self.work_leaf_limit < 1:
            raise ValueError("leaf limits must be >= 1")
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")
        if self.candidates_k is not None and self.candidates_k < 1:
            raise ValueError("candidates_k must be >= 1")

    @property
    def resolved_k(self) -> int:
        # Defaults calibrated so advancing-front fills stay gap-free: with
        # candidates on the exact-h sphere, 6 directions in 2-d leave pockets.
        if self.candidates_k is not None:
            return int(self.candidates_k)
        return 12 if self.domain.dim == 2 else 24


@dataclass
class FillStats:
    total_wall_time: float
    per_stage_times: list[float]
    per_thread_active_time: list[float]
    points_inserted: int
    stages: int
    throughput: float
    repair_removals: int = 0
    #: work-tree event log (timestamp_ns, thread, cell, transition), when recorded
    events: list[tuple] | None = None
    #: concurrent same-leaf insert detections (debug_leaf_tags runs only)
    leaf_tag_violations: int | None = None

    @property
    def stage0_fraction(self) -> float:
        s = sum(self.per_stage_times)
        return self.per_stage_times[0] / s if s > 0 else 1.0

    def to_dict(self) -> dict:
        return {
            "total_wall_time": self.total_wall_time,
            "per_stage_times": list(self.per_stage_times),
            "per_thread_active_time": list(self.per_thread_active_time),
            "points_inserted": self.points_inserted,
            "stages": self.stages,
            "throughput": self.throughput,
            "repair_removals": self.repair_removals,
            "stage0_fraction": self.stage0_fraction,
        }


@dataclass
class PointSet:
    coords: np.ndarray
    owners: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


# --- seeding ------------------------------------------------------------------


def place_seeds(
    domain: Domain,
    n: int,
    rng,
    iterations: int = DEFAULT_RELAX_ITERATIONS,
    boundary_weight: float = DEFAULT_BOUNDARY_WEIGHT,
) -> np.ndarray:
    """n seed points spread by repulsive relaxation.

    Random points inside the domain descend the net 1/r potential of the
    other seeds plus a weighted charge at the nearest boundary point. Steps
    are force-proportional, clipped to an annealed cap starting at a tenth of
    the domain scale, and every point is pulled back inside the domain.
    """
    if n < 1:
        raise ValueError("need at least one seed")
    gen = rng.generator if isinstance(rng, RandomStream) else rng
    lo, hi = domain.bounding_box()
    d = lo.size
    pts = np.empty((n, d), dtype=np.float64)
    filled = 0
    while filled < n:
        cand = gen.uniform(lo, hi, size=(max(2 * n, 16), d))
        keep = cand[domain.contains_many(cand)]
        take = min(n - filled, len(keep))
        pts[filled : filled + take] = keep[:take]
        filled += take

    scale = domain_scale(domain)
    eps = 1e-12 * scale
    # stable descent rate: nearest-neighbor forces grow like n^1.5 / scale^2
    dt = scale**3 / max(1.0, float(n)) ** 1.5
    for it in range(iterations):
        force = np.zeros_like(pts)
        if n > 1:
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt(np.sum(diff**2, axis=2))
            np.fill_diagonal(dist, np.inf)
            dist = np.maximum(dist, eps)
            force += np.sum(diff / dist[:, :, None] ** 3, axis=1)
        for i in range(n):
            b = domain.nearest_boundary_point(pts[i])
            if b is None:
                continue
            v = pts[i] - b
            r = max(float(np.linalg.norm(v)), eps)
            force[i] += boundary_weight * v / r**3
        step = force * dt
        lens = np.linalg.norm(step, axis=1)
        cap = 0.1 * scale * 0.93**it
        clipped = lens > cap
        step[clipped] *= (cap / lens[clipped])[:, None]
        pts += step
        _clip_inside(domain, pts)
    return pts


def _clip_inside(domain: Domain, pts: np.ndarray) -> None:
    from .geometry import Box, Disc

    if isinstance(domain, Disc):
        v = pts - domain.center
        r = np.linalg.norm(v, axis=1)
        out = r > 0.995 * domain.radius
        if out.any():
            pts[out] = domain.center + v[out] / r[out, None] * (0.995 * domain.radius)
    else:
        assert isinstance(domain, Box)
        margin = 0.002 * (domain.hi - domain.lo)
        np.clip(pts, domain.lo + margin, domain.hi - margin, out=pts)


# --- sequential fill ------------------------------------------------------------


@njit(nogil=True, cache=True)
def _k_fill_sequential(
    node_child,
    node_pcount,
    node_block,
    node_wcell,
    slots,
    pts,
    owners,
    counters,
    caps,
    root_lo,
    root_hi,
    dkind,
    dparams,
    skind,
    sparams,
    k_cand,
    rng_state,
    q_pts,
    q_state,
    box_lo,
    box_hi,
    st_node,
    st_lo,
    st_hi,
    pb_lo,
    pb_hi,
    cand,
    ins_out,
    tag_on,
    tag_owner,
    tag_viol,
):
    while q_state[0] < q_state[1]:
        pidx = q_pts[q_state[0]]
        q_state[0] += 1
        p = pts[pidx]
        h = kernel_spacing(skind, sparams, p)
        kernel_candidates(p, h, k_cand, rng_state, 0, cand)
        for j in range(k_cand):
            c = cand[j]
            if not kernel_contains(dkind, dparams, c):
                continue
            if _k_ball_query(
                node_child,
                node_pcount,
                node_block,
                slots,
                pts,
                root_lo,
                root_hi,
                c,
                h,
                st_node,
                st_lo,
                st_hi,
                pb_lo,
                pb_hi,
            ):
                continue
            st = _k_insert(
                node_child,
                node_pcount,
                node_block,
                node_wcell,
                slots,
                pts,
                owners,
                counters,
                caps,
                root_lo,
                root_hi,
                c,
                0,
                box_lo,
                box_hi,
                ins_out,
                tag_on,
                tag_owner,
                tag_viol,
            )
            if st != OK:
                return _ST_TREE_BASE + st
            q_pts[q_state[1]] = ins_out[0]
            q_state[1] += 1
    return ST_EMPTY


def _check_seeds(domain: Domain, spacing: Spacing, seeds: np.ndarray) -> np.ndarray:
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    if seeds.size == 0:
        raise FillError("seed list is empty")
    if seeds.shape[1] != domain.dim:
        raise FillError(f"seeds must have dimension {domain.dim}")
    for s in seeds:
        if not domain.contains(s):
            raise FillError(f"seed {s} lies outside the domain")
    h = spacing.at_many(seeds)
    for i in range(len(seeds)):
        for j in range(i + 1, len(seeds)):
            dist = float(np.linalg.norm(seeds[i] - seeds[j]))
            if dist < min(h[i], h[j]):
                raise FillError(
                    f"seeds {i} and {j} are {dist:.3g} apart, closer than local spacing"
                )
    return seeds


def fill_sequential(cfg: FillConfig, seeds) -> tuple[PointSet, FillStats]:
    """Single-threaded advancing-front fill; bit-reproducible for a fixed seed."""
    t_start = time.perf_counter()
    seeds = _check_seeds(cfg.domain, cfg.spacing, seeds)
    tree = SpatialTree.prebuild(
        cfg.domain,
        0,
        spacing=cfg.spacing,
        leaf_capacity=cfg.spatial_leaf_capacity,
        debug_leaf_tags=cfg.debug_leaf_tags,
    )
    scratch = tree.make_scratch()
    max_pts = int(tree.caps[0])
    q_pts = np.empty(max_pts, dtype=np.int64)
    q_state = np.zeros(2, dtype=np.int64)
    for s in seeds:
        pidx, _ = tree.insert(s, 0, scratch)
        q_pts[q_state[1]] = pidx
        q_state[1] += 1

    dkind, dparams = cfg.domain.kernel_code()
    skind, sparams = cfg.spacing.kernel_code()
    k = cfg.resolved_k
    stream = RandomStream(cfg.rng_seed, 0)
    cand = np.empty((k, tree.dim), dtype=np.float64)

    t_run = time.perf_counter()
    status = _k_fill_sequential(
        tree.node_child,
        tree.node_pcount,
        tree.node_block,
        tree.node_wcell,
        tree.slots,
        tree.pts,
        tree.owners,
        tree.counters,
        tree.caps,
        tree.lo,
        tree.hi,
        dkind,
        dparams,
        skind,
        sparams,
        k,
        stream.kernel_state,
        q_pts,
        q_state,
        scratch["box_lo"],
        scratch["box_hi"],
        scratch["st_node"],
        scratch["st_lo"],
        scratch["st_hi"],
        scratch["pb_lo"],
        scratch["pb_hi"],
        cand,
        scratch["out"],
        tree.debug_leaf_tags,
        tree.tag_owner,
        tree.tag_violations,
    )
    t_end = time.perf_counter()
    if status != ST_EMPTY:
        raise CapacityError(ERR_TEXT[status - _ST_TREE_BASE])

    n = tree.count()
    total = t_end - t_start
    stats = FillStats(
        total_wall_time=total,
        per_stage_times=[t_end - t_run],
        per_thread_active_time=[t_end - t_run],
        points_inserted=n,
        stages=1,
        throughput=n / total if total > 0 else float("inf"),
    )
    return PointSet(coords=tree.points().copy(), owners=tree.point_owners().copy()), stats


# --- parallel fill ----------------------------------------------------------------


@njit(nogil=True, cache=True)
def _k_drain(
    node_child,
    node_pcount,
    node_block,
    node_wcell,
    slots,
    pts,
    owners,
    counters,
    caps,
    root_lo,
    root_hi,
    dkind,
    dparams,
    skind,
    sparams,
    k_cand,
    rng_state,
    front_count,
    owned,
    blocked_ver,
    epoch,
    q_pts,
    q_cells,
    q_state,
    box_lo,
    box_hi,
    st_node,
    st_lo,
    st_hi,
    pb_lo,
    pb_hi,
    cand,
    ins_out,
    pend_pts,
    pend_cells,
    pend_parents,
    rel_cells,
    io,
    tid,
    budget,
    tag_on,
    tag_owner,
    tag_viol,
):
    """Expand queued points until the queue empties, the claim/release event
    buffers fill, or the queue array must grow.

    Claim requests and zero-front releases are batched into the pend_*/rel_
    buffers so the interpreter round trip is paid once per batch, not once
    per work cell. io on exit: [0] pending claims, [1] buffered releases,
    [2] points expanded, [3] points inserted.
    """
    qcap = q_pts.shape[0]
    pend_cap = pend_pts.shape[0]
    rel_cap = rel_cells.shape[0]
    status = ST_EMPTY
    npend = 0
    nrel = 0
    expanded = 0
    inserted = 0
    while True:
        if budget >= 0 and expanded >= budget:
            if q_state[0] < q_state[1]:
                status = ST_BUDGET
            break
        if q_state[0] == q_state[1]:
            break
        if npend + k_cand > pend_cap or nrel >= rel_cap:
            status = ST_EVENTS
            break
        if q_state[1] + k_cand > qcap:
            status = ST_QFULL
            break
        pidx = q_pts[q_state[0]]
        pcell = q_cells[q_state[0]]
        q_state[0] += 1

        p = pts[pidx]
        h = kernel_spacing(skind, sparams, p)
        kernel_candidates(p, h, k_cand, rng_state, 0, cand)
        for j in range(k_cand):
            c = cand[j]
            if not kernel_contains(dkind, dparams, c):
                continue
            if _k_ball_query(
                node_child,
                node_pcount,
                node_block,
                slots,
                pts,
                root_lo,
                root_hi,
                c,
                h,
                st_node,
                st_lo,
                st_hi,
                pb_lo,
                pb_hi,
            ):
                continue
            st = _k_insert(
                node_child,
                node_pcount,
                node_block,
                node_wcell,
                slots,
                pts,
                owners,
                counters,
                caps,
                root_lo,
                root_hi,
                c,
                tid,
                box_lo,
                box_hi,
                ins_out,
                tag_on,
                tag_owner,
                tag_viol,
            )
            if st != OK:
                io[0] = npend
                io[1] = nrel
                io[2] = expanded
                io[3] = inserted
                return _ST_TREE_BASE + st
            inserted += 1
            cidx = ins_out[0]
            ccell = ins_out[1]
            if ccell == pcell or owned[ccell] == 1:
                q_pts[q_state[1]] = cidx
                q_cells[q_state[1]] = ccell
                q_state[1] += 1
                front_count[ccell] += 1
            elif blocked_ver[ccell] == epoch:
                pass  # deferred: the cell's restart entry re-enumerates it
            else:
                pend_pts[npend] = cidx
                pend_cells[npend] = ccell
                pend_parents[npend] = pcell
                npend += 1
        expanded += 1
        front_count[pcell] -= 1
        if front_count[pcell] == 0:
            rel_cells[nrel] = pcell
            nrel += 1
    io[0] = npend
    io[1] = nrel
    io[2] = expanded
    io[3] = inserted
    return status


class ThreadContext:
    """Per-worker state: private FIFO queue, ownership masks, rng stream."""

    INITIAL_QUEUE = 1 << 14

    def __init__(self, shared: "_SharedFill", tid: int):
        self.shared = shared
        self.tid = tid
        n_cells = shared.work_tree.n_cells
        self.owned = np.zeros(n_cells, dtype=np.uint8)
        self.blocked_ver = np.full(n_cells, -1, dtype=np.int64)
        self.epoch = 0
        self.q_pts = np.empty(self.INITIAL_QUEUE, dtype=np.int64)
        self.q_cells = np.empty(self.INITIAL_QUEUE, dtype=np.int64)
        self.q_state = np.zeros(2, dtype=np.int64)
        self.scratch = shared.tree.make_scratch()
        k = shared.k
        self.cand = np.empty((k, shared.tree.dim), dtype=np.float64)
        pend_cap = max(4 * k, 128)
        self.pend_pts = np.empty(pend_cap, dtype=np.int64)
        self.pend_cells = np.empty(pend_cap, dtype=np.int64)
        self.pend_parents = np.empty(pend_cap, dtype=np.int64)
        self.rel_cells = np.empty(64, dtype=np.int64)
        self.io = np.zeros(8, dtype=np.int64)
        self.rng_state = RandomStream(shared.cfg.rng_seed, tid).kernel_state
        self.failed: dict[int, int] = {}
        self.expanded = 0
        self.inserted = 0
        self.waited = 0.0

    # -- queue ----------------------------------------------------------------

    def _grow_queue(self) -> None:
        head, tail = int(self.q_state[0]), int(self.q_state[1])
        live = tail - head
        cap = max(2 * self.q_pts.shape[0], live + self.shared.k + 1)
        new_pts = np.empty(cap, dtype=np.int64)
        new_cells = np.empty(cap, dtype=np.int64)
        new_pts[:live] = self.q_pts[head:tail]
        new_cells[:live] = self.q_cells[head:tail]
        self.q_pts, self.q_cells = new_pts, new_cells
        self.q_state[0] = 0
        self.q_state[1] = live

    def _ensure_room(self, n: int) -> None:
        while int(self.q_state[1]) + n > self.q_pts.shape[0]:
            self._grow_queue()

    def enqueue_one(self, pidx: int, cell: int) -> None:
        self._ensure_room(1)
        t = int(self.q_state[1])
        self.q_pts[t] = pidx
        self.q_cells[t] = cell
        self.q_state[1] = t + 1
        self.shared.work_tree.front_count[cell] += 1

    def enqueue_many(self, idxs: np.ndarray, cell: int) -> None:
        n = len(idxs)
        if n == 0:
            return
        self._ensure_room(n)
        t = int(self.q_state[1])
        self.q_pts[t : t + n] = idxs
        self.q_cells[t : t + n] = cell
        self.q_state[1] = t + n
        self.shared.work_tree.front_count[cell] += n

    def queue_entries(self) -> list[ExpansionEntry]:
        h, t = int(self.q_state[0]), int(self.q_state[1])
        return [ExpansionEntry(int(self.q_pts[i]), int(self.q_cells[i])) for i in range(h, t)]

    # -- assignment / stage start ------------------------------------------------

    def start_from_cell(self, cell: int, was_enqueued: bool, pidx: int) -> None:
        """Begin work in a cell already claimed for this thread."""
        self.epoch += 1
        self.owned[cell] = 1
        if was_enqueued:
            node = int(self.shared.work_tree.spatial_node[cell])
            idxs = self.shared.tree.collect_cell_points(node, self.scratch)
            self.enqueue_many(idxs, cell)
        else:
            self.enqueue_one(pidx, cell)

    # -- expansion ---------------------------------------------------------------

    def _drain_once(self, budget: int) -> int:
        sh = self.shared
        tree = sh.tree
        status = _k_drain(
            tree.node_child,
            tree.node_pcount,
            tree.node_block,
            tree.node_wcell,
            tree.slots,
            tree.pts,
            tree.owners,
            tree.counters,
            tree.caps,
            tree.lo,
            tree.hi,
            sh.dkind,
            sh.dparams,
            sh.skind,
            sh.sparams,
            sh.k,
            self.rng_state,
            sh.work_tree.front_count,
            self.owned,
            self.blocked_ver,
            self.epoch,
            self.q_pts,
            self.q_cells,
            self.q_state,
            self.scratch["box_lo"],
            self.scratch["box_hi"],
            self.scratch["st_node"],
            self.scratch["st_lo"],
            self.scratch["st_hi"],
            self.scratch["pb_lo"],
            self.scratch["pb_hi"],
            self.cand,
            self.scratch["out"],
            self.pend_pts,
            self.pend_cells,
            self.pend_parents,
            self.rel_cells,
            self.io,
            self.tid,
            budget,
            tree.debug_leaf_tags,
            tree.tag_owner,
            tree.tag_violations,
        )
        self.expanded += int(self.io[2])
        self.inserted += int(self.io[3])
        return status

    def _handle_events(self) -> list[ExpansionEntry]:
        """Claim cells for the batched pending candidates, then flush the
        batched zero-front releases."""
        sh = self.shared
        wt = sh.work_tree
        new_entries: list[ExpansionEntry] = []
        n_pend = int(self.io[0])
        n_rel = int(self.io[1])
        for i in range(n_pend):
            cidx = int(self.pend_pts[i])
            ccell = int(self.pend_cells[i])
            if self.owned[ccell]:
                self.enqueue_one(cidx, ccell)
                new_entries.append(ExpansionEntry(cidx, ccell))
                continue
            res = wt.try_claim(ccell, self.tid)
            if res.claimed:
                self.owned[ccell] = 1
                if res.was_enqueued:
                    node = int(wt.spatial_node[ccell])
                    idxs = sh.tree.collect_cell_points(node, self.scratch)
                    self.enqueue_many(idxs, ccell)
                    new_entries.extend(ExpansionEntry(int(x), ccell) for x in idxs)
                else:
                    self.enqueue_one(cidx, ccell)
                    new_entries.append(ExpansionEntry(cidx, ccell))
            else:
                self.blocked_ver[ccell] = self.epoch
                if res.set_attempt:
                    self.failed[ccell] = int(self.pend_parents[i])
                if res.won_enqueue:
                    sh.restart_queue.push(cidx, ccell)
        released = False
        for i in range(n_rel):
            cell = int(self.rel_cells[i])
            # skip cells revived by later enqueues or already flushed
            if not self.owned[cell] or wt.front_count[cell] != 0:
                continue
            failed = [c for c, pc in self.failed.items() if pc == cell]
            wt.release(cell, self.tid, failed)
            for c in failed:
                del self.failed[c]
            self.owned[cell] = 0
            released = True
        if released:
            self.epoch += 1  # promotions may have unblocked deferred cells
        return new_entries

    def run(self) -> None:
        """Drain the private queue completely, handling claim/release events."""
        while True:
            status = self._drain_once(-1)
            if status >= _ST_TREE_BASE:
                raise CapacityError(ERR_TEXT[status - _ST_TREE_BASE])
            self._handle_events()
            if status == ST_QFULL:
                self._grow_queue()
            elif status == ST_EMPTY and int(self.q_state[0]) == int(self.q_state[1]):
                return

    def expand_one(self, entry: ExpansionEntry) -> list[ExpansionEntry]:
        """Expand exactly one queued point; returns the new queue entries.

        Claim and release events raised by the expansion are handled before
        returning, so the cell is released promptly when its front empties.
        """
        head = int(self.q_state[0])
        if head >= int(self.q_state[1]):
            raise FillError("expansion queue is empty")
        if int(self.q_pts[head]) != entry.point_index or int(self.q_cells[head]) != entry.cell_index:
            raise FillError("entry is not at the head of this thread's queue")
        self._ensure_room(self.shared.k)
        tail_before = int(self.q_state[1])
        status = self._drain_once(1)
        if status >= _ST_TREE_BASE:
            raise CapacityError(ERR_TEXT[status - _ST_TREE_BASE])
        new_entries = [
            ExpansionEntry(int(self.q_pts[i]), int(self.q_cells[i]))
            for i in range(tail_before, int(self.q_state[1]))
        ]
        new_entries.extend(self._handle_events())
        return new_entries


def expand_point(entry: ExpansionEntry, thread_ctx: ThreadContext) -> list[ExpansionEntry]:
    """Expand one point from the head of the context's queue."""
    return thread_ctx.expand_one(entry)


class _SharedFill:
    """State shared by all workers of one parallel fill."""

    def __init__(self, cfg: FillConfig):
        self.cfg = cfg
        self.k = cfg.resolved_k
        self.work_tree = WorkTree.build(
            cfg.domain, cfg.spacing, cfg.work_leaf_limit, record_events=cfg.record_events
        )
        self.tree = SpatialTree.prebuild(
            cfg.domain,
            self.work_tree.depth,
            spacing=cfg.spacing,
            leaf_capacity=cfg.spatial_leaf_capacity,
            work_tree=self.work_tree,
            debug_leaf_tags=cfg.debug_leaf_tags,
        )
        self.restart_queue = RestartQueue()
        self.dkind, self.dparams = cfg.domain.kernel_code()
        self.skind, self.sparams = cfg.spacing.kernel_code()


def _seed_assignments(shared: _SharedFill, cfg: FillConfig):
    """Relaxed seeds, one per thread, in pairwise non-adjacent cells.

    Re-runs the relaxation with a fresh substream when seeds collide; after
    ten attempts falls back to a non-adjacent subset (fewer active threads).
    """
    wt = shared.work_tree
    best: list[tuple[int, np.ndarray, int]] = []
    for attempt in range(10):
        stream = RandomStream(cfg.rng_seed, 1_000_000 + attempt)
        seeds = place_seeds(cfg.domain, cfg.threads, stream, cfg.relax_iterations)
        cells = [wt.cell_of_point(s) for s in seeds]
        chosen: list[tuple[int, np.ndarray, int]] = []
        for tid, (seed, cell) in enumerate(zip(seeds, cells)):
            ok = True
            for _, _, other in chosen:
                if cell == other or cell in wt.neighbors(other):
                    ok = False
                    break
            if ok:
                chosen.append((tid, seed, cell))
        if len(chosen) > len(best):
            best = chosen
        if len(chosen) == cfg.threads:
            break
    return best


def fill_parallel(cfg: FillConfig) -> tuple[PointSet, FillStats]:
    """Staged multi-threaded fill over the work tree.

    Not reproducible run to run (interleaving-dependent), but the output
    always satisfies containment and, after the default repair pass, the same
    spacing guarantee as the sequential fill.
    """
    t_start = time.perf_counter()
    shared = _SharedFill(cfg)
    wt = shared.work_tree
    contexts = [ThreadContext(shared, t) for t in range(cfg.threads)]

    assignments: dict[int, tuple] = {}
    for tid, seed, cell in _seed_assignments(shared, cfg):
        res = wt.try_claim(cell, tid)
        if not res.claimed:  # pragma: no cover - seeds are pairwise non-adjacent
            raise FillError(f"seed cell {cell} unexpectedly unclaimable")
        pidx, got_cell = shared.tree.insert(seed, tid)
        if got_cell != cell:  # pragma: no cover - cross-check of the two mappings
            raise FillError("seed cell mismatch between descent and grid arithmetic")
        assignments[tid] = ("seed", pidx, cell, res.was_enqueued)

    state = {
        "assignments": assignments,
        "done": False,
        "stage": 0,
        "stage_start": 0.0,
        "stage_times": [],
        "error": None,
    }
    errors: list[BaseException] = []
    drain_rng = RandomStream(cfg.rng_seed, 2_000_000).generator

    def stage_transition():
        now = time.perf_counter()
        state["stage_times"].append(now - state["stage_start"])
        state["stage"] += 1
        state["assignments"] = {}
        if state["stage"] >= cfg.max_stages and len(shared.restart_queue) > 0:
            residual = shared.restart_queue.snapshot()
            cells = sorted({c for _, c in residual})
            state["error"] = FillError(
                f"max_stages={cfg.max_stages} exceeded with {len(residual)} queued entries "
                f"in cells {cells[:32]}{'...' if len(cells) > 32 else ''}"
            )
            raise state["error"]
        assigned = shared.restart_queue.drain_stage(wt, list(range(cfg.threads)), drain_rng)
        if not assigned:
            state["done"] = True
        else:
            state["assignments"] = {
                tid: ("restart", pidx, cell, True) for tid, (pidx, cell) in assigned.items()
            }
        state["stage_start"] = time.perf_counter()

    barrier = threading.Barrier(cfg.threads, action=stage_transition)

    def worker(ctx: ThreadContext):
        try:
            if cfg.pin_threads:
                try:
                    os.sched_setaffinity(0, {ctx.tid % (os.cpu_count() or 1)})
                except (OSError, AttributeError):
                    pass
            while True:
                work = state["assignments"].get(ctx.tid)
                if work is not None:
                    _, pidx, cell, was_enq = work
                    ctx.start_from_cell(cell, was_enq, pidx)
                    ctx.run()
                t0 = time.perf_counter()
                try:
                    barrier.wait()
                except threading.BrokenBarrierError:
                    return
                finally:
                    ctx.waited += time.perf_counter() - t0
                if state["done"]:
                    return
        except BaseException as exc:  # noqa: BLE001 - propagated to the caller
            errors.append(exc)
            barrier.abort()

    threads = [
        threading.Thread(target=worker, args=(ctx,), name=f"fill-{ctx.tid}", daemon=True)
        for ctx in contexts
    ]
    state["stage_start"] = time.perf_counter()
    t_workers = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    t_joined = time.perf_counter()

    if errors:
        raise errors[0]
    if state["error"] is not None:  # pragma: no cover - surfaced via errors normally
        raise state["error"]

    n_inserted = shared.tree.count()
    coords = shared.tree.points().copy()
    owners = shared.tree.point_owners().copy()
    removed = 0
    if cfg.repair:
        keep = _validate.repair_mask(coords, cfg.spacing)
        removed = int(len(coords) - keep.sum())
        if removed:
            coords = coords[keep]
            owners = owners[keep]
    t_end = time.perf_counter()

    total = t_end - t_start
    span = t_joined - t_workers
    stats = FillStats(
        total_wall_time=total,
        per_stage_times=list(state["stage_times"]),
        per_thread_active_time=[max(span - c.waited, 0.0) for c in contexts],
        points_inserted=n_inserted,
        stages=int(state["stage"]),
        throughput=n_inserted / total if total > 0 else float("inf"),
        repair_removals=removed,
        events=wt.events,
        leaf_tag_violations=int(shared.tree.tag_violations[0]) if cfg.debug_leaf_tags else None,
    )
    return PointSet(coords=coords, owners=owners), stats
