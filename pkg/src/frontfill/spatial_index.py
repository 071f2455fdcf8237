"""Append-only 2^d-ary spatial hypertree over the domain bounding box.

Storage is structure-of-arrays so the nopython kernels can walk it: nodes are
rows in flat int64 arrays, leaf point-index lists live in fixed-capacity slot
blocks, and coordinates sit in one dense float64 array. Everything is
append-only with pre-reserved index space; growth never relocates an entry,
so a point's index and coordinates are stable for the lifetime of the tree.

Concurrency contract: concurrent inserts must target distinct leaves (the
work-grid claim protocol guarantees this externally). Queries may run against
in-flight inserts by other threads: a leaf's point count is published with
release ordering after the element writes and read with acquire ordering, so
readers only ever observe fully initialized prefixes. A query may therefore
miss a point whose insertion is still in flight; the fill layer repairs such
rare proximity violations after the run.

Boxes are half-open [lo, hi) per child, with the global upper boundary
closed, so every point maps to exactly one leaf and one work cell.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from numba import njit

from ._atomics import fetch_add, load_acquire, store_release
from .geometry import Domain, Spacing, integral_count_estimate

MAX_TREE_DEPTH = 20
DEFAULT_LEAF_CAPACITY = 40

# insert/query status codes
OK = 0
ERR_POINTS_FULL = 1
ERR_NODES_FULL = 2
ERR_BLOCKS_FULL = 3
ERR_DEPTH = 4

ERR_TEXT = {
    ERR_POINTS_FULL: "point store capacity exhausted",
    ERR_NODES_FULL: "node store capacity exhausted",
    ERR_BLOCKS_FULL: "leaf block pool exhausted",
    ERR_DEPTH: f"tree depth limit {MAX_TREE_DEPTH} reached (degenerate spacing input?)",
}

# counter slots
CTR_POINTS = 0
CTR_NODES = 1
CTR_BLOCKS = 2


class CapacityError(RuntimeError):
    """Raised when a pre-reserved store would have to grow."""


@njit(cache=True)
def _k_insert(
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
    p,
    tid,
    box_lo,
    box_hi,
    out,
    tag_on,
    tag_owner,
    tag_viol,
):
    d = p.shape[0]
    nchild = 1 << d
    capacity = slots.shape[1]
    max_pts = caps[0]
    max_nodes = caps[1]
    max_blocks = caps[2]
    max_depth = caps[3]

    for a in range(d):
        box_lo[a] = root_lo[a]
        box_hi[a] = root_hi[a]

    node = np.int64(0)
    depth = np.int64(0)
    wcell = np.int64(-1)
    while True:
        wc = node_wcell[node]
        if wc >= 0:
            wcell = wc
        base = load_acquire(node_child, node)
        if base >= 0:
            c = 0
            for a in range(d):
                mid = 0.5 * (box_lo[a] + box_hi[a])
                if p[a] >= mid:
                    c |= 1 << a
                    box_lo[a] = mid
                else:
                    box_hi[a] = mid
            node = base + c
            depth += 1
            continue

        n = load_acquire(node_pcount, node)
        if n < capacity:
            if tag_on:
                prev = tag_owner[node]
                if prev >= 0 and prev != tid:
                    fetch_add(tag_viol, 0, 1)
                tag_owner[node] = tid
            b = node_block[node]
            if b < 0:
                b = fetch_add(counters, CTR_BLOCKS, 1)
                if b >= max_blocks:
                    return ERR_BLOCKS_FULL
                node_block[node] = b
            pidx = fetch_add(counters, CTR_POINTS, 1)
            if pidx >= max_pts:
                return ERR_POINTS_FULL
            for a in range(d):
                pts[pidx, a] = p[a]
            owners[pidx] = tid
            slots[b, n] = pidx
            store_release(node_pcount, node, n + 1)
            if tag_on:
                tag_owner[node] = -1
            out[0] = pidx
            out[1] = wcell
            return OK

        # leaf full: split and re-home, then continue the descent one level down
        if depth + 1 > max_depth:
            return ERR_DEPTH
        if tag_on:
            prev = tag_owner[node]
            if prev >= 0 and prev != tid:
                fetch_add(tag_viol, 0, 1)
            tag_owner[node] = tid
        base = fetch_add(counters, CTR_NODES, nchild)
        if base + nchild > max_nodes:
            return ERR_NODES_FULL
        for j in range(nchild):
            node_child[base + j] = -1
            node_pcount[base + j] = 0
            node_block[base + j] = -1
            node_wcell[base + j] = -1
        ob = node_block[node]
        for s in range(capacity):
            idx = slots[ob, s]
            c = 0
            for a in range(d):
                if pts[idx, a] >= 0.5 * (box_lo[a] + box_hi[a]):
                    c |= 1 << a
            child = base + c
            cb = node_block[child]
            if cb < 0:
                cb = fetch_add(counters, CTR_BLOCKS, 1)
                if cb >= max_blocks:
                    return ERR_BLOCKS_FULL
                node_block[child] = cb
            cn = node_pcount[child]
            slots[cb, cn] = idx
            node_pcount[child] = cn + 1
        # publish the children only after they are fully initialized
        store_release(node_child, node, base)
        if tag_on:
            tag_owner[node] = -1


@njit(cache=True)
def _k_ball_query(
    node_child,
    node_pcount,
    node_block,
    slots,
    pts,
    root_lo,
    root_hi,
    center,
    radius,
    st_node,
    st_lo,
    st_hi,
    pb_lo,
    pb_hi,
):
    """True iff any stored point lies strictly within ``radius`` of ``center``."""
    d = center.shape[0]
    nchild = 1 << d
    r2 = radius * radius

    st_node[0] = 0
    for a in range(d):
        st_lo[0, a] = root_lo[a]
        st_hi[0, a] = root_hi[a]
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        base = load_acquire(node_child, node)
        if base < 0:
            n = load_acquire(node_pcount, node)
            if n > 0:
                b = node_block[node]
                for s in range(n):
                    idx = slots[b, s]
                    acc = 0.0
                    for a in range(d):
                        dv = pts[idx, a] - center[a]
                        acc += dv * dv
                    if acc < r2:
                        return True
            continue
        # copy the parent box out before its stack row gets overwritten
        for a in range(d):
            pb_lo[a] = st_lo[top, a]
            pb_hi[a] = st_hi[top, a]
        for j in range(nchild):
            acc = 0.0
            for a in range(d):
                mid = 0.5 * (pb_lo[a] + pb_hi[a])
                if j & (1 << a):
                    lo_a = mid
                    hi_a = pb_hi[a]
                else:
                    lo_a = pb_lo[a]
                    hi_a = mid
                st_lo[top, a] = lo_a
                st_hi[top, a] = hi_a
                if center[a] < lo_a:
                    dv = lo_a - center[a]
                    acc += dv * dv
                elif center[a] > hi_a:
                    dv = center[a] - hi_a
                    acc += dv * dv
            if acc < r2:
                st_node[top] = base + j
                top += 1
    return False


@njit(cache=True)
def _k_collect_subtree(node_child, node_pcount, node_block, slots, nchild, root_node, st_node, out_idx):
    """Collect every point index under ``root_node`` into ``out_idx``.

    Returns the count, or -1 if ``out_idx`` is too small."""
    st_node[0] = root_node
    top = 1
    count = 0
    while top > 0:
        top -= 1
        node = st_node[top]
        base = load_acquire(node_child, node)
        if base < 0:
            n = load_acquire(node_pcount, node)
            if n > 0:
                b = node_block[node]
                for s in range(n):
                    if count >= out_idx.shape[0]:
                        return -1
                    out_idx[count] = slots[b, s]
                    count += 1
        else:
            for j in range(nchild):
                st_node[top] = base + j
                top += 1
    return count


@njit(cache=True)
def _k_count_subtree(node_child, node_pcount, nchild, root_node, st_node):
    st_node[0] = root_node
    top = 1
    count = 0
    while top > 0:
        top -= 1
        node = st_node[top]
        base = load_acquire(node_child, node)
        if base < 0:
            count += load_acquire(node_pcount, node)
        else:
            for j in range(nchild):
                st_node[top] = base + j
                top += 1
    return count


def _skeleton_level_offsets(d: int, levels: int) -> np.ndarray:
    """Start index of each full level 0..levels (inclusive end sentinel)."""
    offs = np.zeros(levels + 2, dtype=np.int64)
    for lev in range(levels + 1):
        offs[lev + 1] = offs[lev] + (1 << (d * lev))
    return offs


def _path_to_grid(j: np.ndarray, d: int, levels: int) -> np.ndarray:
    """Grid coordinates of depth-``levels`` nodes from their path index."""
    coords = np.zeros((j.size, d), dtype=np.int64)
    tmp = j.astype(np.int64).copy()
    for lev in range(levels):  # least significant digit group = deepest level
        c = tmp & ((1 << d) - 1)
        tmp >>= d
        for a in range(d):
            coords[:, a] |= ((c >> a) & 1) << lev
    return coords


class SpatialTree:
    """The point index: prebuilt skeleton plus organically split leaves."""

    def __init__(
        self,
        domain: Domain,
        skeleton_depth: int,
        *,
        leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
        max_points: int,
        work_tree=None,
        debug_leaf_tags: bool = False,
    ):
        if skeleton_depth < 1 or skeleton_depth > MAX_TREE_DEPTH:
            raise ValueError(f"skeleton depth {skeleton_depth} outside 1..{MAX_TREE_DEPTH}")
        if leaf_capacity < 1:
            raise ValueError("leaf capacity must be at least 1")
        lo, hi = domain.bounding_box()
        self.domain = domain
        self.dim = int(lo.size)
        self.lo = lo.astype(np.float64)
        self.hi = hi.astype(np.float64)
        self.leaf_capacity = int(leaf_capacity)
        self.skeleton_depth = int(skeleton_depth)

        d = self.dim
        nchild = 1 << d
        offs = _skeleton_level_offsets(d, skeleton_depth)
        n_skel = int(offs[skeleton_depth + 1])
        max_points = int(min(max_points, 2**31 - 2))
        organic = 4 * nchild * max(1, max_points // max(1, leaf_capacity)) + 1024
        max_nodes = n_skel + organic

        self.node_child = np.full(max_nodes, -1, dtype=np.int64)
        self.node_pcount = np.zeros(max_nodes, dtype=np.int64)
        self.node_block = np.full(max_nodes, -1, dtype=np.int64)
        self.node_wcell = np.full(max_nodes, -1, dtype=np.int64)
        self.slots = np.empty((max_nodes, leaf_capacity), dtype=np.int32)
        self.pts = np.empty((max_points, d), dtype=np.float64)
        self.owners = np.empty(max_points, dtype=np.int16)
        self.counters = np.zeros(3, dtype=np.int64)
        self.caps = np.array([max_points, max_nodes, max_nodes, MAX_TREE_DEPTH], dtype=np.int64)
        self.debug_leaf_tags = bool(debug_leaf_tags)
        self.tag_owner = np.full(max_nodes if debug_leaf_tags else 1, -1, dtype=np.int64)
        self.tag_violations = np.zeros(1, dtype=np.int64)

        # full skeleton: levels 0..depth-1 internal, level depth all leaves
        for lev in range(skeleton_depth):
            idx = np.arange(offs[lev], offs[lev + 1], dtype=np.int64)
            j = idx - offs[lev]
            self.node_child[idx] = offs[lev + 1] + j * nchild
        self.counters[CTR_NODES] = n_skel

        if work_tree is not None:
            if work_tree.depth != skeleton_depth - 1:
                raise ValueError("work tree depth must be one level above the skeleton leaves")
            if not (np.allclose(work_tree.lo, self.lo) and np.allclose(work_tree.hi, self.hi)):
                raise ValueError("work tree box must match the tree bounding box")
            L = work_tree.depth
            j = np.arange(1 << (d * L), dtype=np.int64)
            nodes = offs[L] + j
            coords = _path_to_grid(j, d, L)
            cells = np.zeros(j.size, dtype=np.int64)
            for a in range(d):
                cells = cells * work_tree.nx + coords[:, a]
            self.node_wcell[nodes] = cells
            work_tree.spatial_node[cells] = nodes

    @classmethod
    def prebuild(
        cls,
        domain: Domain,
        work_tree_depth: int,
        *,
        spacing: Spacing | None = None,
        leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
        max_points: int | None = None,
        work_tree=None,
        debug_leaf_tags: bool = False,
    ) -> "SpatialTree":
        """Tree subdivided one level below the work tree, with empty leaves.

        ``max_points`` defaults to a safe margin over the spacing-integral
        estimate; one of ``spacing``/``max_points`` must be given.
        """
        if work_tree_depth < 0:
            raise ValueError("work tree depth must be >= 0")
        if work_tree_depth + 1 > MAX_TREE_DEPTH:
            raise CapacityError(
                f"work tree depth {work_tree_depth} needs a skeleton deeper than {MAX_TREE_DEPTH}"
            )
        if max_points is None:
            if spacing is None:
                raise ValueError("either spacing or max_points is required for sizing")
            est = integral_count_estimate(domain, spacing)
            max_points = int(1.5 * est) + 4096
        return cls(
            domain,
            work_tree_depth + 1,
            leaf_capacity=leaf_capacity,
            max_points=max_points,
            work_tree=work_tree,
            debug_leaf_tags=debug_leaf_tags,
        )

    # -- scratch helpers ----------------------------------------------------

    def make_scratch(self) -> dict:
        d = self.dim
        stack = ((1 << d) - 1) * (MAX_TREE_DEPTH + 2) + 4
        return {
            "box_lo": np.empty(d, dtype=np.float64),
            "box_hi": np.empty(d, dtype=np.float64),
            "st_node": np.empty(max(stack, 4096), dtype=np.int64),
            "st_lo": np.empty((stack, d), dtype=np.float64),
            "st_hi": np.empty((stack, d), dtype=np.float64),
            "pb_lo": np.empty(d, dtype=np.float64),
            "pb_hi": np.empty(d, dtype=np.float64),
            "out": np.empty(2, dtype=np.int64),
        }

    # -- public operations ---------------------------------------------------

    def insert(self, p, tid: int = 0, scratch: dict | None = None) -> tuple[int, int]:
        """Insert a point; returns (point index, containing work-cell index).

        The caller must hold insertion rights to the target leaf per the
        work-grid protocol; the work-cell index is captured during descent.
        """
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (self.dim,):
            raise ValueError(f"point must have dimension {self.dim}")
        if np.any(p < self.lo) or np.any(p > self.hi):
            raise ValueError(f"point {p} outside the root box")
        s = scratch or self.make_scratch()
        status = _k_insert(
            self.node_child,
            self.node_pcount,
            self.node_block,
            self.node_wcell,
            self.slots,
            self.pts,
            self.owners,
            self.counters,
            self.caps,
            self.lo,
            self.hi,
            p,
            tid,
            s["box_lo"],
            s["box_hi"],
            s["out"],
            self.debug_leaf_tags,
            self.tag_owner,
            self.tag_violations,
        )
        if status != OK:
            raise CapacityError(ERR_TEXT[status])
        return int(s["out"][0]), int(s["out"][1])

    def has_point_within(self, center, radius: float, scratch: dict | None = None) -> bool:
        """True iff some stored point is strictly closer than ``radius``."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        center = np.asarray(center, dtype=np.float64)
        s = scratch or self.make_scratch()
        return bool(
            _k_ball_query(
                self.node_child,
                self.node_pcount,
                self.node_block,
                self.slots,
                self.pts,
                self.lo,
                self.hi,
                center,
                float(radius),
                s["st_node"],
                s["st_lo"],
                s["st_hi"],
                s["pb_lo"],
                s["pb_hi"],
            )
        )

    def count(self) -> int:
        return int(min(self.counters[CTR_POINTS], self.caps[0]))

    def points(self) -> np.ndarray:
        """View of all stored coordinates in index order."""
        return self.pts[: self.count()]

    def point_owners(self) -> np.ndarray:
        return self.owners[: self.count()]

    def all_points(self) -> Iterator[tuple[int, np.ndarray]]:
        for i in range(self.count()):
            yield i, self.pts[i]

    def collect_cell_points(self, cell_node: int, scratch: dict | None = None) -> np.ndarray:
        """All point indices stored under one spatial node (cost bounded by
        the subtree size, i.e. the work-cell population)."""
        s = scratch or self.make_scratch()
        cap = 256
        while True:
            out = np.empty(cap, dtype=np.int64)
            n = _k_collect_subtree(
                self.node_child,
                self.node_pcount,
                self.node_block,
                self.slots,
                1 << self.dim,
                cell_node,
                s["st_node"],
                out,
            )
            if n >= 0:
                return out[:n]
            cap *= 4

    def count_subtree(self, cell_node: int, scratch: dict | None = None) -> int:
        s = scratch or self.make_scratch()
        return int(
            _k_count_subtree(
                self.node_child, self.node_pcount, 1 << self.dim, cell_node, s["st_node"]
            )
        )

    # -- test/validation helpers ----------------------------------------------

    def walk_leaves(self):
        """Yield (node, lo, hi, point_indices) for every current leaf."""
        d = self.dim
        stack = [(0, self.lo.copy(), self.hi.copy())]
        while stack:
            node, lo, hi = stack.pop()
            base = int(self.node_child[node])
            if base < 0:
                n = int(self.node_pcount[node])
                idx = (
                    self.slots[int(self.node_block[node]), :n].astype(np.int64)
                    if n > 0
                    else np.empty(0, dtype=np.int64)
                )
                yield node, lo, hi, idx
                continue
            mid = 0.5 * (lo + hi)
            for j in range(1 << d):
                clo = lo.copy()
                chi = hi.copy()
                for a in range(d):
                    if j & (1 << a):
                        clo[a] = mid[a]
                    else:
                        chi[a] = mid[a]
                stack.append((base + j, clo, chi))
