"""Density-balanced work grid and the lock-free cell claim protocol.

The work tree is a uniform-depth subdivision of the bounding box, realized as
an implicit d-dimensional grid with index arithmetic for Moore neighborhoods.
Each cell carries an attempt flag, an enqueued flag and a lock record; a
thread claims a cell by test-and-setting the attempt flag and then scanning
all Moore neighbors for foreign attempt flags, backing off into the enqueued
state on conflict. Two cells claimed by different threads are therefore never
Moore neighbors, which is what permits lock-free spatial-tree insertion one
level below.

Flag semantics and ordering: the test-and-set and the subsequent neighbor
scans must form a single total order across threads. Flags live in builtin
dicts keyed by cell index and are manipulated only through single C-level
dict operations (``setdefault``, ``get``, ``pop``), each of which is atomic
and sequentially consistent under the CPython GIL. Claim tokens are fresh
``(thread, sequence)`` tuples compared by identity, so a thread re-attempting
a cell whose attempt flag it already left behind is correctly refused.

On release a cell's own state is reset first (locked, then the claim flags)
and only afterwards are the neighbors this thread failed to claim promoted to
the enqueued state; promotion sets the enqueued flag before clearing the
attempt flag so the cell is never observable as unclaimed while deferred
work for it exists.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import BOX, DISC, Domain, Spacing

from .spatial_index import MAX_TREE_DEPTH, CapacityError

#: Hard cap on work-grid size; beyond this the spacing input is degenerate.
MAX_WORK_CELLS = 1 << 24


class ProtocolError(RuntimeError):
    """A thread violated the claim protocol contract."""


class CellState(Enum):
    UNCLAIMED = "unclaimed"
    FAILED_CLAIM = "failed_claim"
    CLAIMED = "claimed"
    ENQUEUED = "enqueued"


@dataclass(frozen=True)
class ClaimResult:
    claimed: bool
    was_enqueued: bool = False
    set_attempt: bool = False
    won_enqueue: bool = False


class WorkTree:
    """Uniform-depth work grid over the domain bounding box."""

    def __init__(
        self,
        domain: Domain,
        spacing: Spacing,
        depth: int,
        *,
        record_events: bool = False,
    ):
        lo, hi = domain.bounding_box()
        d = lo.size
        nx = 1 << depth
        n_cells = nx**d
        if n_cells > MAX_WORK_CELLS:
            raise CapacityError(
                f"work grid depth {depth} needs {n_cells} cells (cap {MAX_WORK_CELLS})"
            )
        self.domain = domain
        self.spacing = spacing
        self.dim = int(d)
        self.depth = int(depth)
        self.nx = int(nx)
        self.n_cells = int(n_cells)
        self.lo = lo.astype(np.float64)
        self.hi = hi.astype(np.float64)
        self.cell_side = (self.hi - self.lo) / nx

        self.estimate = np.empty(n_cells, dtype=np.float64)
        self.inert = np.zeros(n_cells, dtype=np.uint8)
        self._fill_estimates_and_inert()

        #: per-cell count of the owner's expansion-queue entries (owner-written)
        self.front_count = np.zeros(n_cells, dtype=np.int64)
        #: claim generation counter, incremented on every successful claim
        self.gen = np.zeros(n_cells, dtype=np.int64)
        #: cross-link into the spatial tree (filled by SpatialTree.prebuild)
        self.spatial_node = np.full(n_cells, -1, dtype=np.int64)

        self._attempt: dict[int, tuple] = {}
        self._enq: dict[int, tuple] = {}
        self._locked: dict[int, int] = {}
        self._seq = itertools.count()
        self._offsets = [
            off for off in itertools.product((-1, 0, 1), repeat=d) if any(off)
        ]
        self._nb_cache: dict[int, list[int]] | None = {} if n_cells <= 65536 else None
        self.events: list[tuple] | None = [] if record_events else None

    # -- construction ---------------------------------------------------------

    @classmethod
    def build(
        cls,
        domain: Domain,
        spacing: Spacing,
        leaf_limit: int,
        *,
        record_events: bool = False,
    ) -> "WorkTree":
        """Smallest uniform depth whose non-inert cells all estimate at or
        below ``leaf_limit`` points."""
        if leaf_limit < 1:
            raise ValueError("leaf limit must be at least 1")
        depth = 0
        while True:
            if depth + 1 > MAX_TREE_DEPTH:
                raise CapacityError("work tree depth would exceed the spatial depth cap")
            tree = cls(domain, spacing, depth, record_events=record_events)
            live = tree.estimate[tree.inert == 0]
            if live.size == 0 or np.all(live <= leaf_limit):
                return tree
            depth += 1

    def _fill_estimates_and_inert(self):
        d, nx = self.dim, self.nx
        axes = [np.arange(nx)* self.cell_side[a] + self.lo[a] for a in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        cell_lo = np.stack([m.ravel() for m in mesh], axis=1)
        cell_hi = cell_lo + self.cell_side
        centers = cell_lo + self.cell_side / 2.0
        h = self.spacing.at_many(centers)
        vol = float(np.prod(self.cell_side))
        self.estimate[:] = vol / h**d

        kind, params = self.domain.kernel_code()
        if kind == DISC:
            center, radius = params[:d], params[d]
            nearest = np.clip(center, cell_lo, cell_hi)
            dist2 = np.sum((nearest - center) ** 2, axis=1)
            self.inert[:] = dist2 > radius * radius
        elif kind == BOX:
            blo, bhi = params[:d], params[d:]
            overlap = np.all(cell_hi >= blo, axis=1) & np.all(cell_lo <= bhi, axis=1)
            self.inert[:] = ~overlap
        else:  # pragma: no cover
            raise ValueError(f"unknown domain kind {kind}")

    # -- grid arithmetic -------------------------------------------------------

    def grid_coords(self, cell: int) -> tuple[int, ...]:
        coords = [0] * self.dim
        for a in range(self.dim - 1, -1, -1):
            coords[a] = cell % self.nx
            cell //= self.nx
        return tuple(coords)

    def cell_index(self, coords) -> int:
        idx = 0
        for a in range(self.dim):
            c = int(coords[a])
            if not 0 <= c < self.nx:
                raise ValueError(f"grid coordinate {coords} outside 0..{self.nx - 1}")
            idx = idx * self.nx + c
        return idx

    def cell_of_point(self, p) -> int:
        """Containing cell by direct box arithmetic (upper boundary closed)."""
        p = np.asarray(p, dtype=np.float64)
        ix = np.floor((p - self.lo) / self.cell_side).astype(np.int64)
        ix = np.clip(ix, 0, self.nx - 1)
        idx = 0
        for a in range(self.dim):
            idx = idx * self.nx + int(ix[a])
        return idx

    def cell_box(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        coords = np.array(self.grid_coords(cell), dtype=np.float64)
        lo = self.lo + coords * self.cell_side
        return lo, lo + self.cell_side

    def neighbors(self, cell: int) -> list[int]:
        """Moore neighborhood clipped to the grid (inert cells included)."""
        if self._nb_cache is not None:
            cached = self._nb_cache.get(cell)
            if cached is not None:
                return cached
        coords = self.grid_coords(cell)
        nx = self.nx
        out = []
        for off in self._offsets:
            idx = 0
            for a in range(self.dim):
                v = coords[a] + off[a]
                if v < 0 or v >= nx:
                    idx = -1
                    break
                idx = idx * nx + v
            if idx >= 0:
                out.append(idx)
        if self._nb_cache is not None:
            self._nb_cache[cell] = out
        return out

    # -- claim protocol ---------------------------------------------------------

    def try_claim(self, cell: int, tid: int) -> ClaimResult:
        """Dekker-style claim: test-and-set the attempt flag, then scan the
        Moore neighborhood; back off into the enqueued state on conflict."""
        if self.inert[cell]:
            return ClaimResult(claimed=False)
        token = (tid, next(self._seq))
        prior = self._attempt.setdefault(cell, token)
        if prior is token:
            conflict = False
            for nb in self.neighbors(cell):
                t = self._attempt.get(nb)
                if t is not None and t[0] != tid:
                    conflict = True
                    break
            if not conflict:
                self._locked[cell] = tid
                self.gen[cell] += 1
                was_enq = cell in self._enq
                self._log(tid, cell, "claim")
                return ClaimResult(
                    claimed=True, was_enqueued=was_enq, set_attempt=True
                )
            set_attempt = True
        else:
            set_attempt = False
        etoken = (tid, next(self._seq))
        eprior = self._enq.setdefault(cell, etoken)
        self._log(tid, cell, "conflict")
        return ClaimResult(
            claimed=False, set_attempt=set_attempt, won_enqueue=eprior is etoken
        )

    def release(self, cell: int, tid: int, failed_cells=()) -> None:
        """Reset the cell to unclaimed, then promote this thread's failed
        claims to the enqueued state so they become claimable again."""
        if self._locked.get(cell) != tid:
            raise ProtocolError(f"thread {tid} releasing cell {cell} it does not hold")
        if self.front_count[cell] != 0:
            raise ProtocolError(
                f"release of cell {cell} with nonzero front count {self.front_count[cell]}"
            )
        del self._locked[cell]
        self._enq.pop(cell, None)
        tok = self._attempt.pop(cell, None)
        if tok is None or tok[0] != tid:  # pragma: no cover - protocol breakage
            raise ProtocolError(f"cell {cell} attempt flag corrupt at release")
        self._log(tid, cell, "release")
        self.promote_failed(failed_cells, tid)

    def promote_failed(self, cells, tid: int) -> None:
        """Move cells whose attempt flag this thread left behind into the
        enqueued state. Enqueued is set before the attempt flag clears so the
        deferred work they carry stays discoverable."""
        for c in cells:
            tok = self._attempt.get(c)
            if tok is None or tok[0] != tid:
                raise ProtocolError(f"thread {tid} promoting cell {c} it never marked")
            self._enq.setdefault(c, (tid, next(self._seq)))
            del self._attempt[c]
            self._log(tid, c, "promote")

    def adjust_front_count(self, cell: int, tid: int, delta: int) -> int:
        if self._locked.get(cell) != tid:
            raise ProtocolError(f"thread {tid} adjusting front count of unheld cell {cell}")
        new = int(self.front_count[cell]) + delta
        if new < 0:
            raise ProtocolError(f"front count underflow on cell {cell}")
        self.front_count[cell] = new
        return new

    # -- observability -----------------------------------------------------------

    def state(self, cell: int) -> CellState:
        if cell in self._attempt:
            return CellState.CLAIMED if cell in self._locked else CellState.FAILED_CLAIM
        return CellState.ENQUEUED if cell in self._enq else CellState.UNCLAIMED

    def owner(self, cell: int):
        return self._locked.get(cell)

    def quiescent(self) -> bool:
        """True iff no cell is claimed or carries a leftover attempt flag."""
        return not self._attempt and not self._locked

    def _log(self, tid: int, cell: int, transition: str) -> None:
        if self.events is not None:
            self.events.append((time.perf_counter_ns(), tid, cell, transition))

    def write_events_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("timestamp_ns,thread,cell,transition\n")
            for ts, tid, cell, tr in self.events or ():
                f.write(f"{ts},{tid},{cell},{tr}\n")


def observe_adjacent_claims(tree: WorkTree, rng: np.random.Generator, samples: int) -> int:
    """Instrumented separation observer: counts proven simultaneous claims of
    Moore-neighbor cells by different threads.

    A naive two-point snapshot can false-positive when a release and a claim
    interleave with the reads, so a violation is only counted when the first
    cell is provably locked across the whole bracket: same owner and same
    claim generation before and after the neighbor was seen locked.
    """
    violations = 0
    n = tree.n_cells
    for _ in range(samples):
        a = int(rng.integers(n))
        owner_a = tree._locked.get(a)
        if owner_a is None:
            continue
        gen_a = int(tree.gen[a])
        nbs = tree.neighbors(a)
        b = nbs[int(rng.integers(len(nbs)))]
        owner_b = tree._locked.get(b)
        if owner_b is None or owner_b == owner_a:
            continue
        if tree._locked.get(a) == owner_a and int(tree.gen[a]) == gen_a:
            violations += 1
    return violations


class RestartQueue:
    """Global guarded queue of deferred (point index, cell index) entries."""

    def __init__(self):
        self._entries: list[tuple[int, int]] = []
        self._lock = threading.Lock()

    def push(self, point_index: int, cell_index: int) -> None:
        with self._lock:
            self._entries.append((int(point_index), int(cell_index)))

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def snapshot(self) -> list[tuple[int, int]]:
        with self._lock:
            return list(self._entries)

    def drain_stage(
        self, tree: WorkTree, thread_ids, rng: np.random.Generator
    ) -> dict[int, tuple[int, int]]:
        """Stage-boundary drain: shuffle the entries whose cells still read
        enqueued and claim at most one starting cell per thread. Entries that
        could not be claimed go back into the queue; entries whose cells are
        no longer enqueued were finished by another thread and are dropped.

        Requires external quiescence (all workers at the stage barrier).
        """
        with self._lock:
            entries = self._entries
            self._entries = []
        seen: set[int] = set()
        deduped = []
        for pidx, cell in entries:
            if cell not in seen:
                seen.add(cell)
                deduped.append((pidx, cell))
        eligible = [e for e in deduped if tree.state(e[1]) is CellState.ENQUEUED]
        order = rng.permutation(len(eligible))

        assignments: dict[int, tuple[int, int]] = {}
        leftovers: list[tuple[int, int]] = []
        drain_failed: list[tuple[int, int]] = []
        ti = 0
        for k in order:
            entry = eligible[int(k)]
            if ti >= len(thread_ids):
                leftovers.append(entry)
                continue
            tid = thread_ids[ti]
            res = tree.try_claim(entry[1], tid)
            if res.claimed:
                assignments[tid] = entry
                tree._log(tid, entry[1], "assign")
                ti += 1
            else:
                leftovers.append(entry)
                if res.set_attempt:
                    drain_failed.append((entry[1], tid))
        for cell, tid in drain_failed:
            tree.promote_failed([cell], tid)
        if leftovers:
            with self._lock:
                self._entries.extend(leftovers)
        return assignments
