from __future__ import annotations

import threading

import numpy as np
import pytest

from frontfill.geometry import Box, ConstantSpacing, Disc
from frontfill.work_tree import (
    CellState,
    ProtocolError,
    RestartQueue,
    WorkTree,
    observe_adjacent_claims,
)

BOX01 = Box(lo=[0.0, 0.0], hi=[1.0, 1.0])


def grid(depth=2, domain=BOX01, h=0.01):
    return WorkTree(domain, ConstantSpacing(h), depth=depth)


class TestBuild:
    def test_single_cell_when_estimate_fits(self):
        # unit square, h=0.1 -> estimate 100 at the root
        wt = WorkTree.build(BOX01, ConstantSpacing(0.1), leaf_limit=100)
        assert wt.depth == 0
        assert wt.n_cells == 1

    def test_one_split_when_limit_quartered(self):
        # children estimate 100/4 = 25 each
        wt = WorkTree.build(BOX01, ConstantSpacing(0.1), leaf_limit=25)
        assert wt.depth == 1
        assert wt.n_cells == 4
        assert np.allclose(wt.estimate, 25.0)

    def test_minimal_depth(self):
        wt = WorkTree.build(BOX01, ConstantSpacing(0.01), leaf_limit=100)
        live = wt.estimate[wt.inert == 0]
        assert np.all(live <= 100)
        parent = WorkTree(BOX01, ConstantSpacing(0.01), depth=wt.depth - 1)
        assert np.any(parent.estimate[parent.inert == 0] > 100)

    def test_determinism(self):
        dom = Disc(center=[0.2, -0.1], radius=0.9)
        a = WorkTree.build(dom, ConstantSpacing(0.03), leaf_limit=60)
        b = WorkTree.build(dom, ConstantSpacing(0.03), leaf_limit=60)
        assert a.depth == b.depth
        np.testing.assert_array_equal(a.inert, b.inert)

    def test_inert_cells_only_fully_outside(self):
        dom = Disc(center=[0.0, 0.0], radius=1.0)
        wt = WorkTree(dom, ConstantSpacing(0.05), depth=4)
        rng = np.random.default_rng(0)
        # no point of the domain may fall into an inert cell
        pts = rng.uniform(-1, 1, size=(20000, 2))
        pts = pts[np.linalg.norm(pts, axis=1) <= 1.0]
        for p in pts[:3000]:
            assert not wt.inert[wt.cell_of_point(p)]

    def test_tiny_disc_inside_one_cell_not_inert(self):
        dom = Disc(center=[0.5, 0.5], radius=0.001)
        wt = WorkTree.build(dom, ConstantSpacing(0.0005), leaf_limit=100)
        cell = wt.cell_of_point([0.5, 0.5])
        assert not wt.inert[cell]


class TestNeighbors:
    def test_corner(self):
        wt = grid(depth=2)  # 4x4
        assert len(wt.neighbors(wt.cell_index((0, 0)))) == 3

    def test_interior(self):
        wt = grid(depth=2)
        assert len(wt.neighbors(wt.cell_index((1, 1)))) == 8

    def test_3d_interior(self):
        dom = Box(lo=[0.0] * 3, hi=[1.0] * 3)
        wt = WorkTree(dom, ConstantSpacing(0.05), depth=2)
        assert len(wt.neighbors(wt.cell_index((1, 1, 1)))) == 26

    def test_symmetry(self):
        wt = grid(depth=3)
        for cell in range(0, wt.n_cells, 7):
            for nb in wt.neighbors(cell):
                assert cell in wt.neighbors(nb)


class TestClaimProtocol:
    def test_single_thread_claims_everything(self):
        wt = grid(depth=2)
        for cell in range(wt.n_cells):
            res = wt.try_claim(cell, 0)
            # own neighbors never conflict
            assert res.claimed
        for cell in range(wt.n_cells):
            wt.release(cell, 0)
        assert wt.quiescent()

    def test_neighbor_conflict_enqueues(self):
        wt = grid(depth=2)
        center = wt.cell_index((1, 1))
        nb = wt.cell_index((1, 2))
        assert wt.try_claim(center, 0).claimed
        res = wt.try_claim(nb, 1)
        assert not res.claimed
        assert res.set_attempt  # thread 1 won the attempt TAS, then backed off
        assert res.won_enqueue
        assert wt.state(nb) is CellState.FAILED_CLAIM
        # second attempt by another thread: attempt flag already set
        res2 = wt.try_claim(nb, 2)
        assert not res2.claimed and not res2.set_attempt and not res2.won_enqueue

    def test_release_round_trip(self):
        wt = grid(depth=2)
        cell = wt.cell_index((2, 2))
        assert wt.try_claim(cell, 0).claimed
        wt.release(cell, 0)
        assert wt.state(cell) is CellState.UNCLAIMED
        assert wt.try_claim(cell, 1).claimed

    def test_release_promotes_failed_neighbors(self):
        wt = grid(depth=2)
        held = wt.cell_index((1, 1))
        other = wt.cell_index((3, 3))
        blocked = wt.cell_index((2, 3))  # neighbor of other
        assert wt.try_claim(held, 0).claimed
        assert wt.try_claim(other, 1).claimed
        res = wt.try_claim(blocked, 0)  # fails: adjacent to thread 1's claim
        assert not res.claimed and res.set_attempt
        wt.release(held, 0, failed_cells=[blocked])
        assert wt.state(blocked) is CellState.ENQUEUED
        # enqueued cells are claimable again once the conflicting claim is gone
        wt.release(other, 1)
        res2 = wt.try_claim(blocked, 2)
        assert res2.claimed and res2.was_enqueued

    def test_claimed_state_reports_owner(self):
        wt = grid(depth=2)
        cell = wt.cell_index((0, 3))
        wt.try_claim(cell, 7)
        assert wt.state(cell) is CellState.CLAIMED
        assert wt.owner(cell) == 7

    def test_release_unheld_cell_raises(self):
        wt = grid(depth=2)
        with pytest.raises(ProtocolError):
            wt.release(0, 0)

    def test_front_count(self):
        wt = grid(depth=2)
        cell = 5
        wt.try_claim(cell, 0)
        assert wt.adjust_front_count(cell, 0, +1) == 1
        assert wt.adjust_front_count(cell, 0, +1) == 2
        assert wt.adjust_front_count(cell, 0, -1) == 1
        with pytest.raises(ProtocolError):
            wt.adjust_front_count(cell, 1, +1)  # not the owner
        assert wt.adjust_front_count(cell, 0, -1) == 0
        with pytest.raises(ProtocolError):
            wt.adjust_front_count(cell, 0, -1)  # underflow
        wt.release(cell, 0)

    def test_release_with_pending_front_raises(self):
        wt = grid(depth=2)
        wt.try_claim(3, 0)
        wt.adjust_front_count(3, 0, +1)
        with pytest.raises(ProtocolError):
            wt.release(3, 0)
        wt.adjust_front_count(3, 0, -1)
        wt.release(3, 0)

    def test_inert_cell_never_claimable(self):
        dom = Disc(center=[0.0, 0.0], radius=1.0)
        wt = WorkTree(dom, ConstantSpacing(0.05), depth=3)
        inert_cells = np.nonzero(wt.inert)[0]
        assert len(inert_cells) > 0
        res = wt.try_claim(int(inert_cells[0]), 0)
        assert not res.claimed and not res.set_attempt and not res.won_enqueue
        assert wt.state(int(inert_cells[0])) is CellState.UNCLAIMED

    def test_state_decode_total(self):
        wt = grid(depth=2)
        assert wt.state(0) is CellState.UNCLAIMED
        wt.try_claim(0, 0)
        assert wt.state(0) is CellState.CLAIMED
        far = wt.cell_index((3, 3))
        nb_of_far = wt.cell_index((3, 2))
        wt.try_claim(far, 1)
        wt.try_claim(nb_of_far, 0)
        assert wt.state(nb_of_far) is CellState.FAILED_CLAIM
        wt.promote_failed([nb_of_far], 0)
        assert wt.state(nb_of_far) is CellState.ENQUEUED


class TestRestartQueue:
    def test_empty_drain(self):
        wt = grid(depth=2)
        q = RestartQueue()
        rng = np.random.default_rng(0)
        assert q.drain_stage(wt, [0, 1, 2, 3], rng) == {}

    def test_single_entry_single_assignment(self):
        wt = grid(depth=2)
        q = RestartQueue()
        cell = wt.cell_index((1, 1))
        # make the cell enqueued via a realistic conflict
        wt.try_claim(wt.cell_index((2, 2)), 1)
        res = wt.try_claim(cell, 0)
        assert res.won_enqueue
        q.push(17, cell)
        wt.promote_failed([cell], 0)
        wt.release(wt.cell_index((2, 2)), 1)
        got = q.drain_stage(wt, [0, 1, 2, 3], np.random.default_rng(0))
        assert list(got.values()) == [(17, cell)]
        assert len(q) == 0

    def test_stale_entries_dropped(self):
        wt = grid(depth=2)
        q = RestartQueue()
        q.push(3, 5)  # cell 5 is unclaimed, not enqueued -> stale
        got = q.drain_stage(wt, [0], np.random.default_rng(0))
        assert got == {}
        assert len(q) == 0

    @staticmethod
    def _enqueue_cells(wt, cells, blocker, q=None):
        """Drive cells into the ENQUEUED state through the real protocol:
        claim an adjacent blocker, fail claims against it, promote."""
        assert wt.try_claim(blocker, 9).claimed
        for c in cells:
            res = wt.try_claim(c, 0)
            assert not res.claimed and res.set_attempt
            if q is not None and res.won_enqueue:
                q.push(100 + c, c)
        wt.promote_failed(cells, 0)
        wt.release(blocker, 9)
        for c in cells:
            assert wt.state(c) is CellState.ENQUEUED

    def test_adjacent_entries_leftover_reinserted(self):
        wt = grid(depth=3)  # 8x8
        q = RestartQueue()
        # three mutually adjacent cells, all Moore neighbors of the blocker
        cells = [wt.cell_index(c) for c in ((4, 5), (5, 4), (5, 5))]
        self._enqueue_cells(wt, cells, wt.cell_index((4, 4)), q)
        assert len(q) == 3
        got = q.drain_stage(wt, [0, 1, 2, 3], np.random.default_rng(1))
        # mutual adjacency permits exactly one claim; the rest are reinserted
        assert len(got) == 1
        assert len(q) == 2

    def test_duplicate_cells_deduped(self):
        wt = grid(depth=2)
        q = RestartQueue()
        cell = wt.cell_index((0, 0))
        self._enqueue_cells(wt, [cell], wt.cell_index((1, 1)))
        q.push(1, cell)
        q.push(2, cell)
        got = q.drain_stage(wt, [0, 1], np.random.default_rng(0))
        assert len(got) == 1
        assert len(q) == 0


class TestStress:
    def test_separation_under_contention(self):
        """Scaled-down version of the acceptance stress: concurrent random
        claim/release cycles with a bracketing observer."""
        wt = grid(depth=4, h=0.001)  # 16x16
        n_threads = 4
        cycles = 20_000
        violations = [0]
        stop = threading.Event()

        def worker(tid, seed):
            rng = np.random.default_rng(seed)
            failed: dict[int, bool] = {}
            for c in rng.integers(0, wt.n_cells, size=cycles):
                c = int(c)
                res = wt.try_claim(c, tid)
                if res.claimed:
                    wt.adjust_front_count(c, tid, +1)
                    wt.adjust_front_count(c, tid, -1)
                    wt.release(c, tid, list(failed))
                    failed.clear()
                elif res.set_attempt:
                    failed[c] = True
            wt.promote_failed(list(failed), tid)

        def observer():
            rng = np.random.default_rng(12345)
            while not stop.is_set():
                violations[0] += observe_adjacent_claims(wt, rng, 1000)

        workers = [threading.Thread(target=worker, args=(t, 50 + t)) for t in range(n_threads)]
        obs = threading.Thread(target=observer)
        obs.start()
        for t in workers:
            t.start()
        for t in workers:
            t.join()
        stop.set()
        obs.join()
        assert violations[0] == 0
        assert wt.quiescent()

    def test_event_log_records_transitions(self):
        wt = WorkTree(BOX01, ConstantSpacing(0.01), depth=2, record_events=True)
        wt.try_claim(5, 0)
        wt.release(5, 0)
        kinds = [e[3] for e in wt.events]
        assert kinds == ["claim", "release"]
