from __future__ import annotations

import numpy as np
import pytest

from frontfill.geometry import (
    Box,
    ConstantSpacing,
    Disc,
    RadialLinearSpacing,
    estimate_count,
    generate_candidates,
    integral_count_estimate,
    kernel_candidates_rotated,
    radial_linear_for,
)
from frontfill.rng import RandomStream


class TestContains:
    def test_disc_center(self, unit_disc):
        assert unit_disc.contains([0.0, 0.0])

    def test_disc_outside(self, unit_disc):
        assert not unit_disc.contains([2.0, 0.0])

    def test_disc_closed_boundary(self, unit_disc):
        assert unit_disc.contains([1.0, 0.0])

    def test_box_closed_bounds(self):
        box = Box(lo=[0.0, 0.0], hi=[2.0, 1.0])
        assert box.contains([0.0, 0.0])
        assert box.contains([2.0, 1.0])
        assert not box.contains([2.0 + 1e-12, 0.5])

    def test_contains_implies_bounding_box(self, unit_disc):
        rng = np.random.default_rng(0)
        lo, hi = unit_disc.bounding_box()
        pts = rng.uniform(-2, 2, size=(2000, 2))
        inside = unit_disc.contains_many(pts)
        in_box = np.all(pts >= lo, axis=1) & np.all(pts <= hi, axis=1)
        assert np.all(~inside | in_box)

    def test_validation(self):
        with pytest.raises(ValueError):
            Disc(center=[0.0, 0.0], radius=-1.0)
        with pytest.raises(ValueError):
            Box(lo=[0.0, 1.0], hi=[1.0, 0.5])
        with pytest.raises(ValueError):
            Disc(center=[np.nan, 0.0], radius=1.0)


class TestSpacing:
    def test_constant(self):
        s = ConstantSpacing(0.01)
        assert s.at([0.3, 0.7]) == 0.01
        assert np.all(s.at_many(np.zeros((5, 2))) == 0.01)

    def test_radial_endpoints(self, unit_disc):
        s = radial_linear_for(unit_disc, 0.01, 0.02)
        assert s.at([0.0, 0.0]) == pytest.approx(0.01)
        assert s.at([1.0, 0.0]) == pytest.approx(0.02)

    def test_radial_midpoint(self, unit_disc):
        s = radial_linear_for(unit_disc, 0.01, 0.02)
        assert s.at([0.5, 0.0]) == pytest.approx(0.015)
        assert s.at([0.0, -0.5]) == pytest.approx(0.015)

    def test_radial_clamps_beyond_scale(self, unit_disc):
        s = radial_linear_for(unit_disc, 0.01, 0.02)
        # bounding-box corner is outside the disc but must stay positive/finite
        assert s.at([1.0, 1.0]) == pytest.approx(0.02)

    def test_mildness_bound(self):
        with pytest.raises(ValueError, match="mildness"):
            RadialLinearSpacing(0.01, 0.05, center=np.zeros(2), scale=1.0)
        RadialLinearSpacing(0.01, 0.04, center=np.zeros(2), scale=1.0)  # ratio 4 ok


class TestCandidates:
    def test_axis_aligned_rotation_zero(self):
        out = np.empty((4, 2))
        kernel_candidates_rotated(np.zeros(2), 1.0, 4, 0.0, out)
        expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        np.testing.assert_allclose(out, expected, atol=1e-15)

    @pytest.mark.parametrize("d,k", [(2, 6), (2, 13), (3, 12), (4, 7)])
    def test_distance_exact(self, d, k):
        rng = RandomStream(11, 0)
        p = np.linspace(0.5, 1.5, d)
        radius = 0.37
        out = generate_candidates(p, radius, k, rng)
        dist = np.linalg.norm(out - p, axis=1)
        assert np.all(np.abs(dist - radius) <= 1e-12 * radius)

    def test_3d_direction_mean(self):
        # CLT oracle: mean of 1e5 uniform directions has norm < 0.02 (~3 sigma)
        rng = RandomStream(5, 0)
        k = 100_000
        out = generate_candidates(np.zeros(3), 1.0, k, rng)
        assert np.linalg.norm(out.mean(axis=0)) < 0.02

    def test_same_stream_same_candidates(self):
        a = generate_candidates(np.zeros(2), 1.0, 6, RandomStream(3, 1))
        b = generate_candidates(np.zeros(2), 1.0, 6, RandomStream(3, 1))
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            generate_candidates(np.zeros(2), 0.0, 4, RandomStream(0))
        with pytest.raises(ValueError):
            generate_candidates(np.zeros(2), 1.0, 0, RandomStream(0))


class TestEstimateCount:
    def test_unit_square(self):
        box = (np.zeros(2), np.ones(2))
        assert estimate_count(box, ConstantSpacing(0.1)) == pytest.approx(100.0)
        assert estimate_count(box, ConstantSpacing(0.01)) == pytest.approx(10_000.0)

    def test_volume_scaling(self):
        quarter = (np.zeros(2), np.full(2, 0.5))
        assert estimate_count(quarter, ConstantSpacing(0.1)) == pytest.approx(25.0)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_halves_by_2d_under_bisection(self, d):
        rng = np.random.default_rng(d)
        lo = rng.uniform(-1, 0, d)
        hi = lo + rng.uniform(0.5, 2.0, d)
        s = ConstantSpacing(0.05)
        parent = estimate_count((lo, hi), s)
        mid = 0.5 * (lo + hi)
        total = 0.0
        for j in range(1 << d):
            clo, chi = lo.copy(), hi.copy()
            for a in range(d):
                if j & (1 << a):
                    clo[a] = mid[a]
                else:
                    chi[a] = mid[a]
            child = estimate_count((clo, chi), s)
            assert child == pytest.approx(parent / (1 << d))
            total += child
        assert total == pytest.approx(parent)

    def test_integral_estimate_matches_constant(self, unit_disc):
        s = ConstantSpacing(0.05)
        est = integral_count_estimate(unit_disc, s)
        assert est == pytest.approx(np.pi / 0.05**2, rel=0.05)
