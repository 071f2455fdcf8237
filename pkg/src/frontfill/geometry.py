"""Domain shapes, spacing functions and candidate generation.

Everything here is pure: no shared mutable state, safe from any thread.
The scalar cores are nopython-compiled so the fill kernels and the Python
API run the exact same code. Domains are closed sets (boundary points count
as inside), which keeps seeds placed exactly on the border valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

from .rng import RandomStream, rng_gauss, rng_uniform

DISC = 0
BOX = 1
SPACING_CONSTANT = 0
SPACING_RADIAL = 1

#: Largest allowed max/min ratio for a variable spacing function. The
#: uniform-depth work grid is only valid for mild density variation.
MILDNESS_RATIO = 4.0


def _as_coords(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-d coordinate vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


@dataclass(frozen=True)
class Disc:
    """Closed ball of given center and radius (any dimension)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_coords(self.center, "center"))
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be positive and finite, got {self.radius}")

    @property
    def dim(self) -> int:
        return self.center.size

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.sum((p - self.center) ** 2) <= self.radius**2)

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        d2 = np.sum((pts - self.center) ** 2, axis=1)
        return d2 <= self.radius**2

    def nearest_boundary_point(self, p: np.ndarray) -> np.ndarray | None:
        v = p - self.center
        norm = float(np.linalg.norm(v))
        if norm < 1e-12 * self.radius:
            return None  # direction undefined at the exact center
        return self.center + v * (self.radius / norm)

    def kernel_code(self) -> tuple[int, np.ndarray]:
        return DISC, np.concatenate([self.center, [self.radius]])


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box [lo, hi]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _as_coords(self.lo, "lo"))
        object.__setattr__(self, "hi", _as_coords(self.hi, "hi"))
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo and hi must have the same dimension")
        if not np.all(self.lo < self.hi):
            raise ValueError(f"box must satisfy lo < hi componentwise, got {self.lo}..{self.hi}")

    @property
    def dim(self) -> int:
        return self.lo.size

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo.copy(), self.hi.copy()

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        return np.all(pts >= self.lo, axis=1) & np.all(pts <= self.hi, axis=1)

    def nearest_boundary_point(self, p: np.ndarray) -> np.ndarray | None:
        # Nearest face of an interior point; exterior points clamp onto the box.
        q = np.clip(p, self.lo, self.hi)
        if np.any(q != p):
            return q
        gaps_lo = q - self.lo
        gaps_hi = self.hi - q
        axis = int(np.argmin(np.minimum(gaps_lo, gaps_hi)))
        b = q.copy()
        b[axis] = self.lo[axis] if gaps_lo[axis] <= gaps_hi[axis] else self.hi[axis]
        return b

    def kernel_code(self) -> tuple[int, np.ndarray]:
        return BOX, np.concatenate([self.lo, self.hi])


Domain = Union[Disc, Box]


def domain_scale(domain: Domain) -> float:
    """Characteristic length used for seed-relaxation step clipping."""
    if isinstance(domain, Disc):
        return float(domain.radius)
    lo, hi = domain.bounding_box()
    return float(np.max(hi - lo)) / 2.0


def domain_center(domain: Domain) -> np.ndarray:
    lo, hi = domain.bounding_box()
    return (lo + hi) / 2.0


@dataclass(frozen=True)
class ConstantSpacing:
    h: float

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"spacing must be positive and finite, got {self.h}")

    def at(self, p) -> float:
        return self.h

    def at_many(self, pts: np.ndarray) -> np.ndarray:
        return np.full(len(pts), self.h)

    def bounds(self) -> tuple[float, float]:
        return self.h, self.h

    def kernel_code(self) -> tuple[int, np.ndarray]:
        return SPACING_CONSTANT, np.array([self.h, 0.0, 1.0])


@dataclass(frozen=True)
class RadialLinearSpacing:
    """Spacing interpolated linearly in distance from ``center``.

    ``h0`` applies at the center, ``h1`` at distance ``scale`` and beyond.
    Only mild variation is supported: max/min must not exceed
    :data:`MILDNESS_RATIO`, otherwise the uniform-depth work grid would no
    longer balance.
    """

    h0: float
    h1: float
    center: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_coords(self.center, "center"))
        for v in (self.h0, self.h1):
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"spacing endpoints must be positive, got {self.h0}, {self.h1}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        ratio = max(self.h0, self.h1) / min(self.h0, self.h1)
        if ratio > MILDNESS_RATIO:
            raise ValueError(
                f"spacing ratio {ratio:.3g} exceeds the mildness bound {MILDNESS_RATIO}"
            )

    def at(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        r = min(float(np.linalg.norm(p - self.center)) / self.scale, 1.0)
        return self.h0 + (self.h1 - self.h0) * r

    def at_many(self, pts: np.ndarray) -> np.ndarray:
        r = np.minimum(np.linalg.norm(pts - self.center, axis=1) / self.scale, 1.0)
        return self.h0 + (self.h1 - self.h0) * r

    def bounds(self) -> tuple[float, float]:
        return min(self.h0, self.h1), max(self.h0, self.h1)

    def kernel_code(self) -> tuple[int, np.ndarray]:
        return SPACING_RADIAL, np.concatenate([[self.h0, self.h1, self.scale], self.center])


Spacing = Union[ConstantSpacing, RadialLinearSpacing]


def radial_linear_for(domain: Domain, h0: float, h1: float) -> RadialLinearSpacing:
    """Radial spacing anchored at the domain center, reaching ``h1`` at its edge."""
    if isinstance(domain, Disc):
        return RadialLinearSpacing(h0, h1, domain.center, domain.radius)
    lo, hi = domain.bounding_box()
    scale = float(np.linalg.norm(hi - lo)) / 2.0
    return RadialLinearSpacing(h0, h1, (lo + hi) / 2.0, scale)


# --- nopython cores ---------------------------------------------------------


@njit(cache=True)
def kernel_contains(kind, params, p):
    d = p.shape[0]
    if kind == DISC:
        acc = 0.0
        for a in range(d):
            dv = p[a] - params[a]
            acc += dv * dv
        return acc <= params[d] * params[d]
    for a in range(d):
        if p[a] < params[a] or p[a] > params[d + a]:
            return False
    return True


@njit(cache=True)
def kernel_spacing(kind, params, p):
    if kind == SPACING_CONSTANT:
        return params[0]
    d = p.shape[0]
    acc = 0.0
    for a in range(d):
        dv = p[a] - params[3 + a]
        acc += dv * dv
    r = np.sqrt(acc) / params[2]
    if r > 1.0:
        r = 1.0
    return params[0] + (params[1] - params[0]) * r


@njit(cache=True)
def kernel_candidates_rotated(p, radius, k, rot, out):
    # 2-d only: k equally spaced directions offset by one shared rotation.
    for j in range(k):
        ang = rot + 2.0 * np.pi * j / k
        out[j, 0] = p[0] + radius * np.cos(ang)
        out[j, 1] = p[1] + radius * np.sin(ang)


@njit(cache=True)
def kernel_candidates(p, radius, k, state, row, out):
    d = p.shape[0]
    if d == 2:
        kernel_candidates_rotated(p, radius, k, rng_uniform(state, row) * 2.0 * np.pi, out)
        return
    for j in range(k):
        acc = 0.0
        while acc < 1e-24:
            acc = 0.0
            for a in range(d):
                g = rng_gauss(state, row)
                out[j, a] = g
                acc += g * g
        inv = radius / np.sqrt(acc)
        for a in range(d):
            out[j, a] = p[a] + out[j, a] * inv


def generate_candidates(p, radius: float, k: int, rng: RandomStream) -> np.ndarray:
    """k points at exactly ``radius`` from ``p``; random rotation in 2-d,
    independent uniform directions on the sphere in higher dimensions."""
    p = np.asarray(p, dtype=np.float64)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if k < 1:
        raise ValueError("k must be at least 1")
    out = np.empty((k, p.size), dtype=np.float64)
    kernel_candidates(p, float(radius), int(k), rng.kernel_state, 0, out)
    return out


def estimate_count(cell_box: tuple[np.ndarray, np.ndarray], spacing: Spacing) -> float:
    """Expected point count of a box, volume / h(center)^d.

    Only meaningful for relative load balancing between sibling cells; no
    packing constant is applied.
    """
    lo = np.asarray(cell_box[0], dtype=np.float64)
    hi = np.asarray(cell_box[1], dtype=np.float64)
    if lo.shape != hi.shape or not np.all(hi > lo):
        raise ValueError(f"invalid box {lo}..{hi}")
    h = spacing.at((lo + hi) / 2.0)
    return float(np.prod(hi - lo) / h ** lo.size)


def integral_count_estimate(domain: Domain, spacing: Spacing, resolution: int = 96) -> float:
    """Capacity planning estimate: sum of 1/h^d over a grid restricted to the
    domain. Unlike :func:`estimate_count` this integrates spacing variation,
    so preallocation stays safe for variable h."""
    lo, hi = domain.bounding_box()
    d = lo.size
    n = resolution if d <= 2 else max(8, int(round(resolution ** (2.0 / d))))
    axes = [np.linspace(lo[a], hi[a], n, endpoint=False) + (hi[a] - lo[a]) / (2 * n) for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    inside = domain.contains_many(centers)
    if not inside.any():
        return 0.0
    h = spacing.at_many(centers[inside])
    cell_vol = float(np.prod((hi - lo) / n))
    return float(np.sum(cell_vol / h**d))
