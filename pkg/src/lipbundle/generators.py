"""Deterministic generators for benchmark measures and curves.

Self-similar measures carry equal weights per depth cell; curves come
out as polylines ready for length-measure discretization.
"""

from __future__ import annotations

import numpy as np

from .measures import AtomicMeasure, CurveFamily, PolylineCurve

__all__ = [
    "cantor_dust",
    "cantor_line",
    "koch",
    "sierpinski_carpet",
    "grid_lebesgue",
    "circle",
    "segment",
    "MAX_DEPTH",
    "MAX_GRID",
]

MAX_DEPTH = 7
MAX_GRID = 512


def _check_depth(depth: int) -> None:
    if not 0 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in 0..{MAX_DEPTH}")


def _quarter_cantor_centers(depth: int) -> np.ndarray:
    """Centers of the 2^depth cells of the 1/4-Cantor set on [0, 1]."""
    cells = [(0.0, 1.0)]
    for _ in range(depth):
        nxt = []
        for lo, hi in cells:
            span = hi - lo
            nxt.append((lo, lo + span / 4))
            nxt.append((hi - span / 4, hi))
        cells = nxt
    return np.array([(lo + hi) / 2 for lo, hi in cells])


def cantor_dust(depth: int, n: int = 2) -> AtomicMeasure:
    """Product of 1/4-Cantor sets: 2^(n*depth) atoms of equal weight."""
    _check_depth(depth)
    axis = _quarter_cantor_centers(depth)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    pos = np.stack([g.ravel() for g in grids], axis=1)
    w = np.full(len(pos), 1.0 / len(pos))
    return AtomicMeasure(n, pos, w)


def cantor_line(depth: int, axis: int = 0, level: float = 0.0, n: int = 2,
                ratio: float = 1.0 / 3.0) -> np.ndarray:
    """Middle-thirds-style Cantor point set along one axis at a fixed level."""
    _check_depth(depth)
    cells = [(0.0, 1.0)]
    keep = (1.0 - ratio) / 2.0
    for _ in range(depth):
        nxt = []
        for lo, hi in cells:
            span = hi - lo
            nxt.append((lo, lo + span * keep))
            nxt.append((hi - span * keep, hi))
        cells = nxt
    centers = np.array([(lo + hi) / 2 for lo, hi in cells])
    pts = np.full((len(centers), n), level, dtype=float)
    pts[:, axis] = centers
    return pts


def koch(depth: int) -> PolylineCurve:
    """Koch curve over the unit base segment: 4^depth segments of length 3^-depth."""
    _check_depth(depth)
    pts = [np.array([0.0, 0.0]), np.array([1.0, 0.0])]
    rot = np.array([[0.5, -np.sqrt(3) / 2], [np.sqrt(3) / 2, 0.5]])
    for _ in range(depth):
        nxt = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            d = (b - a) / 3.0
            p1 = a + d
            p2 = p1 + rot @ d
            p3 = a + 2 * d
            nxt.extend([p1, p2, p3, b])
        pts = nxt
    return PolylineCurve(np.array(pts))


def sierpinski_carpet(depth: int) -> AtomicMeasure:
    """Canonical carpet measure: 8^depth cells of equal weight."""
    _check_depth(depth)
    cells = [(0.0, 0.0, 1.0)]
    for _ in range(depth):
        nxt = []
        for x, y, s in cells:
            t = s / 3.0
            for i in range(3):
                for j in range(3):
                    if i == 1 and j == 1:
                        continue
                    nxt.append((x + i * t, y + j * t, t))
        cells = nxt
    pos = np.array([(x + s / 2, y + s / 2) for x, y, s in cells])
    w = np.full(len(pos), 1.0 / len(pos))
    return AtomicMeasure(2, pos, w)


def grid_lebesgue(n: int, m: int) -> AtomicMeasure:
    """Cell-center sampling of Lebesgue measure on the unit n-cube."""
    if not 1 <= m <= MAX_GRID:
        raise ValueError(f"grid size must be in 1..{MAX_GRID}")
    axis = (np.arange(m) + 0.5) / m
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    pos = np.stack([g.ravel() for g in grids], axis=1)
    w = np.full(len(pos), 1.0 / len(pos))
    return AtomicMeasure(n, pos, w)


def circle(segments: int = 360, radius: float = 1.0, center=(0.0, 0.0)) -> PolylineCurve:
    """Closed regular polygon inscribed in the circle."""
    theta = 2 * np.pi * np.arange(segments + 1) / segments
    pts = np.column_stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)]
    )
    pts[-1] = pts[0]
    return PolylineCurve(pts)


def segment(a, b) -> PolylineCurve:
    return PolylineCurve(np.array([a, b], dtype=float))


def curve_family_of(curve: PolylineCurve, dt: float = 1.0) -> CurveFamily:
    return CurveFamily([(dt, curve)])
