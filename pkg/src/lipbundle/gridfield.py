"""Regularly sampled scalar fields with multilinear interpolation.

All constructed Lipschitz functions live on these grids; evaluation
clamps to the domain edge so probe ladders never read garbage, and
callers are expected to keep probes inside the domain (the quotient
machinery checks this explicitly).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import ndimage

__all__ = ["GridSpec", "GridField"]


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    spacing: float
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if len(self.origin) != len(self.shape):
            raise ValueError("origin and shape rank mismatch")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")

    @property
    def n(self) -> int:
        return len(self.shape)

    def top(self) -> np.ndarray:
        return np.array(self.origin) + self.spacing * (np.array(self.shape) - 1)

    def node_coordinates(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.shape[axis])

    def index_of(self, x) -> tuple:
        rel = (np.asarray(x, dtype=float) - np.array(self.origin)) / self.spacing
        return tuple(int(round(c)) for c in rel)

    def subwindow(self, lo_corner, hi_corner) -> tuple["GridSpec", tuple]:
        """Aligned subgrid covering [lo, hi]; returns (spec, index offsets)."""
        lo = np.floor((np.asarray(lo_corner) - np.array(self.origin)) / self.spacing).astype(int)
        hi = np.ceil((np.asarray(hi_corner) - np.array(self.origin)) / self.spacing).astype(int)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, np.array(self.shape) - 1)
        if np.any(hi <= lo):
            raise ValueError("empty subwindow")
        origin = np.array(self.origin) + lo * self.spacing
        return GridSpec(tuple(origin), self.spacing, tuple(hi - lo + 1)), tuple(lo)


class GridField:
    """Scalar samples over a :class:`GridSpec` with multilinear evaluation."""

    def __init__(self, spec: GridSpec, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != spec.shape:
            raise ValueError(f"values shape {values.shape} mismatches grid {spec.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite field values")
        self.spec = spec
        self.values = values

    @property
    def n(self) -> int:
        return self.spec.n

    @staticmethod
    def zeros(spec: GridSpec) -> "GridField":
        return GridField(spec, np.zeros(spec.shape))

    @staticmethod
    def sample(spec: GridSpec, fn) -> "GridField":
        axes = [spec.node_coordinates(a) for a in range(spec.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.apply_along_axis(fn, 1, pts) if pts.size else np.zeros(0)
        return GridField(spec, np.asarray(vals, dtype=float).reshape(spec.shape))

    def copy(self) -> "GridField":
        return GridField(self.spec, self.values.copy())

    def contains(self, x, pad: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        lo = np.array(self.spec.origin) + pad
        hi = self.spec.top() - pad
        return bool(np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12))

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rel = (pts - np.array(self.spec.origin)) / self.spec.spacing
        rel = np.clip(rel, 0.0, np.array(self.spec.shape) - 1.0)
        base = np.minimum(rel.astype(int), np.array(self.spec.shape) - 2)
        base = np.maximum(base, 0)
        frac = rel - base
        out = np.zeros(len(pts))
        for corner in product((0, 1), repeat=self.n):
            idx = tuple(base[:, a] + corner[a] for a in range(self.n))
            weight = np.ones(len(pts))
            for a in range(self.n):
                weight *= frac[:, a] if corner[a] else (1.0 - frac[:, a])
            out += weight * self.values[idx]
        return out if len(out) > 1 else out

    def at(self, x) -> float:
        return float(self(np.asarray(x, dtype=float)[None, :])[0])

    def axis_diffs(self, axis: int) -> np.ndarray:
        return np.diff(self.values, axis=axis) / self.spec.spacing

    def lipschitz_axiswise(self) -> float:
        """Largest adjacent-node difference over the spacing, any axis."""
        worst = 0.0
        for a in range(self.n):
            d = self.axis_diffs(a)
            if d.size:
                worst = max(worst, float(np.max(np.abs(d))))
        return worst

    def lipschitz_estimate(self) -> float:
        """Euclidean gradient bound: per-cell combination of axis slopes."""
        total = np.zeros(self.values.shape)
        for a in range(self.n):
            d = np.abs(self.axis_diffs(a))
            # max of the two adjacent one-sided slopes at each node
            padded = np.zeros(self.values.shape)
            sl_lo = [slice(None)] * self.n
            sl_hi = [slice(None)] * self.n
            sl_lo[a] = slice(0, -1)
            sl_hi[a] = slice(1, None)
            padded[tuple(sl_lo)] = np.maximum(padded[tuple(sl_lo)], d)
            padded[tuple(sl_hi)] = np.maximum(padded[tuple(sl_hi)], d)
            total += padded**2
        return float(np.sqrt(np.max(total))) if total.size else 0.0

    def mollify(self, radius_cells: int) -> "GridField":
        """Box mollification: uniform filter of half-width radius_cells."""
        if radius_cells <= 0:
            return self.copy()
        size = 2 * radius_cells + 1
        return GridField(self.spec, ndimage.uniform_filter(self.values, size=size, mode="nearest"))

    def add_window(self, offset: tuple, other: "GridField", scale: float = 1.0) -> None:
        """Accumulate another field living on an aligned subwindow."""
        if abs(other.spec.spacing - self.spec.spacing) > 1e-15:
            raise ValueError("spacing mismatch")
        sl = tuple(
            slice(offset[a], offset[a] + other.spec.shape[a]) for a in range(self.n)
        )
        self.values[sl] += scale * other.values

    def to_json(self) -> str:
        return json.dumps(
            {
                "origin": list(self.spec.origin),
                "spacing": self.spec.spacing,
                "shape": list(self.spec.shape),
                "values": [float(v) for v in self.values.ravel()],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "GridField":
        data = json.loads(text)
        spec = GridSpec(tuple(data["origin"]), float(data["spacing"]), tuple(data["shape"]))
        return GridField(spec, np.array(data["values"], dtype=float).reshape(spec.shape))

    def save_npz(self, path: str) -> None:
        np.savez_compressed(
            path,
            origin=np.array(self.spec.origin),
            spacing=np.array([self.spec.spacing]),
            values=self.values,
        )

    @staticmethod
    def load_npz(path: str) -> "GridField":
        data = np.load(path)
        spec = GridSpec(tuple(data["origin"]), float(data["spacing"][0]), data["values"].shape)
        return GridField(spec, data["values"])
