"""Discrete measures: atomic clouds, length measure on polylines, curve
families and their weighted superposition, push-forward, restriction and
the atom-wise Radon-Nikodym split of vector measures.

Atom identity is a quantized position key (default step 1e-7), so two
objects built from the same geometry share keys exactly and "almost
everywhere" statements become per-atom statements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import ceil, comb

import numpy as np

DEFAULT_QUANT = 1e-7

__all__ = [
    "DEFAULT_QUANT",
    "AtomicMeasure",
    "PolylineCurve",
    "CurveFamily",
    "VectorAtomMeasure",
    "quantize_key",
    "h1_measure",
    "integrate_family",
    "restrict",
    "pushforward_measure",
    "radon_nikodym",
    "default_delta",
]


def quantize_key(x: np.ndarray, quant: float) -> tuple[int, ...]:
    return tuple(int(round(c / quant)) for c in x)


@dataclass
class AtomicMeasure:
    """Finite list of (position, positive weight) atoms in R^n."""

    n: int
    positions: np.ndarray  # (count, n)
    weights: np.ndarray  # (count,)
    quant: float = DEFAULT_QUANT

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.n)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.positions) != len(self.weights):
            raise ValueError("positions and weights differ in length")
        if np.any(self.weights <= 0):
            raise ValueError("atom weights must be positive")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.weights))):
            raise ValueError("non-finite atom data")

    @property
    def count(self) -> int:
        return len(self.weights)

    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def keys(self) -> list[tuple[int, ...]]:
        return [quantize_key(x, self.quant) for x in self.positions]

    @staticmethod
    def empty(n: int, quant: float = DEFAULT_QUANT) -> "AtomicMeasure":
        return AtomicMeasure(n, np.zeros((0, n)), np.zeros(0), quant)

    @staticmethod
    def from_atoms(n, positions, weights, quant: float = DEFAULT_QUANT) -> "AtomicMeasure":
        """Build a measure, merging atoms that share a quantized key.

        Duplicate keys accumulate weight; the first-seen position is kept,
        so construction order fixes atom order deterministically.
        """
        positions = np.asarray(positions, dtype=float).reshape(-1, n)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        seen: dict[tuple[int, ...], int] = {}
        out_pos: list[np.ndarray] = []
        out_w: list[float] = []
        for x, w in zip(positions, weights):
            key = quantize_key(x, quant)
            if key in seen:
                out_w[seen[key]] += float(w)
            else:
                seen[key] = len(out_pos)
                out_pos.append(x)
                out_w.append(float(w))
        keep = [i for i, w in enumerate(out_w) if w > 0]
        if not keep:
            return AtomicMeasure.empty(n, quant)
        return AtomicMeasure(
            n, np.array([out_pos[i] for i in keep]), np.array([out_w[i] for i in keep]), quant
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "quant": self.quant,
                "atoms": [
                    {"x": [float(c) for c in x], "w": float(w)}
                    for x, w in zip(self.positions, self.weights)
                ],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "AtomicMeasure":
        data = json.loads(text)
        n = int(data["n"])
        atoms = data["atoms"]
        if not atoms:
            return AtomicMeasure.empty(n, float(data.get("quant", DEFAULT_QUANT)))
        pos = np.array([a["x"] for a in atoms], dtype=float)
        w = np.array([a["w"] for a in atoms], dtype=float)
        return AtomicMeasure(n, pos, w, float(data.get("quant", DEFAULT_QUANT)))


@dataclass
class PolylineCurve:
    """Oriented polyline with a scalar multiplicity.

    An empty vertex list is the empty curve; a single vertex is a
    degenerate point chain (zero length) and is tolerated so extraction
    routines can report one-atom chains.
    """

    vertices: np.ndarray
    multiplicity: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.size == 0:
            v = v.reshape(0, v.shape[1] if v.ndim == 2 else 0)
        if v.ndim != 2:
            raise ValueError("vertices must be an (m, n) array")
        for a, b in zip(v[:-1], v[1:]):
            if np.array_equal(a, b):
                raise ValueError("consecutive vertices must be distinct")
        self.vertices = v

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_segments(self) -> int:
        return max(0, len(self.vertices) - 1)

    def segment_lengths(self) -> np.ndarray:
        if self.num_segments == 0:
            return np.zeros(0)
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    def length(self) -> float:
        return float(np.sum(self.segment_lengths()))

    def is_closed(self) -> bool:
        return len(self.vertices) >= 2 and np.array_equal(self.vertices[0], self.vertices[-1])

    def bounding_diagonal(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass
class CurveFamily:
    """Finite weighted list of curves standing in for a parametrized family."""

    members: list  # of (dt_weight, PolylineCurve)

    def __post_init__(self):
        for dt, curve in self.members:
            if dt <= 0:
                raise ValueError("dt weights must be positive")
            if not isinstance(curve, PolylineCurve):
                raise ValueError("family members must be PolylineCurve")

    @property
    def n(self) -> int:
        for _, curve in self.members:
            if curve.n:
                return curve.n
        raise ValueError("empty family has no ambient dimension")

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n if self.members else 0,
                "members": [
                    {
                        "dt": float(dt),
                        "mult": float(c.multiplicity),
                        "vertices": [[float(x) for x in v] for v in c.vertices],
                    }
                    for dt, c in self.members
                ],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "CurveFamily":
        data = json.loads(text)
        members = [
            (
                float(m["dt"]),
                PolylineCurve(np.array(m["vertices"], dtype=float), float(m.get("mult", 1.0))),
            )
            for m in data["members"]
        ]
        return CurveFamily(members)


@dataclass
class VectorAtomMeasure:
    """Finite k-vector-valued atomic measure: one k-vector per position."""

    n: int
    k: int
    positions: np.ndarray  # (count, n)
    vectors: np.ndarray  # (count, C(n, k))
    quant: float = DEFAULT_QUANT

    def __post_init__(self):
        m = comb(self.n, self.k)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.n)
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(-1, m)
        if len(self.positions) != len(self.vectors):
            raise ValueError("positions and vectors differ in length")

    @property
    def count(self) -> int:
        return len(self.positions)

    def total_variation(self) -> float:
        if self.count == 0:
            return 0.0
        return float(np.sum(np.linalg.norm(self.vectors, axis=1)))

    def keys(self) -> list[tuple[int, ...]]:
        return [quantize_key(x, self.quant) for x in self.positions]

    @staticmethod
    def empty(n: int, k: int, quant: float = DEFAULT_QUANT) -> "VectorAtomMeasure":
        return VectorAtomMeasure(n, k, np.zeros((0, n)), np.zeros((0, comb(n, k))), quant)

    @staticmethod
    def from_atoms(n, k, positions, vectors, quant: float = DEFAULT_QUANT) -> "VectorAtomMeasure":
        """Merge same-key atoms by vector addition, keeping first-seen order."""
        positions = np.asarray(positions, dtype=float).reshape(-1, n)
        vectors = np.asarray(vectors, dtype=float).reshape(-1, comb(n, k))
        seen: dict[tuple[int, ...], int] = {}
        out_pos: list[np.ndarray] = []
        out_vec: list[np.ndarray] = []
        for x, v in zip(positions, vectors):
            key = quantize_key(x, quant)
            if key in seen:
                out_vec[seen[key]] = out_vec[seen[key]] + v
            else:
                seen[key] = len(out_pos)
                out_pos.append(x)
                out_vec.append(v.copy())
        if not out_pos:
            return VectorAtomMeasure.empty(n, k, quant)
        return VectorAtomMeasure(n, k, np.array(out_pos), np.array(out_vec), quant)


def default_delta(curve_or_family) -> float:
    """Default subdivision step: 1/64 of the geometry's bounding diagonal."""
    if isinstance(curve_or_family, PolylineCurve):
        diag = curve_or_family.bounding_diagonal()
    else:
        pts = [c.vertices for _, c in curve_or_family.members if len(c.vertices)]
        if not pts:
            return 1.0
        allpts = np.vstack(pts)
        diag = float(np.linalg.norm(allpts.max(axis=0) - allpts.min(axis=0)))
    return diag / 64.0 if diag > 0 else 1.0


def subdivide_segment(a: np.ndarray, b: np.ndarray, delta: float):
    """Split [a, b] into equal pieces of length <= delta; yields (mid, len, lo, hi)."""
    length = float(np.linalg.norm(b - a))
    if length == 0.0:
        return
    pieces = max(1, ceil(length / delta))
    step = (b - a) / pieces
    piece_len = length / pieces
    for i in range(pieces):
        lo = a + i * step
        hi = a + (i + 1) * step
        yield (lo + hi) / 2.0, piece_len, lo, hi


def h1_measure(curve: PolylineCurve, delta: float, quant: float = DEFAULT_QUANT) -> AtomicMeasure:
    """Length measure of a polyline at resolution delta.

    Each segment is subdivided into equal pieces of length <= delta and
    contributes one atom per piece at the piece midpoint, with weight
    piece length times the curve multiplicity.  Total mass equals
    multiplicity times polyline length up to roundoff.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pos: list[np.ndarray] = []
    w: list[float] = []
    for a, b in zip(curve.vertices[:-1], curve.vertices[1:]):
        for mid, piece_len, _, _ in subdivide_segment(a, b, delta):
            pos.append(mid)
            w.append(piece_len * curve.multiplicity)
    if not pos:
        return AtomicMeasure.empty(max(curve.n, 1), quant)
    return AtomicMeasure.from_atoms(curve.n, np.array(pos), np.array(w), quant)


def integrate_family(family: CurveFamily, delta: float, quant: float = DEFAULT_QUANT) -> AtomicMeasure:
    """Weighted superposition of the member length measures.

    Atoms sharing a quantized key merge by weight addition; the total
    mass is sum(dt_i * multiplicity_i * length_i).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pos: list[np.ndarray] = []
    w: list[float] = []
    n = None
    for dt, curve in family.members:
        if curve.n:
            n = curve.n
        for a, b in zip(curve.vertices[:-1], curve.vertices[1:]):
            for mid, piece_len, _, _ in subdivide_segment(a, b, delta):
                pos.append(mid)
                w.append(dt * piece_len * curve.multiplicity)
    if not pos:
        return AtomicMeasure.empty(n or 1, quant)
    return AtomicMeasure.from_atoms(n, np.array(pos), np.array(w), quant)


def restrict(mu: AtomicMeasure, pred) -> AtomicMeasure:
    """Keep exactly the atoms whose positions satisfy the predicate."""
    keep = [i for i, x in enumerate(mu.positions) if pred(x)]
    if not keep:
        return AtomicMeasure.empty(mu.n, mu.quant)
    return AtomicMeasure(mu.n, mu.positions[keep], mu.weights[keep], mu.quant)


def pushforward_measure(mu: AtomicMeasure, f) -> AtomicMeasure:
    """Image measure: atom positions mapped through f, weights preserved.

    Atoms whose images share a quantized key merge; total mass is invariant.
    """
    if mu.count == 0:
        return mu
    new_pos = np.array([np.asarray(f(x), dtype=float) for x in mu.positions])
    return AtomicMeasure.from_atoms(new_pos.shape[1], new_pos, mu.weights, mu.quant)


def radon_nikodym(T: VectorAtomMeasure, mu: AtomicMeasure):
    """Split T into a density against mu plus a mu-singular remainder.

    Returns (density, singular) where density has shape (mu.count, C(n,k))
    with density[i] = vector/weight at key-matched atoms (zero elsewhere),
    and singular collects every T-atom whose key is absent from mu.  The
    reconstruction density*mu + singular reproduces T atom by atom.
    """
    if T.n != mu.n:
        raise ValueError("ambient dimension mismatch")
    mu_keys = {k: i for i, k in enumerate(mu.keys())}
    density = np.zeros((mu.count, T.vectors.shape[1]))
    sing_pos: list[np.ndarray] = []
    sing_vec: list[np.ndarray] = []
    for x, v, key in zip(T.positions, T.vectors, T.keys()):
        i = mu_keys.get(key)
        if i is None:
            sing_pos.append(x)
            sing_vec.append(v)
        else:
            density[i] += v / mu.weights[i]
    if sing_pos:
        singular = VectorAtomMeasure(T.n, T.k, np.array(sing_pos), np.array(sing_vec), T.quant)
    else:
        singular = VectorAtomMeasure.empty(T.n, T.k, T.quant)
    return density, singular
