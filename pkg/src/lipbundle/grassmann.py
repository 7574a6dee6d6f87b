"""Linear subspaces of R^n as orthonormal frames, and per-atom bundles.

A subspace is stored as an n x d matrix with orthonormal columns (d = 0
gives the zero subspace).  The metric on the Grassmannian of all
subspaces is the symmetrized one-sided deficiency

    d(V, V') = max(delta(V, V'), delta(V', V)),

where delta(V, V') is the operator norm of (I - P') P, i.e. the worst
relative distance from a unit vector of V to V'.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Subspace",
    "Bundle",
    "from_vectors",
    "delta_deficiency",
    "d_gr",
    "intersect",
    "minimal_element",
    "essential_span",
    "dimension_functional",
]

_RANK_TOL = 1e-9


@dataclass(frozen=True)
class Subspace:
    """Subspace of R^n carried by an orthonormal column frame."""

    n: int
    frame: np.ndarray  # shape (n, dim), orthonormal columns

    def __post_init__(self):
        f = np.asarray(self.frame, dtype=float)
        if f.ndim != 2 or f.shape[0] != self.n:
            raise ValueError(f"frame must be ({self.n}, d), got {f.shape}")
        object.__setattr__(self, "frame", f)
        if f.shape[1]:
            g = f.T @ f
            if not np.allclose(g, np.eye(f.shape[1]), atol=1e-10):
                raise ValueError("frame columns are not orthonormal")

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    @staticmethod
    def zero(n: int) -> "Subspace":
        return Subspace(n, np.zeros((n, 0)))

    @staticmethod
    def full(n: int) -> "Subspace":
        return Subspace(n, np.eye(n))

    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.dim == 0:
            return np.zeros_like(v)
        return self.frame @ (self.frame.T @ v)

    def distance_to(self, v: np.ndarray) -> float:
        """Euclidean distance from the point v to the subspace."""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.project(v)))

    def orthogonal_complement(self) -> "Subspace":
        if self.dim == 0:
            return Subspace.full(self.n)
        if self.dim == self.n:
            return Subspace.zero(self.n)
        # nullspace of the frame transpose
        _, _, vt = np.linalg.svd(self.frame.T)
        return Subspace(self.n, vt[self.dim:].T.copy())

    def contains(self, other: "Subspace", tol: float = 1e-9) -> bool:
        return delta_deficiency(other, self) <= tol


def from_vectors(vs, n: int | None = None, rel_tol: float = _RANK_TOL) -> Subspace:
    """Orthonormal span of a list of n-vectors, rank cut at ``rel_tol``."""
    vs = [np.asarray(v, dtype=float) for v in vs]
    if n is None:
        if not vs:
            raise ValueError("empty vector list needs an explicit n")
        n = vs[0].shape[0]
    for v in vs:
        if v.shape != (n,):
            raise ValueError("mixed dimensions in vector list")
    if not vs:
        return Subspace.zero(n)
    mat = np.column_stack(vs)
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return Subspace.zero(n)
    rank = int(np.sum(s > rel_tol * s[0]))
    return Subspace(n, u[:, :rank].copy())


def delta_deficiency(v: Subspace, w: Subspace) -> float:
    """One-sided deficiency delta(V, W): sup over unit v in V of dist(v, W)."""
    if v.n != w.n:
        raise ValueError("ambient dimension mismatch")
    if v.dim == 0:
        return 0.0
    residual = v.frame - w.project(v.frame)
    return float(np.linalg.norm(residual, 2))


def d_gr(v: Subspace, w: Subspace) -> float:
    """Symmetric Grassmannian distance max(delta(V,W), delta(W,V)) in [0, 1]."""
    return min(1.0, max(delta_deficiency(v, w), delta_deficiency(w, v)))


def intersect(v: Subspace, w: Subspace, rel_tol: float = _RANK_TOL) -> Subspace:
    """Numerical intersection via the joint nullspace of both complement projectors."""
    if v.n != w.n:
        raise ValueError("ambient dimension mismatch")
    n = v.n
    stacked = np.vstack([np.eye(n) - v.projector(), np.eye(n) - w.projector()])
    _, s, vt = np.linalg.svd(stacked)
    s = np.concatenate([s, np.zeros(n - len(s))])
    keep = s <= rel_tol * max(1.0, s[0] if len(s) else 1.0)
    basis = vt[keep]
    if basis.size == 0:
        return Subspace.zero(n)
    return from_vectors(list(basis), n=n)


@dataclass
class Bundle:
    """One subspace per atom of a companion atomic measure (index aligned)."""

    subspaces: list

    def __len__(self) -> int:
        return len(self.subspaces)

    def __getitem__(self, i: int) -> Subspace:
        return self.subspaces[i]

    def dims(self) -> np.ndarray:
        return np.array([s.dim for s in self.subspaces], dtype=int)

    def to_json(self) -> str:
        payload = [
            {"atom_index": i, "frame": [list(map(float, row)) for row in s.frame.T]}
            for i, s in enumerate(self.subspaces)
        ]
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str, n: int) -> "Bundle":
        payload = json.loads(text)
        subs = [Subspace.zero(n)] * len(payload)
        for entry in payload:
            rows = np.array(entry["frame"], dtype=float).reshape(-1, n)
            subs[entry["atom_index"]] = from_vectors(list(rows), n=n)
        return Bundle(subs)


def _check_keyed(bundle_len: int, mu) -> None:
    if bundle_len != mu.count:
        raise ValueError(
            f"bundle keyed to {bundle_len} atoms but measure has {mu.count}"
        )


def dimension_functional(bundle: Bundle, mu) -> float:
    """Mass-weighted total dimension: sum_i w_i * dim V(x_i)."""
    _check_keyed(len(bundle), mu)
    return float(np.dot(mu.weights, bundle.dims()))


def minimal_element(family: list[Bundle], mu) -> Bundle:
    """Per-atom intersection of a finite family of bundles over mu's atoms.

    The result is contained in every member and minimizes the
    mass-weighted dimension functional over the family.
    """
    if not family:
        raise ValueError("empty bundle family")
    for b in family:
        _check_keyed(len(b), mu)
    out = list(family[0].subspaces)
    for b in family[1:]:
        out = [intersect(a, c) for a, c in zip(out, b.subspaces)]
    return Bundle(out)


def essential_span(fields, mu, rel_tol: float = _RANK_TOL) -> Bundle:
    """Per-atom span of a list of vectorfields given atom-wise over mu.

    Each field is an array of shape (count, n): one vector per atom.  The
    result is by construction the smallest bundle containing every field
    at every atom.
    """
    arrays = [np.asarray(f, dtype=float) for f in fields]
    for a in arrays:
        if a.shape != (mu.count, mu.n):
            raise ValueError(f"field shape {a.shape} mismatches ({mu.count}, {mu.n})")
    subs = []
    for i in range(mu.count):
        subs.append(from_vectors([a[i] for a in arrays], n=mu.n, rel_tol=rel_tol))
    return Bundle(subs)
