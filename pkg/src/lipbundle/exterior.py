"""Dense exterior algebra of k-vectors and k-covectors in R^n, n <= 8.

Coefficients live over the lexicographic multi-index basis: a k-vector in
R^n is a float array of length C(n, k) whose entries are indexed by the
strictly increasing tuples (i_1, ..., i_k) with 1 <= i_1 < ... < i_k <= n,
in lexicographic order.  Everything is kept small and dense so wedge,
pairing and interior product are plain table-driven array operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

MAX_DIM = 8

__all__ = [
    "MAX_DIM",
    "multi_indices",
    "multi_index_position",
    "KVector",
    "KCovector",
    "basis_vector",
    "basis_covector",
    "wedge",
    "pair",
    "interior_product",
    "span_of",
    "is_simple",
]


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """All strictly increasing k-tuples over 1..n, lexicographically ordered."""
    if k < 0 or k > n:
        return ()
    if k == 0:
        return ((),)
    out: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], lo: int) -> None:
        if len(prefix) == k:
            out.append(prefix)
            return
        for i in range(lo, n + 2 - (k - len(prefix))):
            rec(prefix + (i,), i + 1)

    rec((), 1)
    return tuple(out)


@lru_cache(maxsize=None)
def _index_lookup(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {idx: pos for pos, idx in enumerate(multi_indices(n, k))}


def multi_index_position(n: int, idx: tuple[int, ...]) -> int:
    """Position of a strictly increasing multi-index in the lex basis."""
    return _index_lookup(n, len(idx))[tuple(idx)]


def _merge_sign(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    """Sign and sorted union of two disjoint increasing tuples.

    The sign is the parity of the permutation sorting ``a + b``; returns
    (0, ()) on overlap.
    """
    if set(a) & set(b):
        return 0, ()
    merged = a + b
    # count inversions between the two blocks
    inv = sum(1 for x in a for y in b if x > y)
    return (-1) ** inv, tuple(sorted(merged))


@lru_cache(maxsize=None)
def _wedge_table(n: int, j: int, k: int):
    """Sparse wedge table: rows of (pos_a, pos_b, pos_out, sign)."""
    rows = []
    idx_a = multi_indices(n, j)
    idx_b = multi_indices(n, k)
    for pa, a in enumerate(idx_a):
        for pb, b in enumerate(idx_b):
            s, merged = _merge_sign(a, b)
            if s != 0:
                rows.append((pa, pb, multi_index_position(n, merged), s))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_DIM:
        raise ValueError(f"ambient dimension must be in 1..{MAX_DIM}, got {n}")


@dataclass
class KVector:
    """k-vector in R^n with dense coefficients over the lex multi-index basis."""

    n: int
    k: int
    coeffs: np.ndarray = field(default=None)  # type: ignore[assignment]

    kind = "vector"

    def __post_init__(self):
        _check_n(self.n)
        if not 0 <= self.k <= self.n:
            raise ValueError(f"degree {self.k} out of range for n={self.n}")
        m = comb(self.n, self.k)
        if self.coeffs is None:
            self.coeffs = np.zeros(m)
        else:
            self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(m)
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("non-finite coefficients")

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other):
        self._compat(other)
        return type(self)(self.n, self.k, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._compat(other)
        return type(self)(self.n, self.k, self.coeffs - other.coeffs)

    def __mul__(self, c: float):
        return type(self)(self.n, self.k, self.coeffs * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.n, self.k, -self.coeffs)

    def _compat(self, other) -> None:
        if type(self) is not type(other):
            raise ValueError("mixed vector/covector arithmetic")
        if self.n != other.n or self.k != other.k:
            raise ValueError("dimension or degree mismatch")


class KCovector(KVector):
    """k-covector on R^n, same dense storage as :class:`KVector`."""

    kind = "covector"


def basis_vector(n: int, idx: tuple[int, ...]) -> KVector:
    v = KVector(n, len(idx))
    v.coeffs[multi_index_position(n, tuple(idx))] = 1.0
    return v


def basis_covector(n: int, idx: tuple[int, ...]) -> KCovector:
    a = KCovector(n, len(idx))
    a.coeffs[multi_index_position(n, tuple(idx))] = 1.0
    return a


def wedge(a: KVector, b: KVector) -> KVector:
    """Exterior product of two multivectors (or two multicovectors)."""
    if a.n != b.n:
        raise ValueError("dimension mismatch")
    if a.kind != b.kind:
        raise ValueError("cannot wedge a vector with a covector")
    if a.k + b.k > a.n:
        raise ValueError(f"degree overflow: {a.k}+{b.k} > {a.n}")
    table = _wedge_table(a.n, a.k, b.k)
    out = type(a)(a.n, a.k + b.k)
    if len(table):
        contrib = a.coeffs[table[:, 0]] * b.coeffs[table[:, 1]] * table[:, 3]
        np.add.at(out.coeffs, table[:, 2], contrib)
    return out


def pair(alpha: KCovector, v: KVector) -> float:
    """Duality pairing <alpha, v> over matching dual bases."""
    if alpha.n != v.n or alpha.k != v.k:
        raise ValueError("degree or dimension mismatch")
    return float(alpha.coeffs @ v.coeffs)


@lru_cache(maxsize=None)
def _interior_table(n: int, k: int, h: int):
    """Table for v . alpha with v of degree k, alpha of degree h.

    Rows of (pos_v, pos_alpha, pos_out, sign), derived from the duality
    identity <v . alpha, beta> = <v, alpha wedge beta> over the basis:
    the coefficient of e_K in v . e_J is the sign of e_J ^ e_K* = +-e_I
    against the coefficient of v on e_I.
    """
    rows = []
    idx_out = multi_indices(n, k - h)
    for pj, jdx in enumerate(multi_indices(n, h)):
        for pk, kdx in enumerate(idx_out):
            s, merged = _merge_sign(jdx, kdx)
            if s != 0:
                rows.append((multi_index_position(n, merged), pj, pk, s))
    return np.array(rows, dtype=np.int64).reshape(-1, 4)


def interior_product(v: KVector, alpha: KCovector) -> KVector:
    """Contraction of a k-vector by an h-covector, h <= k.

    Defined through the pairing identity <v . alpha, beta> = <v, alpha ^ beta>
    for every (k-h)-covector beta; with h = 0 this is scalar multiplication.
    """
    if v.n != alpha.n:
        raise ValueError("dimension mismatch")
    if alpha.k > v.k:
        raise ValueError(f"covector degree {alpha.k} exceeds vector degree {v.k}")
    table = _interior_table(v.n, v.k, alpha.k)
    out = KVector(v.n, v.k - alpha.k)
    if len(table):
        contrib = v.coeffs[table[:, 0]] * alpha.coeffs[table[:, 1]] * table[:, 3]
        np.add.at(out.coeffs, table[:, 2], contrib)
    return out


def contraction_matrix(v: KVector) -> np.ndarray:
    """Matrix whose columns are v . e*_J over all J in I(n, k-1)."""
    if v.k == 0:
        return np.zeros((v.n, 0))
    cols = []
    for jdx in multi_indices(v.n, v.k - 1):
        cols.append(interior_product(v, basis_covector(v.n, jdx)).coeffs)
    return np.column_stack(cols)


def span_of(v: KVector, rel_tol: float = 1e-9):
    """Smallest subspace carrying v, as the span of all contractions v . alpha.

    Rank is decided by a rank-revealing SVD with relative singular-value
    cutoff ``rel_tol``; span_of(0) is the zero subspace.
    """
    from .grassmann import Subspace, from_vectors

    if v.k == 0:
        return Subspace.zero(v.n)
    mat = contraction_matrix(v)
    return from_vectors(list(mat.T), n=v.n, rel_tol=rel_tol)


def is_simple(v: KVector, rel_tol: float = 1e-9) -> bool:
    """True iff v is a wedge of k independent 1-vectors (0 counts as simple)."""
    if v.norm() == 0.0:
        return True
    return span_of(v, rel_tol=rel_tol).dim == v.k
