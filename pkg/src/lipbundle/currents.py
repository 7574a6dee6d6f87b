"""Polyline 1-currents and triangle-mesh 2-currents with multiplicities.

A 1-current is a weighted list of oriented polylines, a 2-current a
weighted triangle soup; both can be atomized into k-vector-valued atomic
measures for quadrature against Lipschitz forms.  Mass is representation
level: overlapping pieces of opposite orientation do not cancel (the
cancellation-aware view is obtained by atomize + key merge).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exterior import KCovector, KVector, multi_indices, wedge
from .exterior import interior_product as _interior
from .exterior import pair as _pair
from .grassmann import Subspace
from .measures import (
    DEFAULT_QUANT,
    PolylineCurve,
    VectorAtomMeasure,
    quantize_key,
    subdivide_segment,
)

__all__ = [
    "PolylineCurrent1",
    "TriangleMeshCurrent2",
    "ZeroCurrent",
    "FormField",
    "mass",
    "boundary",
    "boundary2",
    "atomize",
    "interior_current",
    "pushforward_current",
    "tangential_derivative",
    "pair_current_form",
    "verify_boundary_formula",
    "verify_interior_boundary",
    "verify_pushforward_formula",
    "cone_closure",
    "ball_lattice_candidates",
]


@dataclass
class PolylineCurrent1:
    """1-current as a list of (multiplicity, oriented polyline) pieces.

    Curve multiplicities are folded into the piece multiplicity at
    construction, so each stored curve carries multiplicity 1.
    """

    pieces: list

    def __post_init__(self):
        norm_pieces = []
        for m, curve in self.pieces:
            if not isinstance(curve, PolylineCurve):
                raise ValueError("pieces must contain PolylineCurve")
            eff = float(m) * curve.multiplicity
            if curve.multiplicity != 1.0:
                curve = PolylineCurve(curve.vertices, 1.0)
            norm_pieces.append((eff, curve))
        self.pieces = norm_pieces

    @property
    def n(self) -> int:
        for _, c in self.pieces:
            if c.vertices.size:
                return c.n
        raise ValueError("empty current has no ambient dimension")

    @property
    def k(self) -> int:
        return 1

    def is_empty(self) -> bool:
        return not any(c.num_segments for _, c in self.pieces)

    @staticmethod
    def from_curve(curve: PolylineCurve, m: float = 1.0) -> "PolylineCurrent1":
        return PolylineCurrent1([(m, curve)])

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n if self.pieces else 0,
                "k": 1,
                "pieces": [
                    {"m": float(m), "vertices": [[float(x) for x in v] for v in c.vertices]}
                    for m, c in self.pieces
                ],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "PolylineCurrent1":
        data = json.loads(text)
        return PolylineCurrent1(
            [(float(p["m"]), PolylineCurve(np.array(p["vertices"], dtype=float))) for p in data["pieces"]]
        )


@dataclass
class TriangleMeshCurrent2:
    """2-current as a triangle soup; orientation is the vertex order."""

    triangles: list  # of (multiplicity, (3, n) vertex array)
    area_floor: float = 1e-12

    def __post_init__(self):
        tris = []
        for m, verts in self.triangles:
            verts = np.asarray(verts, dtype=float).reshape(3, -1)
            if _triangle_area(verts) <= self.area_floor:
                raise ValueError("degenerate triangle (area below floor)")
            tris.append((float(m), verts))
        self.triangles = tris

    @property
    def n(self) -> int:
        return self.triangles[0][1].shape[1]

    @property
    def k(self) -> int:
        return 2


@dataclass
class ZeroCurrent:
    """0-current: signed point masses, merged on the quantized key."""

    n: int
    positions: np.ndarray
    weights: np.ndarray
    quant: float = DEFAULT_QUANT

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.n)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)

    @property
    def count(self) -> int:
        return len(self.weights)

    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "atoms": [
                    {"x": [float(c) for c in x], "w": float(w)}
                    for x, w in zip(self.positions, self.weights)
                ],
            },
            sort_keys=True,
        )

    @staticmethod
    def merge(n: int, positions, weights, quant: float = DEFAULT_QUANT) -> "ZeroCurrent":
        seen: dict[tuple, int] = {}
        out_pos: list[np.ndarray] = []
        out_w: list[float] = []
        for x, w in zip(positions, weights):
            x = np.asarray(x, dtype=float)
            key = quantize_key(x, quant)
            if key in seen:
                out_w[seen[key]] += float(w)
            else:
                seen[key] = len(out_pos)
                out_pos.append(x)
                out_w.append(float(w))
        keep = [i for i, w in enumerate(out_w) if w != 0.0]
        return ZeroCurrent(
            n,
            np.array([out_pos[i] for i in keep]).reshape(-1, n),
            np.array([out_w[i] for i in keep]),
            quant,
        )


@dataclass
class FormField:
    """Bounded Lipschitz h-form given by a pointwise evaluator.

    ``ev`` maps an n-vector to the C(n, h) coefficient array of the
    covector at that point (for h = 0, a length-1 array or scalar).
    """

    n: int
    degree: int
    ev: object
    lipschitz_bound: float = np.inf
    sup_bound: float = np.inf

    def at(self, x) -> np.ndarray:
        val = self.ev(np.asarray(x, dtype=float))
        if isinstance(val, KCovector):
            return val.coeffs
        return np.atleast_1d(np.asarray(val, dtype=float))

    def covector_at(self, x) -> KCovector:
        return KCovector(self.n, self.degree, self.at(x))

    @staticmethod
    def constant(n: int, degree: int, coeffs) -> "FormField":
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        return FormField(n, degree, lambda x: coeffs, 0.0, float(np.linalg.norm(coeffs)))


def _triangle_area(verts: np.ndarray) -> float:
    u = verts[1] - verts[0]
    v = verts[2] - verts[0]
    g = np.array([[u @ u, u @ v], [u @ v, v @ v]])
    return 0.5 * float(np.sqrt(max(0.0, np.linalg.det(g))))


def _triangle_bivector(verts: np.ndarray, n: int) -> np.ndarray:
    """Coefficients of (b-a) wedge (c-a); its norm is twice the area."""
    u = KVector(n, 1, verts[1] - verts[0])
    v = KVector(n, 1, verts[2] - verts[0])
    return wedge(u, v).coeffs


def mass(T) -> float:
    """Representation-level mass: sum |m| * length (or area) over pieces."""
    if isinstance(T, PolylineCurrent1):
        return float(sum(abs(m) * c.length() for m, c in T.pieces))
    if isinstance(T, TriangleMeshCurrent2):
        return float(sum(abs(m) * _triangle_area(v) for m, v in T.triangles))
    raise TypeError(f"unsupported current type {type(T)!r}")


def boundary(T: PolylineCurrent1, quant: float = DEFAULT_QUANT) -> ZeroCurrent:
    """0-current sum of m * (endpoint - startpoint) deltas, key-merged."""
    pos: list[np.ndarray] = []
    w: list[float] = []
    n = None
    for m, c in T.pieces:
        if c.num_segments == 0:
            continue
        n = c.n
        pos.append(c.vertices[-1])
        w.append(m)
        pos.append(c.vertices[0])
        w.append(-m)
    if n is None:
        n = T.n if T.pieces else 0
    return ZeroCurrent.merge(n, pos, w, quant)


def boundary2(T: TriangleMeshCurrent2, quant: float = DEFAULT_QUANT) -> PolylineCurrent1:
    """Oriented edge chain of a mesh; shared opposite edges cancel."""
    acc: dict[tuple, list] = {}
    for m, verts in T.triangles:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = verts[i], verts[j]
            ka, kb = quantize_key(a, quant), quantize_key(b, quant)
            if ka <= kb:
                key, sign, lo, hi = (ka, kb), 1.0, a, b
            else:
                key, sign, lo, hi = (kb, ka), -1.0, b, a
            if key in acc:
                acc[key][0] += sign * m
            else:
                acc[key] = [sign * m, lo, hi]
    pieces = []
    for net, lo, hi in acc.values():
        if net != 0.0:
            pieces.append((net, PolylineCurve(np.array([lo, hi]))))
    return PolylineCurrent1(pieces)


def _subdivide_triangle(verts: np.ndarray, delta: float):
    edges = [np.linalg.norm(verts[1] - verts[0]), np.linalg.norm(verts[2] - verts[1]),
             np.linalg.norm(verts[0] - verts[2])]
    if max(edges) <= delta:
        yield verts
        return
    a, b, c = verts
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    for sub in (np.array([a, ab, ca]), np.array([ab, b, bc]),
                np.array([ca, bc, c]), np.array([ab, bc, ca])):
        yield from _subdivide_triangle(sub, delta)


def atomize(T, delta: float, quant: float = DEFAULT_QUANT) -> VectorAtomMeasure:
    """Discretize a current into a k-vector-valued atomic measure.

    Each sub-piece of size <= delta contributes one atom at its midpoint
    (or centroid) carrying multiplicity * orientation * size as a
    k-vector, so that pairing against a form is a midpoint quadrature.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if isinstance(T, PolylineCurrent1):
        if T.is_empty():
            return VectorAtomMeasure.empty(T.n if T.pieces else 1, 1, quant)
        n = T.n
        pos: list[np.ndarray] = []
        vec: list[np.ndarray] = []
        for m, c in T.pieces:
            for a, b in zip(c.vertices[:-1], c.vertices[1:]):
                for mid, _, lo, hi in subdivide_segment(a, b, delta):
                    pos.append(mid)
                    vec.append(m * (hi - lo))
        return VectorAtomMeasure.from_atoms(n, 1, np.array(pos), np.array(vec), quant)
    if isinstance(T, TriangleMeshCurrent2):
        n = T.n
        pos, vec = [], []
        for m, verts in T.triangles:
            for sub in _subdivide_triangle(verts, delta):
                pos.append(sub.mean(axis=0))
                vec.append(m * 0.5 * _triangle_bivector(sub, n))
        return VectorAtomMeasure.from_atoms(n, 2, np.array(pos), np.array(vec), quant)
    raise TypeError(f"unsupported current type {type(T)!r}")


def interior_current(T_atoms: VectorAtomMeasure, omega: FormField) -> VectorAtomMeasure:
    """Atom-wise contraction of a k-vector measure by an h-form, h <= k."""
    if omega.degree > T_atoms.k:
        raise ValueError("form degree exceeds current degree")
    n, k, h = T_atoms.n, T_atoms.k, omega.degree
    out = []
    for x, v in zip(T_atoms.positions, T_atoms.vectors):
        out.append(_interior(KVector(n, k, v), KCovector(n, h, omega.at(x))).coeffs)
    if not out:
        return VectorAtomMeasure.empty(n, k - h, T_atoms.quant)
    return VectorAtomMeasure(n, k - h, T_atoms.positions.copy(), np.array(out), T_atoms.quant)


def pushforward_current(T: PolylineCurrent1, f, delta: float) -> PolylineCurrent1:
    """Image of a polyline current under a pointwise map.

    Curves are refined to step <= delta before mapping so the map is
    near-affine per piece; degenerate zero-length image pieces are dropped.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pieces = []
    for m, c in T.pieces:
        if c.num_segments == 0:
            continue
        refined = [c.vertices[0]]
        for a, b in zip(c.vertices[:-1], c.vertices[1:]):
            for _, _, _, hi in subdivide_segment(a, b, delta):
                refined.append(hi)
        images = [np.asarray(f(v), dtype=float) for v in refined]
        chain = [images[0]]
        for q in images[1:]:
            if np.linalg.norm(q - chain[-1]) > 1e-14 * (1.0 + np.linalg.norm(q)):
                chain.append(q)
        if len(chain) >= 2:
            pieces.append((m, PolylineCurve(np.array(chain))))
    return PolylineCurrent1(pieces)


def tangential_derivative(omega: FormField, T_atoms: VectorAtomMeasure, step: float) -> np.ndarray:
    """Per-atom exterior derivative of omega along the span of the atom vector.

    For each atom with k-vector v, an orthonormal basis {b_j} of span(v)
    is taken and sum_j b_j-flat wedge D_{b_j} omega is assembled from
    central differences of the coefficients at scale ``step``.  Atoms
    with zero vector contribute a zero row.
    """
    from .exterior import span_of

    if step <= 0:
        raise ValueError("step must be positive")
    n, h = T_atoms.n, omega.degree
    out_dim = len(multi_indices(n, h + 1))
    rows = np.zeros((T_atoms.count, out_dim))
    for i, (x, v) in enumerate(zip(T_atoms.positions, T_atoms.vectors)):
        if not np.any(v):
            continue
        span = span_of(KVector(n, T_atoms.k, v))
        for j in range(span.dim):
            b = span.frame[:, j]
            dcoef = (omega.at(x + step * b) - omega.at(x - step * b)) / (2.0 * step)
            term = wedge(KCovector(n, 1, b), KCovector(n, h, dcoef))
            rows[i] += term.coeffs
    return rows


def pair_current_form(T_atoms: VectorAtomMeasure, omega: FormField) -> float:
    """Quadrature pairing <T, omega> over the atomized current."""
    if omega.degree != T_atoms.k:
        raise ValueError("form degree must match current degree")
    total = 0.0
    for x, v in zip(T_atoms.positions, T_atoms.vectors):
        total += float(omega.at(x) @ v)
    return total


def verify_boundary_formula(T, omega: FormField, step: float, delta: float = None) -> float:
    """Residual of <boundary T, omega> against the tangential-derivative integral.

    The left side pairs the boundary with omega directly; the right side
    is the atomized quadrature of <d_T omega(x), tau(x)> d|T|.
    """
    if delta is None:
        delta = _default_current_delta(T)
    k = T.k
    if omega.degree != k - 1:
        raise ValueError("form degree must be k-1")
    if k == 1:
        b = boundary(T)
        lhs = float(sum(w * omega.at(x)[0] for x, w in zip(b.positions, b.weights)))
    else:
        b = boundary2(T)
        b_atoms = atomize(b, delta)
        lhs = pair_current_form(b_atoms, omega)
    t_atoms = atomize(T, delta)
    d_rows = tangential_derivative(omega, t_atoms, step)
    rhs = float(np.sum(d_rows * t_atoms.vectors))
    return abs(lhs - rhs)


def _default_current_delta(T) -> float:
    if isinstance(T, PolylineCurrent1):
        pts = np.vstack([c.vertices for _, c in T.pieces if len(c.vertices)])
    else:
        pts = np.vstack([v for _, v in T.triangles])
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return diag / 64.0 if diag > 0 else 1.0


def _probe_forms(n: int, degree: int):
    """Small deterministic family of smooth probe forms with exact derivatives.

    Yields (sigma, dsigma) as FormFields of degrees (degree, degree + 1).
    """
    probes = []
    if degree == 0:
        # constants and coordinates: d(1) = 0, d(x_p) = e*_p
        probes.append((FormField.constant(n, 0, [1.0]), FormField.constant(n, 1, np.zeros(n))))
        for p in range(n):
            coef = np.zeros(n)
            coef[p] = 1.0
            probes.append(
                (
                    FormField(n, 0, lambda x, p=p: np.array([x[p]]), 1.0, np.inf),
                    FormField.constant(n, 1, coef),
                )
            )
    elif degree == 1:
        pairs = multi_indices(n, 2)
        m2 = len(pairs)
        for q in range(n):
            coef = np.zeros(n)
            coef[q] = 1.0
            probes.append((FormField.constant(n, 1, coef), FormField.constant(n, 2, np.zeros(m2))))
        for p in range(n):
            for q in range(n):
                # sigma = x_p e*_q with d sigma = e*_p ^ e*_q
                dcoef = np.zeros(m2)
                if p != q:
                    idx = tuple(sorted((p + 1, q + 1)))
                    sign = 1.0 if p < q else -1.0
                    dcoef[pairs.index(idx)] = sign

                def ev(x, p=p, q=q):
                    out = np.zeros(n)
                    out[q] = x[p]
                    return out

                probes.append((FormField(n, 1, ev, 1.0, np.inf), FormField.constant(n, 2, dcoef)))
    else:
        raise ValueError("probe forms available for degrees 0 and 1 only")
    return probes


def verify_interior_boundary(T: TriangleMeshCurrent2, omega: FormField, step: float,
                             delta: float = None) -> float:
    """Residual of the boundary-of-contraction identity on a mesh 2-current.

    Both sides of  d(T . omega) = (-1)^h [ (dT) . omega - (tau . d_T omega) mu ]
    are paired against a probe basis of smooth test forms; the returned
    residual is the largest absolute mismatch over the probes.
    """
    h = omega.degree
    if h not in (0, 1):
        raise ValueError("form degree must be 0 or 1 for a 2-current")
    if delta is None:
        delta = _default_current_delta(T)
    t_atoms = atomize(T, delta)
    tw_atoms = interior_current(t_atoms, omega)  # degree 2-h
    b_atoms = atomize(boundary2(T), delta)
    bw_atoms = interior_current(b_atoms, omega)  # degree 1-h
    d_rows = tangential_derivative(omega, t_atoms, step)  # degree h+1 covectors
    n = T.n
    tau_d = []  # (tau . d_T omega) atoms, degree 1-h
    for v, drow in zip(t_atoms.vectors, d_rows):
        tau_d.append(_interior(KVector(n, 2, v), KCovector(n, h + 1, drow)).coeffs)
    tau_d = np.array(tau_d).reshape(len(t_atoms.vectors), -1)

    sign = (-1.0) ** h
    worst = 0.0
    for sigma, dsigma in _probe_forms(n, 1 - h):
        lhs = pair_current_form(tw_atoms, dsigma) if dsigma.degree == tw_atoms.k else 0.0
        rhs_a = pair_current_form(bw_atoms, sigma)
        rhs_b = float(sum(sigma.at(x) @ td for x, td in zip(t_atoms.positions, tau_d)))
        worst = max(worst, abs(lhs - sign * (rhs_a - rhs_b)))
    return worst


def verify_pushforward_formula(T: PolylineCurrent1, f, omega: FormField, step: float,
                               delta: float = None) -> float:
    """Residual of <f#T, omega> against the pulled-back tangential integral."""
    if omega.degree != 1:
        raise ValueError("a polyline current pairs with 1-forms")
    if delta is None:
        delta = _default_current_delta(T)
    image = pushforward_current(T, f, delta)
    lhs = pair_current_form(atomize(image, delta), omega) if image.pieces else 0.0
    rhs = 0.0
    for x, v in zip(*(lambda a: (a.positions, a.vectors))(atomize(T, delta))):
        norm_v = np.linalg.norm(v)
        if norm_v == 0.0:
            continue
        tau_hat = v / norm_v
        push_dir = (np.asarray(f(x + step * tau_hat), dtype=float)
                    - np.asarray(f(x - step * tau_hat), dtype=float)) / (2.0 * step)
        rhs += norm_v * float(omega.at(np.asarray(f(x), dtype=float)) @ push_dir)
    return abs(lhs - rhs)


def ball_lattice_candidates(center, r: float, points_per_axis: int = 16,
                            avoid=None, avoid_tol: float = 1e-6) -> np.ndarray:
    """Regular lattice of interior candidate points for cone_closure centers."""
    center = np.asarray(center, dtype=float)
    n = len(center)
    axes = [np.linspace(-r, r, points_per_axis + 2)[1:-1] for _ in range(n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    pts = center + grid[np.linalg.norm(grid, axis=1) < 0.9 * r]
    if avoid is not None and len(avoid):
        avoid = np.asarray(avoid, dtype=float).reshape(-1, n)
        d = np.min(np.linalg.norm(pts[:, None, :] - avoid[None, :, :], axis=2), axis=1)
        pts = pts[d > avoid_tol]
    return pts


def _radial_projection(x: np.ndarray, x0: np.ndarray, center: np.ndarray, r: float) -> np.ndarray:
    w = x - x0
    nw = np.linalg.norm(w)
    if nw == 0.0:
        raise ValueError("projection center coincides with a vertex")
    w = w / nw
    y0 = x0 - center
    b = float(y0 @ w)
    disc = b * b + r * r - float(y0 @ y0)
    t = -b + np.sqrt(max(disc, 0.0))
    return x0 + t * w


def cone_closure(T: PolylineCurrent1, center, r: float, candidates, delta: float = None):
    """Boundary-killing modification of T inside the ball B(center, r).

    Picks a projection center x0 among the candidates minimizing the
    discrete moment sum |atom mass| / |x - x0| over T's atoms in the
    closed ball, radially projects the inside part of T onto the sphere,
    and returns U = T - (projected T).  U agrees with T on pieces inside
    the open ball, is supported within the closed ball up to refinement
    slack, and has boundary of zero total variation when the boundary of
    T stays outside the open ball.
    """
    center = np.asarray(center, dtype=float)
    if delta is None:
        delta = _default_current_delta(T)
    b = boundary(T)
    for x in b.positions:
        if np.linalg.norm(x - center) < r * (1.0 - 1e-12):
            raise ValueError("boundary atom strictly inside the ball")

    t_atoms = atomize(T, delta)
    inside = [
        (x, np.linalg.norm(v))
        for x, v in zip(t_atoms.positions, t_atoms.vectors)
        if np.linalg.norm(x - center) <= r
    ]
    candidates = np.asarray(candidates, dtype=float).reshape(-1, len(center))
    vert_cloud = np.vstack([c.vertices for _, c in T.pieces if len(c.vertices)])
    dists = np.min(
        np.linalg.norm(candidates[:, None, :] - vert_cloud[None, :, :], axis=2), axis=1
    ) if len(vert_cloud) else np.full(len(candidates), np.inf)
    valid = [i for i in range(len(candidates)) if dists[i] > 1e-6
             and np.linalg.norm(candidates[i] - center) < r]
    if not valid:
        raise ValueError("no valid projection candidate")
    if inside:
        scores = []
        for i in valid:
            x0 = candidates[i]
            scores.append(sum(m / max(np.linalg.norm(x - x0), 1e-30) for x, m in inside))
        x0 = candidates[valid[int(np.argmin(scores))]]
    else:
        x0 = candidates[valid[0]]

    strict = r * (1.0 - 1e-15)
    kept: list = []
    negated: list = []
    for m, c in T.pieces:
        refined = [c.vertices[0]]
        for a, bv in zip(c.vertices[:-1], c.vertices[1:]):
            for _, _, _, hi in subdivide_segment(a, bv, delta):
                refined.append(hi)
        refined = np.array(refined)
        inside_mask = np.linalg.norm(refined - center, axis=1) < strict
        images = np.array([
            _radial_projection(p, x0, center, r) if ins else p
            for p, ins in zip(refined, inside_mask)
        ])
        # keep only the sub-chains where the projection actually moved something
        run_orig: list[np.ndarray] = []
        run_img: list[np.ndarray] = []

        def flush():
            if len(run_orig) >= 2:
                kept.append((m, PolylineCurve(np.array(run_orig))))
                chain = [run_img[0]]
                for q in run_img[1:]:
                    if np.linalg.norm(q - chain[-1]) > 1e-14 * (1.0 + np.linalg.norm(q)):
                        chain.append(q)
                if len(chain) >= 2:
                    negated.append((-m, PolylineCurve(np.array(chain))))
            run_orig.clear()
            run_img.clear()

        for j in range(len(refined) - 1):
            if inside_mask[j] or inside_mask[j + 1]:
                if not run_orig:
                    run_orig.append(refined[j])
                    run_img.append(images[j])
                run_orig.append(refined[j + 1])
                run_img.append(images[j + 1])
            else:
                flush()
        flush()
    return PolylineCurrent1(kept + negated)
