"""Constructive Lipschitz non-differentiability on grids.

The builder produces scalar grid fields whose one-sided difference
quotients spread by a definite amount at a target set of atoms, in every
direction transverse to a prescribed subspace bundle, while staying
differentiable-at-scale along the bundle.  The engine is a Bellman value
function over cone-constrained grid chains: its restriction to the cone
axis has slope in [0, 1] (exactly 1 on cells meeting the target set) and
its transverse variation is bounded by the cone opening, so scaled and
localized copies of it act as non-differentiability bumps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, gamma, pi

import numpy as np
from scipy.spatial import cKDTree

from .decomposition import ConeSpec
from .gridfield import GridField, GridSpec
from .grassmann import Bundle, Subspace, d_gr
from .measures import AtomicMeasure

__all__ = [
    "PerturbationError",
    "PerturbationResult",
    "perturbation_g",
    "localized_bump",
    "regularize_keep",
    "anisotropic_smooth",
    "AssemblyParams",
    "AssemblyResult",
    "assemble_nondiff",
    "QuotientRow",
    "difference_quotients",
    "deviation_from_linearity",
    "check_nondiff",
]


class PerturbationError(ValueError):
    """Raised when the target set is not cone-null at grid resolution."""

    def __init__(self, message: str, capture: float):
        super().__init__(message)
        self.capture = capture


def _axis_of(e: np.ndarray) -> tuple[int, int]:
    """Grid axis and sign matching a unit vector, or raise."""
    e = np.asarray(e, dtype=float)
    axis = int(np.argmax(np.abs(e)))
    sign = 1 if e[axis] > 0 else -1
    probe = np.zeros_like(e)
    probe[axis] = sign
    if np.linalg.norm(e - probe) > 1e-9:
        raise ValueError("cone axis must align with a grid axis")
    return axis, sign


def _stencil_offsets(alpha: float, bmax: int, n: int) -> list[tuple]:
    """Integer step offsets (a, b...) inside the cone around +axis0.

    For each transverse offset b the minimal axial advance a with
    |b| <= a tan(alpha) is used, so the steepest available transverse
    cost approaches 1/tan(alpha) from above as bmax grows.
    """
    tan_a = np.tan(alpha)
    offsets = [(1,) + (0,) * (n - 1)]
    if n == 2:
        transverse = [(b,) for b in range(-bmax, bmax + 1) if b != 0]
    else:
        transverse = [
            (b1, b2)
            for b1 in range(-bmax, bmax + 1)
            for b2 in range(-bmax, bmax + 1)
            if (b1, b2) != (0, 0)
        ]
    for b in transverse:
        nb = float(np.linalg.norm(b))
        a = max(1, ceil(nb / tan_a - 1e-12))
        offsets.append((a,) + b)
    return offsets


def _segment_gains(shape, kpts_idx: np.ndarray, kdtree_scaled: cKDTree,
                   delta_cells: float, delta_perp_cells: float, offset) -> dict:
    """Sparse chord gains: node -> fraction of the incoming step inside A.

    A is the anisotropic dilation of K: an ellipse with semi-axis
    ``delta_cells`` along the sweep axis and ``delta_perp_cells`` across
    (equal radii give the usual ball dilation).  The step ending at a
    node is sampled at roughly half the dilation radius and the in-A
    fraction recorded, so the gain |d| * fraction approximates the chord
    length of the step in A.  Node indices are in the swept (axis-first)
    frame; ``kdtree_scaled`` indexes the targets in ellipse-scaled
    coordinates.
    """
    n = len(shape)
    off = np.array(offset, dtype=float)
    half = off / 2.0
    step_len = float(np.linalg.norm(off))
    reach = step_len / 2.0 + delta_cells
    scale = np.array([delta_cells] + [delta_perp_cells] * (n - 1))
    cand: set[tuple] = set()
    for c in kpts_idx:
        target = c + half  # node whose step midpoint sits exactly on c
        lo = np.maximum(np.ceil(target - reach).astype(int), 0)
        hi = np.minimum(np.floor(target + reach).astype(int), np.array(shape) - 1)
        if np.any(hi < lo):
            continue
        ranges = [np.arange(lo[a], hi[a] + 1) for a in range(n)]
        mesh = np.meshgrid(*ranges, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        d = np.linalg.norm(nodes - target[None, :], axis=1)
        for node in nodes[d <= reach]:
            cand.add(tuple(int(v) for v in node))
    if not cand:
        return {}
    nodes = np.array(sorted(cand), dtype=float)
    samples = max(1, int(round(step_len / max(min(delta_cells, delta_perp_cells) / 2.0, 0.5))))
    fracs = (np.arange(samples) + 0.5) / samples
    inside = np.zeros(len(nodes))
    for fr in fracs:
        pts = (nodes - (1.0 - fr) * off[None, :]) / scale[None, :]
        dist = kdtree_scaled.query(pts)[0]
        inside += (dist <= 1.0).astype(float)
    inside /= samples
    return {
        tuple(int(v) for v in node): float(frac)
        for node, frac in zip(nodes.astype(int), inside)
        if frac > 0.0
    }


@dataclass
class PerturbationResult:
    field: GridField
    raw: GridField  # pre-mollification value
    u: GridField  # chain value function (for invariant checks)
    delta: float
    capture: float  # max captured neighborhood length over all chains
    k_mask: np.ndarray
    checks: dict = field(default_factory=dict)


def perturbation_g(k_points, cone: ConeSpec, eps, grid: GridSpec,
                   delta: float = None, delta_perp: float = None,
                   stencil_bmax: int = 6, mollify_cells: int = 1) -> PerturbationResult:
    """Cone-chain value function with unit slope along the axis at K.

    Stage 1 shrinks the dilation radius delta (from 8 grid cells down to
    2) until the best cone chain picks up at most ``eps`` of dilated-K
    length; with ``eps=None`` the given delta is used as is and the
    capture is only recorded.  Stage 2 runs the Bellman sweep u along
    increasing axis coordinate and takes g(x) = max_s (u(x + s e) - s)
    along grid rays.  Stage 3 box-mollifies below the dilation radius.

    ``delta_perp`` squeezes the dilation across the axis (needle-shaped
    A), which steepens the transverse kink of the value function; it
    defaults to the isotropic ball.

    The returned checks report the grid-measured contract: values within
    [0, capture], forward axis slope within [0, 1] and equal to 1 on
    cells meeting K, transverse slopes within the cone bound.
    """
    k_points = np.asarray(k_points, dtype=float).reshape(-1, grid.n)
    axis, sign = _axis_of(cone.e)
    h = grid.spacing

    if len(k_points) == 0:
        z = GridField.zeros(grid)
        return PerturbationResult(z, z.copy(), z.copy(), delta or 2 * h, 0.0,
                                  np.zeros(grid.shape, bool), {"empty": True})

    # swept frame: sweep axis first, flipped so the cone points along +axis0
    perm = (axis,) + tuple(a for a in range(grid.n) if a != axis)
    inv_perm = np.argsort(perm)
    shape_t = tuple(grid.shape[a] for a in perm)
    kidx = (k_points - np.array(grid.origin)) / h
    kidx = kidx[:, list(perm)]
    if sign < 0:
        kidx[:, 0] = (shape_t[0] - 1) - kidx[:, 0]

    offsets = _stencil_offsets(cone.alpha, stencil_bmax, grid.n)
    lengths = {off: h * float(np.linalg.norm(off)) for off in offsets}

    if delta is None and eps is None:
        delta = 2 * h
    ladder = [delta] if delta is not None else [8 * h, 4 * h, 2 * h]

    u = None
    used_delta = None
    capture = None
    for dl in ladder:
        if dl < 2 * h:
            continue
        dl_perp = delta_perp if delta_perp is not None else dl
        scale = np.array([dl / h] + [dl_perp / h] * (grid.n - 1))
        ktree = cKDTree(kidx / scale[None, :])
        gain_maps = {
            off: _segment_gains(shape_t, kidx, ktree, dl / h, dl_perp / h, off)
            for off in offsets
        }
        u = _bellman_sweep(shape_t, offsets, lengths, gain_maps)
        capture = float(u.max())
        used_delta = dl
        if eps is None or capture <= eps:
            break
    if eps is not None and capture > eps:
        raise PerturbationError(
            f"target set is not cone-null at grid resolution: best chain "
            f"captures {capture:.6g} > eps {eps:.6g}", capture)

    # g(x) = max over s >= 0 of u(x + s e) - s, one backward pass per ray
    g = u.copy()
    for i in range(shape_t[0] - 2, -1, -1):
        np.maximum(u[i], g[i + 1] - h, out=g[i])

    def untransform(arr: np.ndarray) -> np.ndarray:
        out = np.flip(arr, axis=0) if sign < 0 else arr
        return np.transpose(out, axes=inv_perm)

    u_field = GridField(grid, untransform(u).copy())
    raw = GridField(grid, untransform(g).copy())
    smooth = raw.mollify(mollify_cells) if mollify_cells > 0 else raw.copy()

    tree = cKDTree(k_points)
    axes = [grid.node_coordinates(a) for a in range(grid.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    dist = tree.query(nodes)[0].reshape(grid.shape)
    k_mask = dist <= 0.5 * h + 1e-12

    checks = _slope_checks(smooth, axis, sign, k_mask, mollify_cells)
    checks["capture"] = capture
    checks["delta"] = used_delta
    return PerturbationResult(smooth, raw, u_field, used_delta, capture, k_mask, checks)


def _bellman_sweep(shape_t, offsets, lengths, gain_maps) -> np.ndarray:
    """u(y) = max over stencil steps d of u(y - d) + |d| * chord fraction."""
    u = np.zeros(shape_t)
    trans_shape = shape_t[1:]
    # per-offset sparse gains grouped by swept column
    gain_by_col: dict[int, list] = {}
    for off, gains in gain_maps.items():
        for node, frac in gains.items():
            gain_by_col.setdefault(node[0], []).append((off, node[1:], frac))
    for i in range(1, shape_t[0]):
        acc = u[i]  # start from 0 (fresh chains allowed anywhere)
        for off in offsets:
            a = off[0]
            if a > i:
                continue
            pred = u[i - a]
            cand = _shift_transverse(pred, off[1:], trans_shape)
            np.maximum(acc, cand, out=acc)
        for off, tpos, frac in gain_by_col.get(i, []):
            a = off[0]
            if a > i:
                continue
            src = tuple(tpos[j] - off[1 + j] for j in range(len(tpos)))
            if any(s < 0 or s >= trans_shape[j] for j, s in enumerate(src)):
                continue
            val = u[i - a][src] + lengths[off] * frac
            if val > acc[tpos]:
                acc[tpos] = val
    return u


def _shift_transverse(row: np.ndarray, b, trans_shape) -> np.ndarray:
    """Shift a transverse slab by integer offsets, padding with zero."""
    if all(v == 0 for v in b):
        return row
    out = np.zeros(trans_shape)
    src = []
    dst = []
    for size, off in zip(trans_shape, b):
        if off >= 0:
            src.append(slice(0, size - off))
            dst.append(slice(off, size))
        else:
            src.append(slice(-off, size))
            dst.append(slice(0, size + off))
    out[tuple(dst)] = row[tuple(src)]
    return out


def _slope_checks(fieldobj: GridField, axis: int, sign: int, k_mask: np.ndarray,
                  mollify_cells: int) -> dict:
    h = fieldobj.spec.spacing
    diffs = sign * np.diff(fieldobj.values, axis=axis) / h
    checks = {
        "value_min": float(fieldobj.values.min()),
        "value_max": float(fieldobj.values.max()),
        "e_slope_min": float(diffs.min()) if diffs.size else 0.0,
        "e_slope_max": float(diffs.max()) if diffs.size else 0.0,
    }
    # forward slope on cells meeting K (forward in the cone direction)
    sl = [slice(None)] * fieldobj.n
    sl[axis] = slice(0, -1) if sign > 0 else slice(1, None)
    k_fwd = k_mask[tuple(sl)]
    if np.any(k_fwd):
        checks["e_slope_on_k_min"] = float(diffs[k_fwd].min())
        checks["e_slope_on_k_max"] = float(diffs[k_fwd].max())
    trans = 0.0
    for a in range(fieldobj.n):
        if a == axis:
            continue
        d = np.abs(np.diff(fieldobj.values, axis=a)) / h
        if d.size:
            trans = max(trans, float(d.max()))
    checks["transverse_slope_max"] = trans
    checks["mollify_cells"] = mollify_cells
    return checks


def localized_bump(g: GridField, center, r: float, r_prime: float,
                   eps_prime: float = None, axis: int = None, sign: int = 1,
                   k_mask: np.ndarray = None):
    """Multiply a field by a smooth radial cutoff: 1 inside B(center, r),
    0 outside B(center, r_prime), slope at most 2/(r_prime - r).

    Returns (field, checks); the checks report support containment and,
    when the cone axis is supplied, the retained unit slope on K-cells
    inside the inner ball and the lower slope bound.
    """
    if r >= r_prime:
        raise ValueError("need r < r_prime")
    center = np.asarray(center, dtype=float)
    spec = g.spec
    axes = [spec.node_coordinates(a) for a in range(spec.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    dist = np.sqrt(sum((m - c) ** 2 for m, c in zip(mesh, center)))
    t = np.clip((r_prime - dist) / (r_prime - r), 0.0, 1.0)
    cutoff = 3 * t**2 - 2 * t**3
    out = GridField(spec, g.values * cutoff)

    checks = {
        "support_outside_max": float(np.max(np.abs(out.values[dist >= r_prime]), initial=0.0)),
        "cutoff_slope_bound": 1.5 / (r_prime - r),
    }
    if axis is not None:
        h = spec.spacing
        diffs = sign * np.diff(out.values, axis=axis) / h
        checks["e_slope_min"] = float(diffs.min()) if diffs.size else 0.0
        if eps_prime is not None:
            checks["lower_bound_ok"] = checks["e_slope_min"] >= -eps_prime - 1e-9
        if k_mask is not None:
            sl = [slice(None)] * spec.n
            sl[axis] = slice(0, -1) if sign > 0 else slice(1, None)
            inner = k_mask[tuple(sl)] & (dist[tuple(sl)] <= r)
            if np.any(inner):
                checks["e_slope_on_k_min"] = float(diffs[inner].min())
    return out, checks


def regularize_keep(f: GridField, k_points, phi, eps: float):
    """Smooth a field away from a kept set without touching it.

    A dyadic annulus ladder over dist(x, K) carries a partition of unity;
    each annulus is box-mollified with a radius small enough that the
    total Lipschitz growth stays below eps and the pointwise deviation
    below phi(dist).  Cells meeting K keep their values bit-exact.

    Returns (field, checks).
    """
    k_points = np.asarray(k_points, dtype=float).reshape(-1, f.n)
    if len(k_points) == 0:
        raise ValueError("kept set must be nonempty")
    h = f.spec.spacing
    lip = max(f.lipschitz_estimate(), 1e-12)

    axes = [f.spec.node_coordinates(a) for a in range(f.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    dist = cKDTree(k_points).query(nodes)[0].reshape(f.spec.shape)
    k_cells = dist <= 0.5 * h + 1e-12

    with np.errstate(divide="ignore"):
        t = np.where(dist > 0, np.log2(1.0 / np.maximum(dist, 1e-300)), np.inf)
    k_max = max(1, int(np.ceil(np.log2(1.0 / (2 * h)))))

    out = f.values.copy()
    correction = np.zeros_like(out)
    for k in range(0, k_max + 1):
        sigma = np.clip(1.0 - np.abs(t - k), 0.0, 1.0)
        if k == 0:
            sigma = np.where(t <= 0, 1.0, sigma)
        sigma[~np.isfinite(t)] = 0.0
        if not np.any(sigma > 0):
            continue
        grad = 0.0
        for a in range(f.n):
            d = np.abs(np.diff(sigma, axis=a)) / h
            if d.size:
                grad = max(grad, float(d.max()))
        annulus_floor = 2.0 ** (-(k + 1))
        r_k = min(
            (2.0**-k) * eps / (lip * max(grad, 1e-12)),
            phi(annulus_floor) / lip,
        )
        cells = int(r_k / h)
        if cells < 1:
            continue
        smoothed = f.mollify(cells).values
        correction += sigma * (smoothed - f.values)
    out = f.values + correction
    out[k_cells] = f.values[k_cells]
    result = GridField(f.spec, out)

    dev = np.abs(result.values - f.values)
    margin = phi(np.maximum(dist, 1e-300)) + 1e-12
    checks = {
        "exact_on_k": bool(np.all(result.values[k_cells] == f.values[k_cells])),
        "deviation_ok": bool(np.all(dev[dist > 0] <= margin[dist > 0])),
        "deviation_max": float(dev.max()),
        "lip_before": lip,
        "lip_after": result.lipschitz_estimate(),
        "lip_budget": lip + eps + 3 * h * lip,
    }
    return result, checks


def _ball_volume(k: int) -> float:
    return pi ** (k / 2.0) / gamma(k / 2.0 + 1.0)


def anisotropic_smooth(f: GridField, V: Subspace, eps: float, r_prime: float):
    """Box smoothing wide along an axis-aligned subspace, thin across it.

    The transverse radius is eps * r_prime / L with L the measured
    Lipschitz constant, so directional derivatives along V move by at
    most M * eps at interior anchor cells, M = max over k of
    18 vol(B^{k-1}) / vol(B^k).

    Returns (field, checks).
    """
    if V.dim == 0:
        raise ValueError("subspace must be nontrivial")
    h = f.spec.spacing
    if r_prime < 2 * h:
        raise ValueError("kernel smaller than grid cell")
    along_axes = []
    for j in range(V.dim):
        col = V.frame[:, j]
        axis = int(np.argmax(np.abs(col)))
        probe = np.zeros(f.n)
        probe[axis] = np.sign(col[axis])
        if np.linalg.norm(col - probe) > 1e-9:
            raise ValueError("subspace must be axis-aligned on the grid")
        along_axes.append(axis)
    lip = max(f.lipschitz_estimate(), 1e-12)
    r_second = eps * r_prime / lip
    size = []
    for a in range(f.n):
        radius = r_prime if a in along_axes else r_second
        size.append(2 * int(radius / h) + 1)
    from scipy import ndimage

    out = GridField(f.spec, ndimage.uniform_filter(f.values, size=tuple(size), mode="nearest"))

    m_const = max(18.0 * _ball_volume(k - 1) / _ball_volume(k) for k in range(1, f.n + 1))
    # anchor error: smoothed slope vs raw difference quotient at kernel scale
    pad_cells = int(r_prime / h) + 1
    worst = 0.0
    for a in along_axes:
        sl_lo = [slice(pad_cells, s - pad_cells) for s in f.spec.shape]
        sl_hi = list(sl_lo)
        step = int(r_prime / h)
        sl_hi[a] = slice(pad_cells + step, f.spec.shape[a] - pad_cells + step)
        raw_q = (f.values[tuple(sl_hi)] - f.values[tuple(sl_lo)]) / (step * h)
        sm_lo = out.values[tuple(sl_lo)]
        sl_hi1 = list(sl_lo)
        sl_hi1[a] = slice(pad_cells + 1, f.spec.shape[a] - pad_cells + 1)
        sm_q = (out.values[tuple(sl_hi1)] - sm_lo) / h
        m = min(sm_q.shape[a - 0], raw_q.shape[a - 0])
        if raw_q.size and sm_q.size:
            worst = max(worst, float(np.max(np.abs(sm_q.ravel()[: raw_q.size] - raw_q.ravel()[: sm_q.size][: raw_q.size]))))
    checks = {
        "r_second": r_second,
        "m_constant": m_const,
        "anchor_error_max": worst,
        "anchor_budget": m_const * eps + 3 * h * lip,
    }
    return out, checks


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass
class AssemblyParams:
    grid: GridSpec = None
    pad: float = 0.3  # probe room beyond the atom bounding box
    resolution: int = 1024  # cells per axis when the grid is auto-built
    alpha_narrow: float = np.deg2rad(10.0)  # full-codimension patches
    alpha_wide: float = np.deg2rad(70.0)  # patches with directions to protect
    delta_cells: float = 5.0
    delta_perp_cells: float = 2.0  # needle dilation across the cone axis
    stencil_bmax: int = 3
    stencil_bmax_wide: int = 12
    mollify_cells: int = 0
    cluster_tol: float = np.deg2rad(5.0)
    ball_gap_cells: float = 2.4  # single-linkage gap, in delta units
    ball_pad: float = 2.0  # ball radius beyond cluster extent, in delta units
    rprime_gap_fraction: float = 0.45  # r' - r as a fraction of the linkage gap
    include_diagonal_round: bool = True


@dataclass
class RoundRecord:
    direction: np.ndarray
    covered_mass: float
    target_mass: float
    bound: float  # target/(4d)
    balls: int
    captures: list


@dataclass
class AssemblyResult:
    field: GridField
    rounds: list
    patches: list  # (atom indices, subspace, d)
    lipschitz: float
    params: AssemblyParams

    def round_bounds_ok(self) -> bool:
        return all(r.covered_mass >= r.bound - 1e-12 for r in self.rounds)


def _cluster_atoms(positions: np.ndarray, gap: float) -> list[np.ndarray]:
    """Single-linkage clusters under the gap threshold (deterministic)."""
    m = len(positions)
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree = cKDTree(positions)
    for i, j in tree.query_pairs(gap):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(m):
        groups.setdefault(find(i), []).append(i)
    return [np.array(groups[k], dtype=int) for k in sorted(groups)]


def _cluster_patches(bundle: Bundle, tol: float) -> list[list[int]]:
    """Greedy frame clustering: same dimension, frames within angle tol."""
    unassigned = list(range(len(bundle)))
    patches: list[list[int]] = []
    while unassigned:
        seed = unassigned[0]
        patch = [i for i in unassigned
                 if bundle[i].dim == bundle[seed].dim
                 and d_gr(bundle[i], bundle[seed]) <= np.sin(tol) + 1e-12]
        patches.append(patch)
        unassigned = [i for i in unassigned if i not in set(patch)]
    return patches


def _rotation_to_axis(e: np.ndarray) -> np.ndarray:
    """2x2 rotation R with R e = axis 0."""
    c, s = float(e[0]), float(e[1])
    return np.array([[c, s], [-s, c]])


def _round_directions(n: int, full_codim: bool, complement: Subspace,
                      include_diag: bool) -> list[np.ndarray]:
    if full_codim:
        dirs = [np.eye(n)[a] for a in range(n - 1, -1, -1)]
        if n == 2 and include_diag:
            dirs.append(np.array([1.0, 1.0]) / np.sqrt(2))
        return dirs
    dirs = []
    for j in range(complement.dim):
        col = complement.frame[:, j]
        axis = int(np.argmax(np.abs(col)))
        probe = np.zeros(n)
        probe[axis] = np.sign(col[axis])
        if np.linalg.norm(col - probe) > 1e-9:
            raise ValueError("patching failure: complement frame is not grid-aligned")
        dirs.append(probe)
    return dirs


def _auto_grid(mu: AtomicMeasure, params: AssemblyParams) -> GridSpec:
    lo = mu.positions.min(axis=0) - params.pad
    hi = mu.positions.max(axis=0) + params.pad
    span = float(np.max(hi - lo))
    spacing = span / (params.resolution - 1)
    shape = tuple(int(np.ceil((hi[a] - lo[a]) / spacing)) + 1 for a in range(mu.n))
    return GridSpec(tuple(lo), spacing, shape)


def assemble_nondiff(mu: AtomicMeasure, bundle: Bundle, rounds: int,
                     params: AssemblyParams = None) -> AssemblyResult:
    """Build a Lipschitz grid field non-differentiable transverse to the bundle.

    Atoms are clustered into patches of near-constant bundle frame; on
    each patch with positive codimension d, every round sweeps one
    complement direction, covers the patch atoms with disjoint balls
    around spatial clusters, and adds a signed half bump from the cone
    value function of each ball's atom set.  Cone opening is narrow when
    there is nothing to protect (d = n) and wide otherwise, so difference
    quotients along the bundle stay small.  The final field is the
    2^-i-weighted sum of the patch fields; each round's covered mass is
    recorded against the target mass / (4 d) bound.
    """
    params = params or AssemblyParams()
    if len(bundle) != mu.count:
        raise ValueError("bundle keyed to a different measure")
    grid = params.grid or _auto_grid(mu, params)
    h = grid.spacing
    delta = params.delta_cells * h

    patch_sets = _cluster_patches(bundle, params.cluster_tol)
    rounds_log: list[RoundRecord] = []
    patch_fields: list[GridField] = []
    patch_info = []

    for patch in patch_sets:
        v_patch = bundle[patch[0]]
        d = mu.n - v_patch.dim
        patch_info.append((patch, v_patch, d))
        if d == 0:
            continue
        full_codim = v_patch.dim == 0
        alpha = params.alpha_narrow if full_codim else params.alpha_wide
        bmax = params.stencil_bmax if full_codim else params.stencil_bmax_wide
        dirs = _round_directions(mu.n, full_codim, v_patch.orthogonal_complement(),
                                 params.include_diagonal_round)
        positions = mu.positions[patch]
        weights = mu.weights[patch]
        gap = params.ball_gap_cells * delta
        field_patch = GridField.zeros(grid)
        uncovered = np.ones(len(patch), dtype=bool)

        for r in range(rounds):
            e = dirs[r % len(dirs)]
            axis_aligned = np.count_nonzero(np.abs(e) > 1e-12) == 1
            covered = 0.0
            captures = []
            target = float(weights[uncovered].sum())
            live = np.where(uncovered)[0]
            if len(live) == 0:
                rounds_log.append(RoundRecord(e, 0.0, 0.0, 0.0, 0, []))
                continue
            clusters = _cluster_atoms(positions[live], gap)
            clusters = [live[c] for c in clusters]
            order = np.argsort([-float(weights[c].sum()) for c in clusters], kind="stable")
            clusters = [clusters[i] for i in order]  # greedy: heaviest first
            for cl in clusters:
                pts = positions[cl]
                center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
                radius = float(np.max(np.linalg.norm(pts - center, axis=1)))
                r_ball = radius + params.ball_pad * delta
                r_prime = r_ball + max(params.rprime_gap_fraction * gap, 0.1 * r_ball)
                margin = r_prime + (params.mollify_cells + 2) * h
                perp = params.delta_perp_cells * h
                try:
                    if axis_aligned:
                        sub, offset = grid.subwindow(center - margin, center + margin)
                        res = perturbation_g(pts, ConeSpec(e, alpha), None, sub,
                                             delta=delta, delta_perp=perp,
                                             stencil_bmax=bmax,
                                             mollify_cells=params.mollify_cells)
                        bump, _ = localized_bump(res.field, center, r_ball, r_prime)
                        s = _bump_sign(field_patch, center, e, h)
                        field_patch.add_window(offset, bump, scale=0.5 * s)
                    else:
                        rot = _rotation_to_axis(e)
                        local_pts = (pts - center) @ rot.T
                        m_cells = int(np.ceil(margin / h)) + 1
                        spec_loc = GridSpec((-m_cells * h,) * mu.n, h,
                                            (2 * m_cells + 1,) * mu.n)
                        res = perturbation_g(local_pts,
                                             ConeSpec(np.eye(mu.n)[0], alpha), None,
                                             spec_loc, delta=delta, delta_perp=perp,
                                             stencil_bmax=bmax,
                                             mollify_cells=params.mollify_cells)
                        bump, _ = localized_bump(res.field, np.zeros(mu.n),
                                                 r_ball, r_prime)
                        s = _bump_sign(field_patch, center, e, h)
                        _add_rotated(field_patch, bump, center, rot, 0.5 * s)
                except PerturbationError:
                    continue
                captures.append(res.capture)
                covered += float(weights[cl].sum())
                uncovered[cl] = False
            rounds_log.append(RoundRecord(e, covered, target, target / (4.0 * d),
                                          len(clusters), captures))
        patch_fields.append(field_patch)

    total = GridField.zeros(grid)
    active = [f for f in patch_fields]
    for i, fp in enumerate(active):
        if len(active) > 1:
            # keep patch atoms untouched while smoothing the tail crosstalk
            fp, _ = regularize_keep(fp, mu.positions, lambda t: t**2, 0.05)
        total.values += (0.5 ** (i + 1)) * fp.values
    return AssemblyResult(total, rounds_log, patch_info, total.lipschitz_estimate(), params)


def _bump_sign(field_patch: GridField, center: np.ndarray, e: np.ndarray, h: float) -> float:
    """+1 where the current field's directional slope at the ball center is <= 0."""
    hi = field_patch.at(center + 2 * h * e)
    lo = field_patch.at(center - 2 * h * e)
    return 1.0 if (hi - lo) <= 0.0 else -1.0


def _add_rotated(target: GridField, bump: GridField, center: np.ndarray,
                 rot: np.ndarray, scale: float) -> None:
    """Accumulate a bump living in a rotated local frame (resampled)."""
    spec = target.spec
    reach = max(abs(bump.spec.origin[0]), float(bump.spec.top()[0]))
    lo = center - reach
    hi = center + reach
    sub, offset = spec.subwindow(lo, hi)
    axes = [sub.node_coordinates(a) for a in range(sub.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    local = (pts - center) @ rot.T
    inside = np.all(np.abs(local) <= reach, axis=1)
    vals = np.zeros(len(pts))
    if np.any(inside):
        vals[inside] = bump(local[inside])
    sl = tuple(slice(offset[a], offset[a] + sub.shape[a]) for a in range(sub.n))
    target.values[sl] += scale * vals.reshape(sub.shape)


# ---------------------------------------------------------------------------
# difference quotients and the testing apparatus
# ---------------------------------------------------------------------------


@dataclass
class QuotientRow:
    x: np.ndarray
    v: np.ndarray
    sigma: float
    ladder: np.ndarray
    quotients: np.ndarray
    t_plus: float
    t_minus: float
    u_sigma: float
    d_plus: float
    d_minus: float

    def cauchy_spread(self) -> float:
        """Spread of the quotients over the deepest third of the ladder."""
        tail = self.quotients[-max(1, len(self.quotients) // 3):]
        return float(tail.max() - tail.min())


def difference_quotients(f: GridField, x, v, sigma: float, levels: int = None) -> QuotientRow:
    """One-sided quotient ladder (f(x + h v) - f(x)) / h, h = sigma 2^-j.

    The ladder stops at 2 grid cells; T+/T- are the sup/inf over the
    ladder, U their spread, D+/D- the extremes over the deepest third.
    Raises when x + sigma v leaves the grid.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    h_grid = f.spec.spacing
    if not (f.contains(x) and f.contains(x + sigma * v)):
        raise ValueError("probe x + sigma v leaves the grid")
    j_max = int(np.floor(np.log2(sigma / (2 * h_grid))))
    if j_max < 0:
        raise ValueError("sigma below the grid floor")
    if levels is not None:
        j_max = min(j_max, levels)
    ladder = sigma * (2.0 ** -np.arange(0, j_max + 1))
    base = f.at(x)
    pts = x[None, :] + ladder[:, None] * v[None, :]
    quotients = (f(pts) - base) / ladder
    t_plus = float(quotients.max())
    t_minus = float(quotients.min())
    deep = quotients[-max(1, len(quotients) // 3):]
    return QuotientRow(x, v, sigma, ladder, quotients, t_plus, t_minus,
                       t_plus - t_minus, float(deep.max()), float(deep.min()))


def deviation_from_linearity(f: GridField, x, V: Subspace, alpha, delta: float,
                             directions: np.ndarray = None, radii=None) -> float:
    """Sampled sup of |f(x+h) - f(x) - alpha h| / |h| over h in V, |h| <= delta.

    ``alpha`` is a linear functional given by its coefficient vector.
    The sample set is a direction family inside V times a radius ladder.
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if V.dim == 0:
        return 0.0
    if directions is None:
        cols = [V.frame[:, j] for j in range(V.dim)]
        directions = []
        for c in cols:
            directions += [c, -c]
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                for s in (1.0, -1.0):
                    d = cols[i] + s * cols[j]
                    directions.append(d / np.linalg.norm(d))
        directions = np.array(directions)
    if radii is None:
        radii = delta * 2.0 ** -np.arange(0, 7)
    base = f.at(x)
    worst = 0.0
    for u in directions:
        for r in radii:
            hvec = r * u
            val = abs(f.at(x + hvec) - base - float(alpha @ hvec)) / r
            worst = max(worst, val)
    return worst


def check_nondiff(f: GridField, mu: AtomicMeasure, bundle: Bundle, directions,
                  sigmas, tol: float = 0.02):
    """Mass fraction of atoms whose quotient spread clears the cone bound.

    For each atom and unit direction v the spread U_sigma at the smallest
    admissible sigma is compared against dist(v, V(x)) / (3 sqrt d) - tol
    with d the bundle codimension at the atom (d = 0 passes vacuously).
    Returns (fraction, rows) where rows carry the full report.
    """
    directions = [np.asarray(v, dtype=float) for v in directions]
    rows = []
    passed_mass = 0.0
    total_mass = mu.total_mass() * len(directions)
    for i in range(mu.count):
        x = mu.positions[i]
        V = bundle[i]
        d = mu.n - V.dim
        for v in directions:
            rhs = 0.0
            if d > 0:
                rhs = V.distance_to(v) / (3.0 * np.sqrt(d))
            row = None
            for sigma in sorted(sigmas):
                if not f.contains(x + sigma * v):
                    continue
                try:
                    row = difference_quotients(f, x, v, sigma)
                except ValueError:
                    continue
                break
            ok = row is not None and row.u_sigma >= rhs - tol
            rows.append((i, v, row, rhs, ok))
            if ok:
                passed_mass += mu.weights[i]
    fraction = passed_mass / total_mass if total_mass > 0 else 1.0
    return fraction, rows
