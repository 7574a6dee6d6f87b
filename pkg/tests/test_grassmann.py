import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipbundle.grassmann import (
    Bundle,
    Subspace,
    d_gr,
    delta_deficiency,
    dimension_functional,
    essential_span,
    from_vectors,
    intersect,
    minimal_element,
)
from lipbundle.measures import AtomicMeasure


def random_subspace(rng, n, dim):
    if dim == 0:
        return Subspace.zero(n)
    return from_vectors([rng.standard_normal(n) for _ in range(dim)], n=n)


def sampled_hausdorff(v: Subspace, w: Subspace, samples: int = 4000, seed: int = 0):
    """Oracle: Hausdorff distance between unit-ball sections.

    The sup of dist(x, W cap B) over the section V cap B is attained on
    the unit sphere of V, so we sample sphere directions densely and then
    polish the best one by derivative-free local search.
    """
    rng = np.random.default_rng(seed)

    def dist_to_section(cloud: np.ndarray, b: Subspace) -> np.ndarray:
        proj = cloud @ b.projector().T if b.dim else np.zeros_like(cloud)
        norms = np.linalg.norm(proj, axis=1, keepdims=True)
        proj = np.where(norms > 1.0, proj / np.maximum(norms, 1e-30), proj)
        return np.linalg.norm(cloud - proj, axis=1)

    def side(a: Subspace, b: Subspace) -> float:
        if a.dim == 0:
            return 0.0
        dirs = rng.standard_normal((samples, a.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        vals = dist_to_section(dirs @ a.frame.T, b)
        best = dirs[int(np.argmax(vals))]
        best_val = float(np.max(vals))
        radius = 0.5
        for _ in range(40):
            props = best + radius * rng.standard_normal((60, a.dim))
            props /= np.linalg.norm(props, axis=1, keepdims=True)
            pvals = dist_to_section(props @ a.frame.T, b)
            i = int(np.argmax(pvals))
            if pvals[i] > best_val:
                best, best_val = props[i], float(pvals[i])
            radius *= 0.7
        return best_val

    return max(side(v, w), side(w, v))


def test_from_vectors_collinear_and_empty():
    e1 = np.array([1.0, 0.0])
    sp = from_vectors([e1, 2 * e1])
    assert sp.dim == 1
    assert sp.distance_to(np.array([3.0, 0.0])) <= 1e-12
    assert from_vectors([], n=2).dim == 0


def test_from_vectors_rank_two_plane():
    # oracle: 2x2 Gram determinant of the two inputs is nonzero
    v1 = np.array([1.0, 1.0, 0.0])
    v2 = np.array([1.0, -1.0, 0.0])
    gram = np.array([[v1 @ v1, v1 @ v2], [v2 @ v1, v2 @ v2]])
    assert abs(np.linalg.det(gram)) > 1e-9
    sp = from_vectors([v1, v2])
    assert sp.dim == 2
    assert sp.distance_to(np.array([0.3, -2.0, 0.0])) <= 1e-12
    assert sp.distance_to(np.array([0.0, 0.0, 1.0])) == pytest.approx(1.0)


def test_from_vectors_mixed_dims():
    with pytest.raises(ValueError):
        from_vectors([np.ones(2), np.ones(3)])


def test_d_gr_identity_and_lines():
    rng = np.random.default_rng(1)
    v = random_subspace(rng, 3, 2)
    assert d_gr(v, v) <= 1e-12
    for theta in (0.1, 0.4, 1.2):
        a = from_vectors([np.array([1.0, 0.0])])
        b = from_vectors([np.array([np.cos(theta), np.sin(theta)])])
        # oracle: dense sampling of unit vectors on each line
        oracle = sampled_hausdorff(a, b, seed=5)
        assert d_gr(a, b) == pytest.approx(np.sin(theta), abs=1e-12)
        assert abs(d_gr(a, b) - oracle) <= 1e-3


def test_d_gr_line_vs_plane():
    line = from_vectors([np.array([1.0, 0, 0])])
    plane = from_vectors([np.array([1.0, 0, 0]), np.array([0, 1.0, 0])])
    assert d_gr(line, plane) == pytest.approx(1.0)
    assert delta_deficiency(line, plane) <= 1e-15


def test_d_gr_hausdorff_agreement_random():
    rng = np.random.default_rng(42)
    for _ in range(4):
        v = random_subspace(rng, 4, int(rng.integers(1, 4)))
        w = random_subspace(rng, 4, int(rng.integers(1, 4)))
        assert abs(d_gr(v, w) - sampled_hausdorff(v, w, 6000, 3)) <= 1e-3


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 5))
def test_d_gr_triangle_inequality(seed, n):
    rng = np.random.default_rng(seed)
    dims = rng.integers(0, n + 1, size=3)
    a, b, c = (random_subspace(rng, n, int(d)) for d in dims)
    assert d_gr(a, c) <= d_gr(a, b) + d_gr(b, c) + 1e-9


def test_intersect_planes():
    xy = from_vectors([np.eye(3)[0], np.eye(3)[1]])
    yz = from_vectors([np.eye(3)[1], np.eye(3)[2]])
    # oracle: brute-force nullspace of stacked complement projectors
    stacked = np.vstack([np.eye(3) - xy.projector(), np.eye(3) - yz.projector()])
    ns = np.linalg.svd(stacked)[2][-1]
    got = intersect(xy, yz)
    assert got.dim == 1
    assert got.distance_to(ns / np.linalg.norm(ns)) <= 1e-9
    assert got.distance_to(np.eye(3)[1]) <= 1e-9


def test_intersect_trivial_cases():
    rng = np.random.default_rng(0)
    v = random_subspace(rng, 4, 2)
    assert d_gr(intersect(v, v), v) <= 1e-9
    assert intersect(v, Subspace.zero(4)).dim == 0
    assert intersect(Subspace.full(4), Subspace.full(4)).dim == 4


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_intersect_dimension_lower_bound(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    v = random_subspace(rng, n, int(rng.integers(0, n + 1)))
    w = random_subspace(rng, n, int(rng.integers(0, n + 1)))
    assert intersect(v, w).dim >= v.dim + w.dim - n


def unit_atoms(k, n=3):
    pos = np.zeros((k, n))
    pos[:, 0] = np.arange(k)
    return AtomicMeasure(n, pos, np.ones(k))


def test_minimal_element_pointwise_intersection():
    mu = unit_atoms(3, n=2)
    full = Bundle([Subspace.full(2)] * 3)
    xaxis = Bundle([from_vectors([np.array([1.0, 0.0])])] * 3)
    out = minimal_element([full, xaxis], mu)
    assert [s.dim for s in out.subspaces] == [1, 1, 1]
    assert dimension_functional(out, mu) == pytest.approx(3.0)


def test_minimal_element_singleton_and_containment():
    rng = np.random.default_rng(9)
    mu = unit_atoms(4)
    member = Bundle([random_subspace(rng, 3, int(rng.integers(0, 4))) for _ in range(4)])
    out = minimal_element([member], mu)
    for a, b in zip(out.subspaces, member.subspaces):
        assert d_gr(a, b) <= 1e-9

    other = Bundle([random_subspace(rng, 3, int(rng.integers(0, 4))) for _ in range(4)])
    mini = minimal_element([member, other], mu)
    for fam in (member, other):
        for a, b in zip(mini.subspaces, fam.subspaces):
            assert delta_deficiency(a, b) <= 1e-9
    assert dimension_functional(mini, mu) <= min(
        dimension_functional(member, mu), dimension_functional(other, mu)
    )


def test_minimal_element_plane_pair():
    mu = unit_atoms(1)
    xy = Bundle([from_vectors([np.eye(3)[0], np.eye(3)[1]])])
    yz = Bundle([from_vectors([np.eye(3)[1], np.eye(3)[2]])])
    out = minimal_element([xy, yz], mu)
    assert out[0].dim == 1
    assert dimension_functional(out, mu) == pytest.approx(1.0)


def test_minimal_element_key_mismatch():
    mu = unit_atoms(2)
    with pytest.raises(ValueError):
        minimal_element([Bundle([Subspace.full(3)] * 3)], mu)


def test_essential_span_cases():
    mu = unit_atoms(2, n=2)
    e1 = np.tile(np.array([1.0, 0.0]), (2, 1))
    e2 = np.tile(np.array([0.0, 1.0]), (2, 1))
    b1 = essential_span([e1], mu)
    assert [s.dim for s in b1.subspaces] == [1, 1]
    b2 = essential_span([e1, e2], mu)
    assert [s.dim for s in b2.subspaces] == [2, 2]
    mixed = np.array([[1.0, 0.0], [0.0, 1.0]])
    b3 = essential_span([mixed], mu)
    assert b3[0].distance_to(np.array([2.0, 0.0])) <= 1e-12
    assert b3[1].distance_to(np.array([0.0, 2.0])) <= 1e-12


def test_bundle_json_roundtrip():
    rng = np.random.default_rng(3)
    bundle = Bundle([random_subspace(rng, 3, d) for d in (0, 1, 2)])
    text = bundle.to_json()
    back = Bundle.from_json(text, 3)
    for a, b in zip(bundle.subspaces, back.subspaces):
        assert d_gr(a, b) <= 1e-9
