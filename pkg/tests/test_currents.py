import numpy as np
import pytest

from lipbundle.currents import (
    FormField,
    PolylineCurrent1,
    TriangleMeshCurrent2,
    atomize,
    ball_lattice_candidates,
    boundary,
    boundary2,
    cone_closure,
    interior_current,
    mass,
    pair_current_form,
    pushforward_current,
    tangential_derivative,
    verify_boundary_formula,
    verify_interior_boundary,
    verify_pushforward_formula,
)
from lipbundle.exterior import multi_indices
from lipbundle.measures import PolylineCurve, VectorAtomMeasure


def segment_current(a, b, m=1.0):
    return PolylineCurrent1([(m, PolylineCurve(np.array([a, b], dtype=float)))])


def polygon_current(mvert, radius=1.0, m=1.0):
    theta = 2 * np.pi * np.arange(mvert + 1) / mvert
    pts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return PolylineCurrent1([(m, PolylineCurve(pts))])


def test_mass_cases():
    T = segment_current([0, 0], [1, 0])
    assert mass(T) == pytest.approx(1.0)
    double = PolylineCurrent1(
        [
            (1.0, PolylineCurve(np.array([[0.0, 0.0], [1.0, 0.0]]))),
            (1.0, PolylineCurve(np.array([[1.0, 0.0], [0.0, 0.0]]))),
        ]
    )
    assert mass(double) == pytest.approx(2.0)
    tri = PolylineCurrent1(
        [(1.0, PolylineCurve(np.array([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2], [0, 0]], dtype=float)))]
    )
    assert mass(tri) == pytest.approx(3.0)


def test_boundary_segment_and_loop():
    T = segment_current([0, 0], [1, 0])
    b = boundary(T)
    got = {tuple(x): w for x, w in zip(b.positions, b.weights)}
    assert got == {(1.0, 0.0): 1.0, (0.0, 0.0): -1.0}
    loop = polygon_current(16)
    assert boundary(loop).count == 0


def test_boundary2_shared_edge_cancellation():
    # two coherently oriented triangles sharing an edge -> outer quad only
    a, b, c, d = [0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]
    mesh = TriangleMeshCurrent2([(1.0, np.array([a, b, c])), (1.0, np.array([a, c, d]))])
    bd = boundary2(mesh)
    assert len(bd.pieces) == 4
    # the shared diagonal a-c must be gone
    for _, curve in bd.pieces:
        pts = {tuple(v) for v in curve.vertices}
        assert pts != {(0.0, 0.0), (1.0, 1.0)}
    # and the edge chain closes up
    assert boundary(bd).total_variation() <= 1e-9


def test_boundary_of_boundary_is_zero():
    rng = np.random.default_rng(2)
    tris = []
    base = rng.standard_normal((5, 3))
    for i in range(1, 4):
        tris.append((float(rng.uniform(0.5, 2.0)), np.array([base[0], base[i], base[i + 1]])))
    mesh = TriangleMeshCurrent2(tris)
    assert boundary(boundary2(mesh)).total_variation() <= 1e-9


def test_atomize_segment_and_triangle():
    T = segment_current([0, 0], [1, 0])
    atoms = atomize(T, 0.5)
    assert atoms.count == 2
    assert np.allclose(atoms.vectors, [[0.5, 0.0], [0.5, 0.0]])

    tri = TriangleMeshCurrent2([(1.0, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))])
    atoms2 = atomize(tri, 0.3)
    # area sums to 1/2, all orientation in the e12 slot
    assert np.sum(atoms2.vectors[:, 0]) == pytest.approx(0.5, rel=1e-12)

    empty = PolylineCurrent1([])
    assert atomize(empty, 0.5).count == 0


def test_interior_current_cases():
    x = np.array([0.2, 0.7])
    atoms = VectorAtomMeasure(2, 1, np.array([x]), np.array([[1.0, 0.0]]))
    out = interior_current(atoms, FormField.constant(2, 1, [1.0, 0.0]))
    assert out.k == 0
    assert out.vectors[0, 0] == pytest.approx(1.0)
    out2 = interior_current(atoms, FormField.constant(2, 1, [0.0, 1.0]))
    assert out2.vectors[0, 0] == pytest.approx(0.0)

    atoms3 = VectorAtomMeasure(3, 2, np.array([[0.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    out3 = interior_current(atoms3, FormField.constant(3, 1, [1.0, 0.0, 0.0]))
    assert np.allclose(out3.vectors, [[0.0, 1.0, 0.0]])  # e_12 . e*_1 = e_2


def test_interior_current_duality_random_probes():
    rng = np.random.default_rng(8)
    n = 3
    m2 = len(multi_indices(n, 2))
    atoms = VectorAtomMeasure(n, 2, rng.standard_normal((5, n)), rng.standard_normal((5, m2)))
    for _ in range(10):
        w_coef = rng.standard_normal(n)
        s_coef = rng.standard_normal(n)
        omega = FormField.constant(n, 1, w_coef)
        sigma = FormField.constant(n, 1, s_coef)
        lhs = pair_current_form(interior_current(atoms, omega), sigma)
        ws = FormField.constant(n, 2, None) if False else None
        from lipbundle.exterior import KCovector, wedge

        prod = wedge(KCovector(n, 1, w_coef), KCovector(n, 1, s_coef))
        rhs = pair_current_form(atoms, FormField.constant(n, 2, prod.coeffs))
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))


def test_pushforward_identity_constant_linear():
    T = segment_current([0, 0], [1, 0])
    ident = pushforward_current(T, lambda x: x, 0.25)
    assert mass(ident) == pytest.approx(1.0, abs=1e-12)

    zero = pushforward_current(T, lambda x: np.array([1.0, 2.0]), 0.25)
    assert mass(zero) == 0.0 if zero.pieces else True
    assert not zero.pieces

    A = np.array([[2.0, 0.0], [0.0, 0.5]])
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    Tv = segment_current([0, 0], v)
    img = pushforward_current(Tv, lambda x: A @ x, 0.1)
    assert mass(img) == pytest.approx(np.linalg.norm(A @ v), rel=1e-12)


def test_pushforward_mass_bound_lipschitz():
    rng = np.random.default_rng(4)
    pts = rng.standard_normal((6, 2))
    T = PolylineCurrent1([(1.0, PolylineCurve(pts))])

    def f(x):
        return np.array([np.sin(x[0]) + 0.5 * x[1], np.cos(x[1])])

    # sampled Lipschitz constant of f along the curve scale
    lip = 0.0
    for a in pts:
        for b in pts + rng.normal(0, 0.1, pts.shape):
            if np.linalg.norm(b - a) > 1e-9:
                lip = max(lip, np.linalg.norm(f(b) - f(a)) / np.linalg.norm(b - a))
    img = pushforward_current(T, f, 0.01)
    assert mass(img) <= (lip + 0.1) * mass(T) + 1e-6


def test_tangential_derivative_constant_linear_quadratic():
    n = 2
    seg = segment_current([0, 0], [1, 0])
    atoms = atomize(seg, 0.1)
    const = FormField.constant(n, 0, [3.0])
    rows = tangential_derivative(const, atoms, 1e-4)
    assert np.max(np.abs(rows)) == 0.0

    lin = FormField(n, 0, lambda x: np.array([x[0]]), 1.0, np.inf)
    rows = tangential_derivative(lin, atoms, 1e-4)
    # d_T f = e*_1 on every atom
    assert np.allclose(rows[:, 0], 1.0, atol=1e-10)
    assert np.allclose(rows[:, 1], 0.0, atol=1e-12)

    quad = FormField(n, 0, lambda x: np.array([x[0] ** 2]), 2.0, np.inf)
    pt_atoms = VectorAtomMeasure(n, 1, np.array([[0.3, 0.0]]), np.array([[1.0, 0.0]]))
    rows = tangential_derivative(quad, pt_atoms, 1e-3)
    assert rows[0, 0] == pytest.approx(0.6, abs=1e-6)


def test_boundary_formula_segment_linear():
    seg = segment_current([0, 0], [1, 0])
    f = FormField(2, 0, lambda x: np.array([x[0]]), 1.0, np.inf)
    res = verify_boundary_formula(seg, f, step=1e-5, delta=0.05)
    assert res <= 1e-10


def test_boundary_formula_loop_zero_lhs():
    loop = polygon_current(64)
    f = FormField(2, 0, lambda x: np.array([np.sin(x[0]) * x[1]]), 2.0, np.inf)
    b = boundary(loop)
    assert b.count == 0
    res = verify_boundary_formula(loop, f, step=1e-5, delta=0.02)
    assert res <= 1e-3  # residual equals |RHS| and must vanish with the mesh


def test_boundary_formula_circle_distance_function():
    loop = polygon_current(360)
    f = FormField(
        2, 0, lambda x: np.array([np.linalg.norm(x - np.array([2.0, 0.0]))]), 1.0, np.inf
    )
    res = verify_boundary_formula(loop, f, step=1e-4, delta=1e-2)
    assert res <= 1e-4


def unit_square_mesh(cells=4):
    tris = []
    h = 1.0 / cells
    for i in range(cells):
        for j in range(cells):
            a = np.array([i * h, j * h])
            b = np.array([(i + 1) * h, j * h])
            c = np.array([(i + 1) * h, (j + 1) * h])
            d = np.array([i * h, (j + 1) * h])
            tris.append((1.0, np.array([a, b, c])))
            tris.append((1.0, np.array([a, c, d])))
    return TriangleMeshCurrent2(tris)


def test_interior_boundary_constant_form():
    mesh = unit_square_mesh(2)
    const = FormField.constant(2, 0, [2.0])
    res = verify_interior_boundary(mesh, const, step=1e-5, delta=0.2)
    assert res <= 1e-10


def test_interior_boundary_smooth_form():
    mesh = unit_square_mesh(8)

    def ev(x):
        return np.array([x[1], 0.0])  # omega = x_2 e*_1

    res = verify_interior_boundary(mesh, FormField(2, 1, ev, 1.0, np.sqrt(2)), step=1e-5, delta=0.05)
    assert res <= 1e-3


def test_interior_boundary_kink_off_support():
    # omega = |x_1| e*_1 is smooth on a mesh kept away from x_1 = 0
    tris = []
    h = 0.25
    for i in range(4):
        for j in range(4):
            a = np.array([1.0 + i * h, j * h])
            b = np.array([1.0 + (i + 1) * h, j * h])
            c = np.array([1.0 + (i + 1) * h, (j + 1) * h])
            d = np.array([1.0 + i * h, (j + 1) * h])
            tris.append((1.0, np.array([a, b, c])))
            tris.append((1.0, np.array([a, c, d])))
    mesh = TriangleMeshCurrent2(tris)

    def ev(x):
        return np.array([abs(x[0]), 0.0])

    res = verify_interior_boundary(mesh, FormField(2, 1, ev, 1.0, np.inf), step=1e-5, delta=0.06)
    assert res <= 1e-3


def test_pushforward_formula_identity_affine_kink():
    T = segment_current([0.1, 0.2], [0.9, 0.7])
    omega = FormField.constant(2, 1, [1.0, 0.0])
    assert verify_pushforward_formula(T, lambda x: x, omega, step=1e-5, delta=0.02) <= 1e-10

    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    bvec = np.array([0.3, -0.4])
    res = verify_pushforward_formula(T, lambda x: A @ x + bvec, omega, step=1e-5, delta=0.02)
    assert res <= 1e-10

    # f with a kink along x_2 = 0 on a segment that stays above it
    seg = segment_current([0.0, 0.5], [1.0, 1.5])

    def kink(x):
        return np.array([x[0], abs(x[1])])

    assert verify_pushforward_formula(seg, kink, omega, step=1e-6, delta=0.02) <= 1e-6


def test_cone_closure_outside_ball_is_empty():
    T = segment_current([2.0, 0.0], [3.0, 0.0])
    candidates = ball_lattice_candidates(np.zeros(2), 1.0, 8)
    U = cone_closure(T, np.zeros(2), 1.0, candidates, delta=0.05)
    assert not U.pieces


def test_cone_closure_diameter_chord():
    T = segment_current([-1.0, 0.0], [1.0, 0.0])
    candidates = ball_lattice_candidates(np.zeros(2), 1.0, 16, avoid=T.pieces[0][1].vertices)
    U = cone_closure(T, np.zeros(2), 1.0, candidates, delta=0.02)
    assert boundary(U).total_variation() <= 1e-9
    # agreement on the open ball: U contains the inside part of T unchanged
    atoms = atomize(U, 0.02)
    inside = np.linalg.norm(atoms.positions, axis=1) <= 1.0 + 0.05
    assert np.all(inside)


def test_cone_closure_inner_segment_constant():
    # path crossing the ball whose middle piece is a short segment deep inside;
    # the observed mass ratio against |T| restricted to the closed ball is recorded
    pts = np.array([[-1.5, 0.1], [-0.2, 0.1], [0.3, 0.15], [1.5, 0.15]])
    T = PolylineCurrent1([(1.0, PolylineCurve(pts))])
    candidates = ball_lattice_candidates(np.zeros(2), 1.0, 16, avoid=pts)
    U = cone_closure(T, np.zeros(2), 1.0, candidates, delta=0.02)
    assert boundary(U).total_variation() <= 1e-9
    atoms = atomize(T, 0.02)
    ball_mass = sum(
        np.linalg.norm(v)
        for x, v in zip(atoms.positions, atoms.vectors)
        if np.linalg.norm(x) <= 1.0
    )
    observed = mass(U) / ball_mass
    assert observed <= 20.0


def test_cone_closure_boundary_inside_raises():
    T = segment_current([0.0, 0.0], [0.5, 0.0])
    candidates = ball_lattice_candidates(np.zeros(2), 1.0, 8)
    with pytest.raises(ValueError):
        cone_closure(T, np.zeros(2), 1.0, candidates, delta=0.05)
