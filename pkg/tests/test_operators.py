import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigendrift import operators as op
from eigendrift.model import BoundaryCondition, Grid1D, Grid2D, graded_grid, make_problem


def test_bernoulli_branches_agree():
    t = np.array([-1e-4 * (1 + 1e-9), -1e-4 * (1 - 1e-9), 1e-4 * (1 - 1e-9), 1e-4 * (1 + 1e-9)])
    b = op.bernoulli(t)
    assert abs(b[0] - b[1]) < 1e-12 and abs(b[2] - b[3]) < 1e-12
    assert op.bernoulli(0.0) == 1.0


@given(st.floats(-700, 700))
def test_bernoulli_identity(t):
    # B(-t) - B(t) = t
    assert op.bernoulli(-t) - op.bernoulli(t) == pytest.approx(t, rel=1e-12, abs=1e-12)


def test_bernoulli_extreme_arguments():
    with np.errstate(all="raise"):
        b = op.bernoulli(np.array([-1e4, 1e4]))
    assert b[0] == pytest.approx(1e4) and b[1] == 0.0


def test_symmetrized_is_bitwise_symmetric():
    spec = make_problem("sin(3*x)", "x", {"left": BoundaryCondition.robin(c=1.5),
                                         "right": BoundaryCondition.neumann()}, D=0.05)
    T = op.assemble_symmetrized_1d(spec, graded_grid(0, 1, 200, [(0.0, 0.02)]))
    assert T.symmetric and np.array_equal(T.lower, T.upper)
    A = op.assemble_2d(make_problem("x*y + x^2", "1", dimension=2, D=0.2), Grid2D.uniform(0, 1, 12, 0, 1, 9))
    assert op._bitwise_symmetric(A.csr)


def test_fitted_row_sums_equal_V():
    spec = make_problem("(x-0.3)^2", "2 + x", "neumann", D=1e-3)
    g = Grid1D.uniform(0, 1, 64)
    A = op.assemble_direct_1d(spec, g)
    assert A.is_z_matrix()
    rows = A.matvec(np.ones(A.size))
    np.testing.assert_allclose(rows, 2 + g.nodes, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(A.row_sums, 2 + g.nodes, rtol=0, atol=1e-12)


def test_dirichlet_rows_removed():
    spec = make_problem("x", D=0.1)
    A = op.assemble_direct_1d(spec, Grid1D.uniform(0, 1, 10))
    assert A.size == 9
    np.testing.assert_array_equal(A.free, np.arange(1, 10))


def test_constant_V_shifts_diagonal_exactly():
    g = graded_grid(0, 1, 128, [(0.5, 0.01)])
    for bc in ("dirichlet", "neumann"):
        a = make_problem("(x-0.5)^2", "0", bc, D=0.01)
        b = make_problem("(x-0.5)^2", "3", bc, D=0.01)
        for build in (op.assemble_symmetrized_1d, op.assemble_direct_1d):
            A, B = build(a, g), build(b, g)
            np.testing.assert_allclose(B.main - A.main, 3.0, rtol=0, atol=1e-9)
            np.testing.assert_array_equal(A.lower, B.lower)


def test_five_point_laplacian():
    D, n = 0.7, 8
    g = Grid2D.uniform(0, 1, n, 0, 1, n)
    A = op.assemble_2d(make_problem("0", "0", dimension=2, D=D), g, op.DIRECT)
    h = 1.0 / n
    M = A.csr.toarray()
    assert M.shape == ((n - 1) ** 2,) * 2
    np.testing.assert_allclose(np.diag(M), 4 * D / h ** 2)
    off = M - np.diag(np.diag(M))
    assert set(np.round(off[off != 0] * h ** 2 / D, 12)) == {-1.0}
    # an interior row away from the boundary sums to zero
    i = (n - 1) * 3 + 3
    assert abs(M[i].sum()) < 1e-9


def test_transformed_potential_at_center():
    spec = make_problem("(x-0.5)^2+(y-0.5)^2", "0.25", dimension=2, D=0.1, alpha=2.0)
    assert op.transformed_potential(spec, 0.5, 0.5) == pytest.approx(2.0 * 4 + 0.25)


def test_centered_scheme_matches_fitted_at_small_peclet():
    spec = make_problem("sin(2*x)", "1", "neumann", D=0.5)
    g = Grid1D.uniform(0, 1, 400)
    C = op.assemble_direct_1d(spec, g, op.CENTERED).to_dense()
    F = op.assemble_direct_1d(spec, g, op.FITTED).to_dense()
    lc = np.min(np.linalg.eigvals(C).real)
    lf = np.min(np.linalg.eigvals(F).real)
    assert lc == pytest.approx(lf, rel=1e-4)


def test_symmetrized_rejects_kinks_and_direct_rejects_nodes_on_kinks():
    spec = make_problem("abs(x-0.5)^3", kinks=(0.5,))
    with pytest.raises(ValueError):
        op.assemble_symmetrized_1d(spec, Grid1D.uniform(0, 1, 11))
    with pytest.raises(RuntimeError):
        op.assemble_direct_1d(spec, Grid1D.uniform(0, 1, 10))


def test_dump_triplets_format():
    spec = make_problem("0", "0", D=1.0)
    text = op.dump_triplets(op.assemble_symmetrized_1d(spec, Grid1D.uniform(0, 1, 4)))
    lines = text.strip().splitlines()
    i, j, v = lines[0].split()
    assert (i, j) == ("0", "0") and float(v) == pytest.approx(32.0)
    rows = [tuple(map(int, l.split()[:2])) for l in lines]
    assert rows == sorted(rows)
