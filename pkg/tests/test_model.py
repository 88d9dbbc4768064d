import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigendrift import expr as ex
from eigendrift.model import (BoundaryCondition, Field, Grid1D, Grid2D, Potential, ProblemSpec,
                              graded_grid, make_problem, replace_spec, sample_field, validate)


def test_uniform_grid():
    g = Grid1D.uniform(0, 1, 100)
    assert g.n == 100 and len(g) == 101
    np.testing.assert_allclose(g.h, 0.01)
    assert g.weights.sum() == pytest.approx(1.0)
    assert g.diagnostics() == []


def test_grid_rejects_unsorted_nodes():
    with pytest.raises(ValueError):
        Grid1D(np.array([0.0, 0.5, 0.4, 1.0]))


def test_grid_diagnostics_flag_abrupt_grading():
    g = Grid1D(np.concatenate([np.linspace(0, 0.1, 11), np.linspace(0.2, 1, 5)]))
    assert any("cell ratio" in d for d in g.diagnostics())


def test_graded_grid_resolves_layer():
    g = graded_grid(0, 1, 512, [(1.0, 1e-3)])
    assert g.n == 512
    assert np.sum(g.nodes >= 1 - 1e-3) >= 16
    assert g.grading() <= 1.2 + 1e-12


def test_graded_grid_two_layers():
    g = graded_grid(0, 1, 256, [(0.0, 1e-2), (1.0, 1e-2)])
    assert np.sum(g.nodes <= 1e-2) >= 16 and np.sum(g.nodes >= 1 - 1e-2) >= 16


def test_graded_grid_keeps_kinks_off_nodes():
    g = graded_grid(0, 1, 512, [(0.5, 1e-3), (0.0, 1e-5), (1.0, 1e-5)], avoid=(0.5,))
    i = np.searchsorted(g.nodes, 0.5)
    frac = (0.5 - g.nodes[i - 1]) / (g.nodes[i] - g.nodes[i - 1])
    assert 0.1 < frac < 0.9


def test_graded_grid_infeasible():
    with pytest.raises(ValueError, match="infeasible"):
        graded_grid(0, 1, 20, [(0.0, 1e-9), (0.3, 1e-9), (0.6, 1e-9), (1.0, 1e-9)])


@settings(max_examples=30)
@given(st.floats(0.0, 1.0), st.floats(1e-4, 0.05), st.sampled_from([256, 512, 1024]))
def test_graded_grid_properties(p, width, n):
    g = graded_grid(0, 1, n, [(p, width)])
    assert g.n == n and g.a == 0 and g.b == 1
    assert np.all(np.diff(g.nodes) > 0)
    assert g.grading() <= 1.2 + 1e-9
    inside = np.sum(np.abs(g.nodes - p) <= width)
    assert inside >= 16


def test_grid2d_weights_and_mesh():
    g = Grid2D.uniform(0, 1, 4, 0, 2, 8)
    assert g.shape == (5, 9)
    assert g.weights.sum() == pytest.approx(2.0)
    X, Y = g.mesh()
    assert X[4, 0] == 1.0 and Y[0, 8] == 2.0


def test_field_checks_shape():
    g = Grid1D.uniform(0, 1, 4)
    with pytest.raises(ValueError):
        Field(g, np.ones(4))
    f = sample_field("x^2", g)
    np.testing.assert_allclose(f.values, g.nodes ** 2)


def test_boundary_conditions():
    assert BoundaryCondition.neumann().coefficient(0.5, 1.0) == 0.0
    r = BoundaryCondition.robin(c=2.0)
    assert r.coefficient(0.5, 1.0) == 2.0
    rb = BoundaryCondition.robin(k=3.0, beta="1 + x")
    assert rb.coefficient(0.5, 1.0) == pytest.approx(6.0)
    rd = BoundaryCondition.robin(k=1.0, beta="2", per_diffusion=True)
    assert rd.coefficient(0.5, 1.0) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        BoundaryCondition("dirichlet", c=1.0)
    with pytest.raises(ValueError):
        BoundaryCondition("periodic")
    with pytest.raises(ValueError):
        BoundaryCondition.robin()


def test_potential_from_expr_derivatives():
    m = Potential.from_expr("x^3 + x*y", 2)
    g = m.gradient(1.0, 2.0)
    assert g[0] == pytest.approx(5.0) and g[1] == pytest.approx(1.0)
    H = m.hessian(1.0, 2.0)
    assert H[0][0] == pytest.approx(6.0) and H[0][1] == pytest.approx(1.0)
    assert m.laplacian(1.0, 2.0) == pytest.approx(6.0)


def test_potential_from_gradient_tabulates():
    m = Potential.from_gradient(ex.parse("cos(x)"), 0.0, 1.0)
    assert m.value(0.5) == pytest.approx(np.sin(0.5), abs=1e-8)
    assert m.gradient(0.5)[0] == pytest.approx(np.cos(0.5))


def test_problem_spec_and_validation():
    spec = make_problem("(x-0.5)^2", "1", "neumann", D=0.1)
    assert validate(spec) == []
    assert spec.with_D(2.0).D == 2.0
    assert replace_spec(spec, alpha=3.0).alpha == 3.0
    bad = make_problem("x", D=-1.0)
    assert "nonpositive diffusion" in validate(bad)
    assert any("not twice differentiable" in d for d in validate(make_problem("abs(x-0.5)")))
    assert validate(make_problem("abs(x-0.5)", kinks=(0.5,))) == []
    missing = ProblemSpec(1, 1.0, 1.0, "x", "0", {"left": BoundaryCondition.neumann()})
    assert any("missing" in d for d in validate(missing))
