import numpy as np
import pytest

import mfgdc as M
from mfgdc.core import div_arrays, grad_arrays


def test_make_grid_basics():
    g = M.make_grid(1, 64)
    assert g.h == 0.015625
    assert g.size == 64
    g2 = M.make_grid(2, 32)
    assert g2.size == 1024


@pytest.mark.parametrize("dim,n", [(1, 10), (1, 4), (2, 12), (3, 16), (0, 16)])
def test_make_grid_rejects(dim, n):
    with pytest.raises(ValueError):
        M.make_grid(dim, n)


def test_gradient_1d_closed_form():
    g = M.make_grid(1, 64)
    f = M.field_from_function(g, lambda x: np.sin(2 * np.pi * x))
    (x,) = g.coordinates()
    got = M.gradient(f).components[0].values
    assert np.max(np.abs(got - 2 * np.pi * np.cos(2 * np.pi * x))) <= 1e-10


def test_gradient_constant_is_zero():
    g = M.make_grid(1, 32)
    f = M.constant_field(g, 3.7)
    assert np.max(np.abs(M.gradient(f).components[0].values)) == 0.0


def test_gradient_2d_closed_form():
    g = M.make_grid(2, 32)
    f = M.field_from_function(g, lambda x, y: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    x, y = g.coordinates()
    expected = 2 * np.pi * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
    got = M.gradient(f).components[0].values
    assert np.max(np.abs(got - expected)) <= 1e-10


def test_integrate_examples():
    g = M.make_grid(1, 64)
    assert M.integrate(M.constant_field(g, 1.0)) == 1.0
    f = M.field_from_function(g, lambda x: 1 + 0.5 * np.cos(2 * np.pi * x))
    assert abs(M.integrate(f) - 1.0) <= 1e-14
    f2 = M.field_from_function(g, lambda x: np.sin(2 * np.pi * x) ** 2)
    assert abs(M.integrate(f2) - 0.5) <= 1e-14


@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16)])
def test_div_grad_is_laplacian(dim, n):
    g = M.make_grid(dim, n)
    f = M.random_smooth_density(g, seed=5)
    lap = M.laplacian(f).values
    dg = M.divergence(M.gradient(f)).values
    scale = max(1.0, np.max(np.abs(lap)))
    assert np.max(np.abs(lap - dg)) <= 1e-10 * scale


@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16)])
def test_divergence_has_zero_mean(dim, n):
    g = M.make_grid(dim, n)
    rng = np.random.default_rng(0)
    comps = tuple(M.ScalarField(g, rng.normal(size=g.shape)) for _ in range(dim))
    v = M.VectorField(g, comps)
    assert abs(M.integrate(M.divergence(v))) <= 1e-12


def test_field_validation():
    g = M.make_grid(1, 16)
    with pytest.raises(ValueError):
        M.ScalarField(g, np.ones(17))
    with pytest.raises(ValueError):
        M.ScalarField(g, np.full(16, np.nan))
    f = M.constant_field(g, 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0  # frozen


def test_trajectory_invariants():
    g = M.make_grid(1, 16)
    m = np.ones((4, 16))
    traj = M.trajectory_from_arrays(g, 1.0, m)
    assert traj.K == 3 and traj.dt == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        M.trajectory_from_arrays(g, 1.0, np.ones((2, 16)))  # K < 2
    bad = m.copy()
    bad[1] *= 1.5  # mass jump
    with pytest.raises(ValueError):
        M.trajectory_from_arrays(g, 1.0, bad)
    neg = m.copy()
    neg[1, 0] = -0.1
    with pytest.raises(ValueError):
        M.trajectory_from_arrays(g, 1.0, neg, check_mass=False)


def test_trajectory_momentum_shape():
    g = M.make_grid(1, 16)
    m = np.ones((5, 16))
    w = np.zeros((4, 1, 16))
    traj = M.trajectory_from_arrays(g, 1.0, m, w=w)
    assert len(traj.w) == traj.K
    assert traj.half_times[0] == pytest.approx(0.125)
    with pytest.raises(ValueError):
        M.trajectory_from_arrays(g, 1.0, m, w=np.zeros((5, 1, 16)))


def test_grad_div_adjointness():
    # <grad f, v> = -<f, div v> exactly in the discrete inner product
    g = M.make_grid(1, 32)
    rng = np.random.default_rng(1)
    f = rng.normal(size=g.shape)
    v = rng.normal(size=g.shape)
    lhs = np.sum(grad_arrays(f, g)[0] * v)
    rhs = -np.sum(f * div_arrays([v], g))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
