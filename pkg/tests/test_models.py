import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mfgdc as M
from mfgdc.models import AdmissibilityResult, admissible_q_threshold


# -- pressure ------------------------------------------------------------------

def test_pressure_power_closed_form():
    rng = np.random.default_rng(0)
    for q in (1.5, 2.0, 5.0):
        U = M.InternalEnergy.power(q)
        for z in rng.uniform(0.01, 10.0, size=100):
            assert M.pressure(U, z) == pytest.approx((q - 1) * z**q, rel=1e-12)


def test_pressure_linear_energy_is_zero():
    U = M.InternalEnergy.power(1.0)
    assert M.pressure(U, 5.0) == 0.0


def test_pressure_entropy():
    U = M.InternalEnergy.entropy()
    assert M.pressure(U, 3.0) == pytest.approx(3.0, rel=1e-12)


def test_pressure_rejects_nonpositive():
    with pytest.raises(ValueError):
        M.pressure(M.InternalEnergy.power(2), 0.0)
    with pytest.raises(ValueError):
        M.pressure(M.InternalEnergy.power(2), -1.0)


# -- displacement admissibility --------------------------------------------------

@pytest.mark.parametrize("q", [1.0, 2.0, 5.0])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_power_energies_admissible(q, d):
    res = M.displacement_admissible(M.InternalEnergy.power(q), d)
    assert res.admissible


def test_negative_sqrt_inadmissible_d3():
    U = M.InternalEnergy.custom(lambda z: -np.sqrt(z), lambda z: -0.5 / np.sqrt(z),
                                label="-sqrt(z)")
    res = M.displacement_admissible(U, 3)
    assert not res.admissible and res.margin < 0
    assert res.certificate == "sampled"
    # admissible in low dimension
    assert M.displacement_admissible(U, 1).admissible
    assert M.displacement_admissible(U, 2).admissible


@pytest.mark.parametrize("d", [1, 2, 3])
def test_boundary_energy_margin(d):
    expo = 1.0 - 1.0 / d
    U = M.InternalEnergy.custom(lambda z: -z**expo,
                                lambda z: -expo * z**(expo - 1.0),
                                label="boundary")
    res = M.displacement_admissible(U, d)
    assert res.admissible
    assert abs(res.margin) <= 1e-9


def test_admissible_rejects_bad_grid():
    with pytest.raises(ValueError):
        M.displacement_admissible(M.InternalEnergy.power(2), 2,
                                  z_grid=np.array([2.0, 1.0]))


def test_pressure_growth_check():
    assert M.pressure_growth_check(M.InternalEnergy.power(2), 2) <= 1e-8
    assert M.pressure_growth_check(M.InternalEnergy.power(1), 3) == 0.0
    U = M.InternalEnergy.custom(lambda z: -np.sqrt(z), lambda z: -0.5 / np.sqrt(z))
    assert M.pressure_growth_check(U, 3) > 0  # inadmissible witness


# -- congestion conditions --------------------------------------------------------

def test_congestion_condition_examples():
    res = M.congestion_convexity_condition(2.0, 0.3, 2.0, 2)
    assert res.holds and res.branch == "beta>=2"
    assert res.margin == pytest.approx(1 - 0.5 / 1.4 - 0.15, rel=1e-12)

    res = M.congestion_convexity_condition(1.2, 1.0, 3.0, 2)
    assert not res.holds
    assert res.margin == pytest.approx(-2.8, rel=1e-12)

    res = M.congestion_convexity_condition(3.0, 1.0, 1.5, 1)
    assert res.holds and res.branch == "1<beta<2"
    assert res.margin == pytest.approx(0.5, rel=1e-12)


def test_congestion_condition_degenerate_denominator():
    # q + 2 alpha (1-beta) = 0 accepted only when d = 1
    q, alpha, beta = 2.0, 1.0, 2.0
    assert q + 2 * alpha * (1 - beta) == 0.0
    assert M.congestion_convexity_condition(q, alpha, beta, 1).holds
    assert not M.congestion_convexity_condition(q, alpha, beta, 2).holds


def test_congestion_condition_rejects_bad_beta():
    with pytest.raises(ValueError):
        M.congestion_convexity_condition(2.0, 0.5, 1.0, 2)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_congestion_reduces_to_classical_at_alpha0_beta2(d):
    # alpha = 0, beta = 2: condition becomes q >= 1 - 1/d (up to the sign guard)
    for q in np.linspace(1.0, 10.0, 40):
        res = M.congestion_convexity_condition(float(q), 0.0, 2.0, d)
        assert res.holds == (1.0 - (1.0 - 1.0 / d) / q >= 0.0)
        assert res.holds  # q >= 1 always dominates 1 - 1/d


def test_alpha_sup_values():
    assert M.congestion_alpha_sup(3.0) == pytest.approx(1.0)
    assert M.congestion_alpha_sup(1.5) == pytest.approx(2.0)
    assert M.congestion_alpha_sup(2.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        M.congestion_alpha_sup(1.0)
    assert M.ALPHA_SUP_ATTAINED_AT_D1 is True


@pytest.mark.parametrize("beta", [2.0, 3.0])
def test_alpha_sup_threshold_property(beta):
    sup = M.congestion_alpha_sup(beta)
    below = admissible_q_threshold(sup - 0.1, beta, d=2)
    assert below is not None and below <= 1e3
    above = admissible_q_threshold(sup + 0.1, beta, d=2)
    assert above is None


# -- Hamiltonian / Legendre -------------------------------------------------------

def test_legendre_quadratic_self_duality():
    ham = M.HamiltonianSpec(2.0)
    v = 3.0
    assert ham.L_of_norm(v) == pytest.approx(4.5)
    p = v  # optimal dual point
    assert ham.L_of_norm(v) + ham.H_of_norm(p) - p * v == pytest.approx(0.0, abs=1e-14)


def test_legendre_beta3_closed_form():
    ham = M.HamiltonianSpec(3.0)
    assert ham.beta_conj == pytest.approx(1.5)
    v = 2.0
    assert ham.L_of_norm(v) == pytest.approx(2.0**1.5 / 1.5, rel=1e-14)
    assert M.legendre_pair_check(ham, 300, dim=1, seed=1) <= 1e-12


@pytest.mark.parametrize("beta", [1.5, 2.0, 3.0, 4.5])
@pytest.mark.parametrize("dim", [1, 2])
def test_legendre_pair_check_random(beta, dim):
    assert M.legendre_pair_check(M.HamiltonianSpec(beta), 256, dim=dim, seed=0) <= 1e-10


def test_hamiltonian_rejects_beta_le_1():
    with pytest.raises(ValueError):
        M.HamiltonianSpec(1.0)


# -- couplings ---------------------------------------------------------------------

def _sample_couplings():
    z = np.linspace(0.1, 3.0, 40)
    return [
        M.CouplingSpec.zero(),
        M.CouplingSpec.power(1.0, 1.0),
        M.CouplingSpec.power(0.5, 2.0),
        M.CouplingSpec.table(z, np.log(1 + z)),
    ]


@settings(max_examples=100, deadline=None)
@given(idx=st.integers(0, 3), z1=st.floats(0.01, 50.0), z2=st.floats(0.01, 50.0))
def test_coupling_monotone_invariant(idx, z1, z2):
    g = _sample_couplings()[idx]
    lo, hi = min(z1, z2), max(z1, z2)
    gl, gh = g.g(np.array([lo, hi]))
    assert gh >= gl - 1e-12


def test_coupling_table_rejects_decreasing():
    z = np.array([0.5, 1.0, 2.0])
    with pytest.raises(ValueError):
        M.CouplingSpec.table(z, np.array([1.0, 0.5, 0.2]))
    # explicit opt-out admits it (manufactured-solution tables)
    g = M.CouplingSpec.table(z, np.array([1.0, 0.5, 0.2]), check_monotone=False)
    assert g.g(np.array([1.0]))[0] == pytest.approx(0.5)


def test_coupling_table_rejects_nonincreasing_z():
    with pytest.raises(ValueError):
        M.CouplingSpec.table(np.array([1.0, 1.0, 2.0]), np.array([0.0, 1.0, 2.0]))


def test_coupling_antiderivative_matches_quadrature():
    # reference: composite 4-node Gauss-Legendre between knots, exact for the
    # piecewise-cubic interpolant and its linear extensions
    from numpy.polynomial.legendre import leggauss
    z = np.linspace(0.2, 4.0, 60)
    g = M.CouplingSpec.table(z, z**2 / (1 + z))
    xg, wg = leggauss(4)

    def gauss_int(a, b):
        nodes = 0.5 * (b - a) * xg + 0.5 * (a + b)
        return 0.5 * (b - a) * float(np.sum(wg * g.g(nodes)))

    for zv in (0.5, 1.7, 3.9, 5.0):  # includes both extension regions
        pieces = [0.0] + [zk for zk in z if zk < zv] + [zv]
        ref = sum(gauss_int(a, b) for a, b in zip(pieces[:-1], pieces[1:]))
        assert float(g.G(np.array([zv]))[0]) == pytest.approx(ref, abs=1e-12)


def test_coupling_g_prime_matches_fd():
    z = np.linspace(0.1, 3.0, 50)
    for g in _sample_couplings()[1:]:
        zz = np.linspace(0.3, 2.5, 17)
        fd = (g.g(zz + 1e-6) - g.g(zz - 1e-6)) / 2e-6
        assert np.max(np.abs(g.g_prime(zz) - fd)) <= 1e-5


def test_coupling_power_G_closed_form():
    g = M.CouplingSpec.power(2.0, 3.0)
    zz = np.array([0.0, 1.0, 2.0])
    assert np.allclose(g.G(zz), 2.0 * zz**4 / 4.0)
    assert g.G(np.array([0.0]))[0] == 0.0


def test_coupling_csv_round_trip(tmp_path):
    z = np.linspace(0.5, 2.0, 20)
    gz = z**1.5
    path = tmp_path / "table.csv"
    with open(path, "w") as fh:
        fh.write("z,g\n")
        for a, b in zip(z, gz):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    g = M.CouplingSpec.from_csv(str(path))
    assert np.max(np.abs(g.g(z) - gz)) <= 1e-12


def test_internal_energy_validation():
    with pytest.raises(ValueError):
        M.InternalEnergy.power(0.5)
    with pytest.raises(ValueError):
        M.InternalEnergy.shifted_inverse(1.0, 0.0)
    U = M.InternalEnergy.shifted_inverse(2.0, 0.5)
    z = np.array([0.0, 1.0])
    assert np.allclose(U.U(z), (z + 0.5) ** -2.0)
    res = M.displacement_admissible(U, 1)
    assert isinstance(res, AdmissibilityResult)
