import json
import math

import numpy as np
import pytest

from levyforest import (
    BranchingMechanism,
    ConfigurationError,
    JumpMeasure,
    PowerLawTail,
    mechanism_from_config,
    mechanism_to_config,
)
from levyforest.mechanism import _tail_compensator, mechanism_from_json

FELLER = BranchingMechanism(0.0, 1.0)
LINEAR = BranchingMechanism(1.0, 0.0)
ATOM = BranchingMechanism(0.0, 0.0, JumpMeasure(atoms=((1.0, 1.0),)))
MIXED = BranchingMechanism(0.5, 1.0, JumpMeasure(atoms=((1.0, 0.5), (0.3, 2.0))))
STABLE = BranchingMechanism(
    0.0, 0.0, JumpMeasure(power_law=PowerLawTail(c=1.0, sigma=1.5, z_min=0.0)))


def riemann_compensated_integral(jumps: JumpMeasure, lam: float) -> float:
    """Brute-force quadrature oracle on the numerically stable kernel.

    Geometric grid resolves the z^(1-sigma)/2 behavior at 0; analytic stubs
    cover the (0, lo) sliver and, for unbounded tails, the region beyond
    400/lam where exp(-lam z) is negligible.
    """
    total = sum(w * (lam * z + math.expm1(-lam * z)) for z, w in jumps.atoms)
    pl = jumps.power_law
    if pl is not None:
        s = pl.sigma
        lo = max(pl.z_min, 1e-9 / lam)
        unbounded = pl.z_max is None
        hi = 400.0 / lam if unbounded else pl.z_max
        z = np.geomspace(lo, hi, 2_000_000)
        total += np.trapezoid((np.expm1(-lam * z) + lam * z) * pl.c * z ** (-1 - s), z)
        if pl.z_min < lo:
            total += pl.c * lam ** 2 * lo ** (2 - s) / (2 * (2 - s))
        if unbounded:
            total += pl.c * (lam * hi ** (1 - s) / (s - 1) - hi ** (-s) / s)
    return total


def test_psi_pure_quadratic():
    assert FELLER.psi(2.0) == 4.0


def test_psi_pure_linear():
    assert LINEAR.psi(3.0) == 3.0


def test_psi_single_atom_closed_form():
    assert ATOM.psi(1.0) == pytest.approx(math.exp(-1.0) - 1.0 + 1.0, rel=1e-14)


def test_psi_zero_is_exact_zero():
    for mech in (FELLER, LINEAR, ATOM, MIXED, STABLE):
        assert mech.psi(0.0) == 0.0


def test_psi_rejects_negative_argument():
    with pytest.raises(ValueError):
        FELLER.psi(-0.1)


def test_psi_monotone_and_convex_on_grid():
    lam = np.linspace(0.0, 10.0, 41)
    for mech in (MIXED, STABLE, ATOM):
        vals = np.array([mech.psi(x) for x in lam])
        assert (np.diff(vals) >= -1e-12).all()
        assert (np.diff(vals, 2) >= -1e-9).all()


def test_power_law_psi_matches_riemann_oracle():
    for mech in (STABLE,
                 BranchingMechanism(0.1, 0.0, JumpMeasure(
                     power_law=PowerLawTail(c=0.5, sigma=1.7, z_min=0.2, z_max=5.0)))):
        for lam in (0.4, 1.0, 2.3, 6.0):
            oracle = riemann_compensated_integral(mech.jumps, lam)
            got = mech.jumps.compensated_integral(lam)
            assert got == pytest.approx(oracle, rel=1e-6)


def test_tail_compensator_at_zero_closed_form():
    for sigma in (1.2, 1.5, 1.8):
        assert _tail_compensator(0.0, sigma) == pytest.approx(
            math.gamma(2 - sigma) / (sigma * (sigma - 1)), rel=1e-14)


def test_tail_compensator_branch_continuity():
    for sigma in (1.05, 1.5, 1.95):
        lo = _tail_compensator(0.5, sigma)
        hi = _tail_compensator(0.5 + 1e-12, sigma)
        assert lo == pytest.approx(hi, rel=1e-10)


# -- the flow v_t(lam) -------------------------------------------------------

def test_v_initial_condition():
    for mech in (FELLER, MIXED):
        assert mech.v(0.0, 7.0) == 7.0


def test_riccati_closed_form_satisfies_ode():
    # substitution check of the oracle itself: v = lam/(1+lam t) solves v' = -v^2
    lam = 1.7
    for t in (0.2, 0.9, 2.1):
        v = lam / (1 + lam * t)
        h = 1e-6
        v_dot = (lam / (1 + lam * (t + h)) - lam / (1 + lam * (t - h))) / (2 * h)
        assert v_dot == pytest.approx(-v * v, rel=1e-7)


def test_exponential_closed_form_satisfies_ode():
    lam, alpha = 1.3, 0.7
    for t in (0.2, 1.1):
        v = lam * math.exp(-alpha * t)
        h = 1e-6
        v_dot = (lam * math.exp(-alpha * (t + h)) - lam * math.exp(-alpha * (t - h))) / (2 * h)
        assert v_dot == pytest.approx(-alpha * v, rel=1e-7)


def test_v_riccati_example():
    assert FELLER.v(1.0, 1.0) == pytest.approx(0.5, abs=1e-9)


def test_v_exponential_example():
    assert LINEAR.v(math.log(2.0), 1.0) == pytest.approx(0.5, abs=1e-9)


def test_v_monotone_and_bounded():
    lam = 3.0
    prev = lam
    for t in np.linspace(0.05, 3.0, 20):
        cur = MIXED.v(float(t), lam)
        assert 0.0 <= cur <= lam
        assert cur <= prev + 1e-12
        prev = cur


def test_flow_property():
    for mech in (FELLER, MIXED, STABLE):
        for (t, s, lam) in ((0.3, 0.7, 1.0), (1.0, 1.0, 2.5), (0.1, 2.0, 0.4)):
            lhs = mech.v(t + s, lam)
            rhs = mech.v(t, mech.v(s, lam))
            assert abs(lhs - rhs) <= 1e-10


# -- Grey's condition --------------------------------------------------------

def test_grey_cases():
    assert FELLER.grey_holds() is True
    assert MIXED.grey_holds() is True           # beta > 0
    assert LINEAR.grey_holds() is False         # int du/(alpha u) diverges
    assert ATOM.grey_holds() is False           # asymptotically linear
    assert STABLE.grey_holds() is True          # psi ~ lam^sigma, sigma in (1,2)
    trunc = BranchingMechanism(0.0, 0.0, JumpMeasure(
        power_law=PowerLawTail(c=1.0, sigma=1.5, z_min=0.1)))
    assert trunc.grey_holds() is False          # cutoff kills superlinearity


def test_grey_numeric_probe_agrees_on_decidable_cases():
    assert FELLER._grey_numeric_probe() is True
    assert LINEAR._grey_numeric_probe() is False


# -- derived laws ------------------------------------------------------------

def test_cb_laplace_trivials():
    assert FELLER.cb_laplace(0.0, 1.3, 2.0) == 1.0
    assert FELLER.cb_laplace(1.0, 1.3, 0.0) == 1.0


def test_cb_laplace_feller_value():
    assert FELLER.cb_laplace(1.0, 1.0, 1.0) == pytest.approx(math.exp(-0.5), rel=1e-9)


def test_cb_mean_examples():
    m = BranchingMechanism(0.5, 1.0)
    assert m.cb_mean(1.0, 2.0) == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert m.cb_mean(3.3, 0.0) == 3.3
    assert m.cb_mean(0.0, 5.0) == 0.0


def test_branching_property_in_initial_mass():
    x, y, t, lam = 0.7, 1.9, 0.8, 1.4
    lhs = MIXED.cb_laplace(x + y, t, lam)
    rhs = MIXED.cb_laplace(x, t, lam) * MIXED.cb_laplace(y, t, lam)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# -- jump-measure moments ----------------------------------------------------

def test_moment_closed_forms_against_quadrature():
    jm = JumpMeasure(atoms=((0.5, 1.0), (2.0, 0.25)),
                     power_law=PowerLawTail(c=0.4, sigma=1.4, z_min=0.0, z_max=3.0))
    z = np.linspace(1e-9, 3.0, 4_000_000)
    dens = 0.4 * z ** (-2.4)
    delta = 0.7
    assert jm.mass_above(delta) == pytest.approx(
        0.25 + np.trapezoid(dens[z > delta], z[z > delta]), rel=1e-4)
    assert jm.mean_above(delta) == pytest.approx(
        2.0 * 0.25 + np.trapezoid((z * dens)[z > delta], z[z > delta]), rel=1e-4)
    assert jm.m2_below(delta) == pytest.approx(
        0.5 ** 2 + np.trapezoid((z * z * dens)[z <= delta], z[z <= delta]), rel=1e-3)
    assert jm.mass_in(0.4, 2.5) == pytest.approx(
        1.0 + 0.25 + np.trapezoid(dens[(z > 0.4) & (z <= 2.5)], z[(z > 0.4) & (z <= 2.5)]),
        rel=1e-4)
    assert math.isfinite(jm.z_z2_mass())


def test_jump_measure_validation():
    with pytest.raises(ConfigurationError):
        JumpMeasure(atoms=((0.0, 1.0),))
    with pytest.raises(ConfigurationError):
        JumpMeasure(atoms=((1.0, -1.0),))
    with pytest.raises(ConfigurationError):
        PowerLawTail(c=1.0, sigma=2.0)
    with pytest.raises(ConfigurationError):
        PowerLawTail(c=1.0, sigma=1.5, z_min=2.0, z_max=1.0)
    with pytest.raises(ConfigurationError):
        BranchingMechanism(-0.1, 1.0)


# -- JSON config -------------------------------------------------------------

def test_mechanism_config_roundtrip():
    obj = mechanism_to_config(MIXED)
    again = mechanism_from_config(obj)
    assert again == MIXED
    text = json.dumps(obj)
    assert mechanism_from_json(text) == MIXED


def test_mechanism_config_errors_name_fields():
    with pytest.raises(ConfigurationError, match="alpha"):
        mechanism_from_config({"beta": 1.0})
    with pytest.raises(ConfigurationError, match=r"atoms\[0\]"):
        mechanism_from_config({"alpha": 0.0, "beta": 1.0,
                               "jumps": {"atoms": [{"z": 1.0}]}})
    with pytest.raises(ConfigurationError, match="invalid JSON"):
        mechanism_from_json("{")
