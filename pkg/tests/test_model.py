import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from degenbeam.expressions import Poly, Zero
from degenbeam.model import (
    AssumptionError,
    AxialForceProfile,
    Degeneracy,
    DelaySpec,
    GainSet,
    ModelConfig,
    RigidityProfile,
    certificate_constants,
    classify_degeneracy,
    damping_margin,
    decay_bound,
    gamma_window,
    reference_config,
    resolve_gamma,
    upsilon,
    validate_assumptions,
)


def _config(**kw):
    base = dict(
        rigidity=RigidityProfile.power(1.0),
        axial=AxialForceProfile.constant(1.0),
        gains=GainSet(kr=1.0, ka=1.0, kv=2.0, kd=1.0, kb=1.0),
        delay=DelaySpec(tau=1.0, gamma=2.0),
        u0=Poly((0.0, 0.0, 1.0)),
        u1=Zero(),
    )
    base.update(kw)
    return ModelConfig(**base)


class TestDegeneracy:
    @pytest.mark.parametrize("alpha,cls", [(0.5, Degeneracy.WD), (1.0, Degeneracy.SD), (1.5, Degeneracy.SD)])
    def test_power_law_class(self, alpha, cls):
        rep = classify_degeneracy(RigidityProfile.power(alpha))
        assert rep.cls is cls
        assert rep.K_sigma == pytest.approx(alpha, rel=1e-12)
        assert rep.certifiable

    def test_square_is_invalid(self):
        assert classify_degeneracy(RigidityProfile.power(2.0)).cls is Degeneracy.INVALID

    def test_constant_is_nondegenerate(self):
        rep = classify_degeneracy(RigidityProfile.constant(1.0))
        assert rep.cls is Degeneracy.NONDEGENERATE
        assert not rep.certifiable

    def test_tabulated_linear_matches_power(self):
        xs = np.linspace(0, 1, 11)
        rep = classify_degeneracy(RigidityProfile.tabulated(xs, xs))
        assert rep.cls is Degeneracy.SD
        assert rep.K_sigma == pytest.approx(1.0, rel=1e-6)

    @given(st.floats(0.05, 1.95))
    def test_power_law_index_is_alpha(self, alpha):
        assert classify_degeneracy(RigidityProfile.power(alpha)).K_sigma == pytest.approx(alpha, rel=1e-9)


class TestAssumptions:
    def test_reference_passes(self):
        assert validate_assumptions(reference_config()).passed

    def test_delay_dominance(self):
        assert validate_assumptions(_config())["delay_dominance"].passed
        rep = validate_assumptions(_config(gains=GainSet(1, 1, 1, 1, 1), delay=DelaySpec(1.0, None)))
        assert not rep["delay_dominance"].passed

    def test_affine_axial_bounds(self):
        q = AxialForceProfile.affine(1.0, 1.0)
        assert q.bounds() == pytest.approx((1.0, 2.0, 1.0))
        assert validate_assumptions(_config(axial=q))["axial_bounds"].passed

    def test_gamma_auto_and_window(self):
        g = GainSet(1, 1, 2, 1, 1)
        assert resolve_gamma(g, "auto") == 2.0
        assert gamma_window(g) == (1.0, 3.0)
        assert resolve_gamma(g, 2.9) == 2.9
        with pytest.raises(AssumptionError):
            resolve_gamma(g, 3.0)
        with pytest.raises(AssumptionError):
            resolve_gamma(GainSet(1, 1, 1, 1, 1), "auto")

    def test_damping_margin_values(self):
        assert damping_margin(GainSet(1, 1.0, 2, 1, 1), 2.0) == 0.5
        assert damping_margin(GainSet(1, 0.1, 2, 1, 1), 2.0) == pytest.approx(0.1)
        assert damping_margin(GainSet(1, 1.0, 2, 1, 1), 1.0 + 1e-9) == pytest.approx(0.0, abs=1e-9)

    @given(st.floats(0.1, 5.0), st.floats(0.0, 0.99))
    def test_auto_gamma_maximises_margin(self, kv, frac):
        g = GainSet(1.0, 1e6, kv, frac * kv, 1.0)
        best = damping_margin(g, resolve_gamma(g))
        lo, hi = gamma_window(g)
        for gm in np.linspace(lo, hi, 41)[1:-1]:
            assert damping_margin(g, gm) <= best + 1e-12

    @given(st.floats(0.1, 5.0), st.floats(0.0, 0.99), st.floats(0.01, 0.99))
    def test_margin_positive_inside_window(self, kv, frac, pos):
        g = GainSet(1.0, 0.5, kv, frac * kv, 1.0)
        lo, hi = gamma_window(g)
        assert damping_margin(g, lo + pos * (hi - lo)) > 0

    def test_upsilon(self):
        wd = classify_degeneracy(RigidityProfile.power(0.5))
        assert upsilon(wd, AxialForceProfile.constant(1.0)) == 0.5
        assert upsilon(wd, AxialForceProfile.affine(1.0, 1.0)) == 1.0
        sd = classify_degeneracy(RigidityProfile.power(1.9))
        with pytest.raises(AssumptionError):
            upsilon(sd, AxialForceProfile.affine(1.0, 2.5))

    def test_incompatible_initial_data_reported(self):
        rep = validate_assumptions(_config(u0=Poly((1.0,))))
        assert not rep["initial_data"].passed

    def test_nondegenerate_not_certifiable(self):
        rep = validate_assumptions(_config(rigidity=RigidityProfile.constant(1.0)))
        assert not rep["degeneracy"].passed


class TestConstants:
    def test_reference_chain_by_hand(self):
        c = certificate_constants(reference_config())
        assert c.c_gamma == pytest.approx(0.5, rel=1e-12)
        assert c.c_upsilon == pytest.approx(2.5, rel=1e-12)
        assert c.C1 == pytest.approx(math.sqrt(2.0), rel=1e-12)
        assert c.delta == pytest.approx(0.125, rel=1e-12)
        assert c.C3 == pytest.approx(8.0, rel=1e-12)
        assert c.epsilon_bounds == pytest.approx((0.4, 0.5 / 3.0, 0.5 / 15.0, 0.5 / 4.5), rel=1e-12)
        assert c.epsilon == pytest.approx(1.0 / 60.0, rel=1e-12)
        assert c.theta1 == pytest.approx(1.0 - 2.5 / 60.0, rel=1e-12)
        assert c.theta2 == pytest.approx(1.0 + 2.5 / 60.0, rel=1e-12)
        assert c.C0 == pytest.approx(6.25, rel=1e-12)

    def test_reference_M_spreadsheet(self):
        # rate = min(2 - 1, 4 e^-2); delta~ = rate / (4 C0); C2 = 64 + 2 / (delta~ c_gamma)
        rate = 4.0 * math.exp(-2.0)
        eps = 1.0 / 60.0
        C2 = 64.0 + 100.0 / rate
        M = 2.0 / (eps * rate) * (1.0 + 2.5 * eps + 4.0 * eps * 6.25 * 8.0 + 2.0 * eps * 6.25 * C2)
        c = certificate_constants(reference_config())
        assert c.C2 == pytest.approx(C2, rel=1e-12)
        assert c.M == pytest.approx(M, rel=1e-12)
        assert c.M == pytest.approx(12456.396995235697, rel=1e-12)

    def test_kd_zero_drops_bound(self):
        c = certificate_constants(_config(gains=GainSet(1, 1, 2, 0, 1), delay=DelaySpec(1.0, None)))
        assert len(c.epsilon_bounds) == 3

    def test_explicit_epsilon_outside_range(self):
        with pytest.raises(AssumptionError):
            certificate_constants(reference_config(), epsilon=0.05)

    def test_failing_config_raises(self):
        with pytest.raises(AssumptionError):
            certificate_constants(_config(gains=GainSet(1, 0, 0, 0, 1), delay=DelaySpec(1.0, None)))

    def test_decay_bound_values(self):
        c = certificate_constants(reference_config())
        assert decay_bound(c, 3.0, c.M) == pytest.approx(3.0, rel=1e-14)
        assert decay_bound(c, 3.0, 2 * c.M) == pytest.approx(3.0 / math.e, rel=1e-14)
        assert decay_bound(c, 3.0, 0.0) == 3.0

    @given(st.floats(0.2, 1.8), st.floats(0.1, 5.0), st.floats(0.0, 0.9))
    def test_chain_positive_and_theta_ordered(self, alpha, tau, frac):
        cfg = _config(rigidity=RigidityProfile.power(alpha), gains=GainSet(1, 1, 2, 2 * frac, 1),
                      delay=DelaySpec(tau, None))
        c = certificate_constants(cfg)
        assert 0 < c.theta1 < 1 < c.theta2
        assert c.M > 0 and math.isfinite(c.M)
