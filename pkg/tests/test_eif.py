import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochmed.eif import (
    EifComponentsBatch,
    assemble_eif,
    eif_a_ips,
    eif_a_mtp,
    eif_a_tilt,
    eif_y,
    eif_zw,
)
from stochmed.exceptions import QuadratureError, WeightOverflow
from stochmed.interventions import ExposureSupport
from stochmed.model import InterventionSpec
from stochmed.sim import dgp5_law, mtp_toy_law

BIN = ExposureSupport.binary()
ONE_ROW = np.zeros((1, 1))


class TestEifY:
    def test_examples(self):
        assert eif_y(0.7, 0.7, 5.0, 0.1) == 0.0
        assert eif_y(1.0, 0.4, 0.6, 0.3) == pytest.approx(1.2, abs=1e-12)
        assert eif_y(1.0, 0.4, 0.0, 0.3) == 0.0

    def test_cap_flags(self):
        flags = []
        with pytest.warns(WeightOverflow):
            out = eif_y(np.array([1.0]), np.array([0.0]), np.array([50.0]), np.array([1e-3]), cap=100.0, flags=flags)
        assert out[0] == 100.0 and flags


class TestEifZW:
    def test_constant_m(self):
        m = lambda a, Z, W: np.full(W.shape[0], 3.0)
        gd = lambda a, W: np.where(a == 1.0, 0.2, 0.8)
        assert eif_zw(m, gd, ONE_ROW, ONE_ROW, BIN)[0] == pytest.approx(3.0)

    def test_binary_example(self):
        m = lambda a, Z, W: 2.0 * a
        gd = lambda a, W: np.where(a == 1.0, 0.25, 0.75)
        assert eif_zw(m, gd, ONE_ROW, ONE_ROW, BIN)[0] == pytest.approx(0.5, abs=1e-12)

    def test_continuous_uniform(self):
        sup = ExposureSupport.grid(0.0, 1.0)
        m = lambda a, Z, W: a
        gd = lambda a, W: np.where((a >= 0) & (a <= 1), 1.0, 0.0)
        assert eif_zw(m, gd, ONE_ROW, ONE_ROW, sup)[0] == pytest.approx(0.5, abs=1e-4)

    def test_quadrature_failure(self):
        sup = ExposureSupport.grid(0.0, 1.0)
        with pytest.raises(QuadratureError):
            eif_zw(lambda a, Z, W: a, lambda a, W: np.full(W.shape[0], 2.0), ONE_ROW, ONE_ROW, sup)


class TestExposureScores:
    def test_mtp_examples(self):
        g = lambda a, W: np.full(W.shape[0], 0.5)
        assert eif_a_mtp(lambda a, W: np.full(W.shape[0], 4.0), g, 1.0, ONE_ROW, BIN)[0] == 0.0
        phi = lambda a, W: 2.0 * a
        assert eif_a_mtp(phi, g, 1.0, ONE_ROW, BIN)[0] == pytest.approx(1.0)
        assert eif_a_mtp(phi, g, 0.0, ONE_ROW, BIN)[0] == pytest.approx(-1.0)

    def test_mtp_sampling_mean(self):
        rng = np.random.default_rng(0)
        n = 20_000
        a = (rng.random(n) < 0.3).astype(float)
        W = np.zeros((n, 1))
        phi = lambda a_, W_: 1.0 + 2.0 * a_
        g = lambda a_, W_: np.where(a_ == 1.0, 0.3, 0.7)
        d = eif_a_mtp(phi, g, a, W, BIN)
        assert abs(d.mean()) < 3 * d.std() / math.sqrt(n)

    def test_tilt_constant_phi(self):
        g = lambda a, W: np.where(a == 1.0, 0.4, 0.6)
        gd = lambda a, W: np.where(a == 1.0, 0.7, 0.3)
        assert eif_a_tilt(lambda a, W: np.full(W.shape[0], 2.0), g, gd, 1.0, ONE_ROW, BIN)[0] == 0.0

    def test_tilt_identity_is_mtp_centering(self):
        g = lambda a, W: np.where(a == 1.0, 0.4, 0.6)
        phi = lambda a, W: 3.0 * a - 1.0
        for a in (0.0, 1.0):
            assert eif_a_tilt(phi, g, g, a, ONE_ROW, BIN)[0] == pytest.approx(eif_a_mtp(phi, g, a, ONE_ROW, BIN)[0])

    def test_ips_examples(self):
        assert eif_a_ips(1.0, 0.5, 2.0, 1.0) == pytest.approx(0.4444444444, abs=1e-9)
        assert eif_a_ips(1.7, 0.3, 1.0, 1.0) == pytest.approx(1.7 * 0.7)
        for g1 in (0.2, 0.6):
            mean = g1 * eif_a_ips(1.3, g1, 0.7, 1.0) + (1 - g1) * eif_a_ips(1.3, g1, 0.7, 0.0)
            assert abs(mean) < 1e-15

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(-3, 3), st.sampled_from([0.0, 1.0]), st.floats(-5, 5), st.floats(-5, 5))
    def test_tilt_equals_ips(self, g1, delta, a, phi0, phi1):
        g = lambda a_, W: np.where(a_ == 1.0, g1, 1 - g1)
        gd1 = math.exp(delta) * g1 / (math.exp(delta) * g1 + 1 - g1)
        gd = lambda a_, W: np.where(a_ == 1.0, gd1, 1 - gd1)
        phi = lambda a_, W: np.where(a_ == 1.0, phi1, phi0)
        tilt = eif_a_tilt(phi, g, gd, a, ONE_ROW, BIN)[0]
        ips = eif_a_ips(phi1 - phi0, g1, math.exp(delta), a)
        assert tilt == pytest.approx(ips, abs=1e-10)


class TestBatch:
    def test_fields(self):
        b = EifComponentsBatch(np.array([1.0, 2.0]), np.array([0.5, -0.5]), np.array([1.0, 1.0]), np.array([2.0, 1.0]))
        assert np.allclose(b.total, [2.5, 2.5]) and b.theta_contribution == 2.5 and b.sigma2 == 0.0
        assert np.allclose(b.s_records, [0.5, 1.5])
        assert [r.total for r in b.records()] == [2.5, 2.5]


# -- enumeration over a finite law: exact expectations of the EIF --------------


def expectation(law, iv, **tables):
    data, p = law.atoms()
    return assemble_eif(data, law.fits(iv, **tables), iv, support=law.support).weighted_mean(p)


IVS_5 = [InterventionSpec.ips(0.5), InterventionSpec.ips(2.0), InterventionSpec.tilt(0.8), InterventionSpec.tilt(-1.2)]
IVS_MTP = [InterventionSpec.shift(1.0, lower=0.0, upper=3.0), InterventionSpec.shift(2.0, lower=0.0, upper=3.0),
           InterventionSpec.tilt(0.4), InterventionSpec.tilt(-0.7)]


def wrong_tables(law, seed=0):
    rng = np.random.default_rng(seed)
    g = law.g_table * rng.uniform(0.5, 1.5, law.g_table.shape)
    g /= g.sum(axis=1, keepdims=True)
    e = law.e_table * rng.uniform(0.5, 1.5, law.e_table.shape)
    e /= e.sum(axis=1, keepdims=True)
    m = law.m_table + rng.normal(0.0, 0.5, law.m_table.shape)
    return g, e, m


@pytest.mark.parametrize("iv", IVS_5, ids=str)
def test_mean_zero_at_truth(law5, iv):
    assert abs(expectation(law5, iv) - law5.theta(iv)) < 1e-10


@pytest.mark.parametrize("iv", IVS_MTP, ids=str)
def test_mean_zero_at_truth_mtp_toy(mtp_law, iv):
    assert abs(expectation(mtp_law, iv) - mtp_law.theta(iv)) < 1e-10


@pytest.mark.parametrize("iv", IVS_MTP[:2], ids=str)
def test_shift_multiple_robustness(mtp_law, iv):
    g, e, m = wrong_tables(mtp_law)
    theta = mtp_law.theta(iv)
    assert abs(expectation(mtp_law, iv, m_table=m) - theta) < 1e-10  # g, e right
    assert abs(expectation(mtp_law, iv, e_table=e) - theta) < 1e-10  # g, m right
    # m and phi right; phi from the marginal form never touches g or e
    assert abs(expectation(mtp_law, iv, g_table=g, e_table=e) - theta) < 1e-10


@pytest.mark.parametrize("law_iv", [("5", iv) for iv in IVS_5[2:]] + [("mtp", iv) for iv in IVS_MTP[2:]], ids=str)
def test_tilt_robustness_and_negative_control(law5, mtp_law, law_iv):
    law = law5 if law_iv[0] == "5" else mtp_law
    iv = law_iv[1]
    g, e, m = wrong_tables(law, 1)
    theta = law.theta(iv)
    assert abs(expectation(law, iv, m_table=m) - theta) < 1e-10
    assert abs(expectation(law, iv, e_table=e) - theta) < 1e-10
    uniform = np.full_like(law.g_table, 1.0 / law.g_table.shape[1])
    assert abs(expectation(law, iv, g_table=uniform) - theta) > 1e-3


def test_ips_g_wrong_is_biased(law5):
    iv = InterventionSpec.ips(0.5)
    assert abs(expectation(law5, iv, g_table=np.full_like(law5.g_table, 0.5)) - law5.theta(iv)) > 1e-3


def remainders(law, iv, eps, seed):
    data, p = law.atoms()
    return np.array([
        assemble_eif(data, law.perturbed_fits(iv, e, seed=seed), iv, support=law.support).weighted_mean(p)
        - law.theta(iv)
        for e in eps
    ])


@pytest.mark.parametrize("law_name,iv", [("5", IVS_5[0]), ("5", IVS_5[2]), ("mtp", IVS_MTP[0]), ("mtp", IVS_MTP[2])], ids=str)
def test_second_order_remainder(law5, mtp_law, law_name, iv):
    law = law5 if law_name == "5" else mtp_law
    eps = np.array([0.2, 0.1, 0.05])
    # seed 1 gives perturbation directions whose eps^2 coefficient is well away from zero
    err = np.abs(remainders(law, iv, eps, seed=1))
    slope = np.polyfit(np.log(eps), np.log(err), 1)[0]
    assert 1.7 <= slope <= 2.3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_remainder_over_eps_squared_bounded(seed):
    law = dgp5_law()
    iv = InterventionSpec.ips(0.5)
    eps = np.array([0.2, 0.1, 0.05, 0.025])
    scaled = np.abs(remainders(law, iv, eps, seed)) / eps**2
    assert scaled[-1] <= 2.0 * scaled[:2].max() + 1e-3


@pytest.mark.parametrize("iv", IVS_5[:3], ids=str)
def test_empty_mediator_gives_psi(law5, iv):
    reduced = law5.marginalize_mediators()
    data, p = reduced.atoms()
    assert data.Z.shape[1] == 0
    assert abs(assemble_eif(data, reduced.fits(iv), iv, support=BIN).weighted_mean(p) - law5.psi(iv)) < 1e-10


def test_randomized_mode_zeroes_exposure_score(law5):
    data, _ = law5.atoms()
    iv = InterventionSpec.ips(0.5)
    b = assemble_eif(data, law5.fits(iv), iv, support=BIN, randomized=True)
    assert np.all(b.dA == 0.0)


def test_records_sum(law5):
    data, _ = law5.atoms()
    iv = InterventionSpec.tilt(0.3)
    b = assemble_eif(data, law5.fits(iv), iv, support=BIN)
    assert max(abs(r.total - (r.dY + r.dA + r.dZW)) for r in b.records()) < 1e-12
