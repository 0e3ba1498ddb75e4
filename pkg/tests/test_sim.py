import math

import numpy as np
import pandas as pd
import pytest

from stochmed.crossfit import NuisanceLearners
from stochmed.exceptions import DomainError, UnsupportedForContinuous
from stochmed.learners import LearnerKind
from stochmed.model import InterventionSpec
from stochmed.sim import (
    SIM_COLUMNS,
    MisspecToggle,
    dgp5_law,
    generate,
    generate_null,
    null_law,
    oracle_truth,
    oracle_truth_reduced,
    run_coverage,
    run_sup_test,
    run_table1,
    summarize,
)

DELTAS = [0.25, 0.5, 1.0, 2.0, 4.0]


class TestOracle:
    @pytest.mark.parametrize("d", DELTAS)
    def test_reduced_matches_enumeration(self, d):
        iv = InterventionSpec.ips(d)
        full, red = oracle_truth(iv), oracle_truth_reduced(iv)
        for k in ("theta", "psi", "y_mean"):
            assert getattr(full, k) == pytest.approx(getattr(red, k), abs=1e-12)

    @pytest.mark.parametrize("t", [-1.0, 0.3])
    def test_reduced_matches_enumeration_tilt(self, t):
        iv = InterventionSpec.tilt(t)
        assert oracle_truth(iv).direct == pytest.approx(oracle_truth_reduced(iv).direct, abs=1e-12)

    def test_anchor_by_hand(self):
        # strata of sum(W): masses and exposure probabilities 0.25 s + 0.1
        mass = np.array([0.11375, 0.38625, 0.38625, 0.11375])
        g1 = 0.25 * np.arange(4) + 0.1
        gd1 = 0.5 * g1 / (0.5 * g1 + 1 - g1)
        hand = float(mass @ (gd1 - g1))
        assert oracle_truth(InterventionSpec.ips(0.5)).direct == pytest.approx(hand, abs=1e-12)
        assert hand == pytest.approx(-0.13747, abs=1e-5)

    def test_identity_is_zero(self):
        t = oracle_truth(InterventionSpec.ips(1.0))
        assert max(abs(t.direct), abs(t.indirect), abs(t.total)) <= 1e-14

    def test_decomposition(self):
        t = oracle_truth(InterventionSpec.ips(2.0))
        assert t.direct + t.indirect == pytest.approx(t.total, abs=1e-15)
        assert t.direct > 0

    def test_tilt_matches_ips(self):
        a = oracle_truth(InterventionSpec.ips(math.exp(0.4)))
        b = oracle_truth(InterventionSpec.tilt(0.4))
        assert a.theta == pytest.approx(b.theta, abs=1e-12) and a.psi == pytest.approx(b.psi, abs=1e-12)

    def test_shift_unsupported(self):
        with pytest.raises(UnsupportedForContinuous):
            oracle_truth(InterventionSpec.shift(1.0))

    def test_law_has_128_atoms(self):
        law = dgp5_law()
        assert law.joint.size == 128 and law.joint.sum() == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("d", DELTAS)
    def test_null_law_has_no_direct_effect(self, d):
        law = null_law()
        assert law.theta(InterventionSpec.ips(d)) == pytest.approx(law.y_mean, abs=1e-14)


class TestGenerate:
    def test_deterministic(self):
        a, b = generate(300, seed=5), generate(300, seed=5)
        assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z)

    def test_shapes(self):
        d = generate(50, seed=1)
        assert d.W.shape == (50, 3) and d.Z.shape == (50, 3) and set(np.unique(d.A)) <= {0.0, 1.0}

    def test_moments_match_law(self):
        law = dgp5_law()
        d = generate(200_000, seed=7)
        p_a = law.joint.sum(axis=(0, 2))[1]
        assert d.A.mean() == pytest.approx(p_a, abs=4 * math.sqrt(p_a * (1 - p_a) / d.n))
        assert d.Y.mean() == pytest.approx(law.y_mean, abs=0.01)
        assert d.W.mean(axis=0) == pytest.approx([0.5, 0.65, 0.35], abs=0.01)

    def test_null_generator(self):
        d = generate_null(20_000, seed=2)
        assert d.Y.mean() == pytest.approx(null_law().y_mean, abs=0.02)


class TestSummaries:
    def test_mse_identity(self):
        est = np.random.default_rng(0).normal(0.1, 0.2, size=500)
        s = summarize(est, 0.0, 100)
        assert s["mse"] == pytest.approx(s["bias"] ** 2 + s["se"] ** 2, rel=1e-12)
        assert s["n_mse"] == pytest.approx(100 * s["mse"])

    def test_nan_excluded(self):
        s = summarize(np.array([1.0, np.nan, 3.0]), 2.0, 1)
        assert s["bias"] == 0.0 and s["mse"] == 1.0

    def test_all_failed(self):
        assert math.isnan(summarize(np.array([np.nan]), 0.0, 1)["mse"])


class TestToggle:
    def test_parse(self):
        assert MisspecToggle.parse("none").which == ()
        assert MisspecToggle.parse("g").label == "G"
        assert MisspecToggle.parse(["M", "E"]).label == "E+M"

    def test_unknown(self):
        with pytest.raises(DomainError):
            MisspecToggle.parse("Q")

    def test_learners(self):
        base = NuisanceLearners()
        ln = MisspecToggle.parse("G").learners(base)
        assert ln.g.kind is LearnerKind.INTERCEPT and ln.m == base.m


class TestHarness:
    def test_single_rep_is_finite(self):
        res = run_table1(ns=(200,), reps=1, seed=3)
        assert list(res.table.columns) == SIM_COLUMNS
        assert (res.table["reps"] == 1).all()
        numeric = res.table[["bias", "se", "mse", "n_mse"]].to_numpy(dtype=float)
        assert np.isfinite(numeric).all()

    def test_default_rows(self):
        res = run_table1(ns=(200,), reps=2, seed=0)
        rows = list(zip(res.table["estimator"], res.table["toggle"]))
        assert rows == [("sub", "none"), ("ipw", "none"), ("onestep", "none"),
                        ("onestep", "E"), ("onestep", "M"), ("onestep", "G")]

    def test_crossed_rows(self):
        res = run_table1(ns=(200,), reps=1, estimators=["sub", "onestep"], toggles=["none", "M"])
        assert len(res.table) == 4

    def test_deterministic_and_thread_invariant(self):
        a = run_table1(ns=(200,), reps=3, estimators=["onestep"], seed=9)
        b = run_table1(ns=(200,), reps=3, estimators=["onestep"], seed=9, threads=2)
        pd.testing.assert_frame_equal(a.table, b.table)

    def test_truth_and_pivot(self, tmp_path):
        res = run_table1(ns=(200, 300), reps=2, estimators=["sub"])
        assert res.truth == pytest.approx(-0.13746953847, abs=1e-10)
        assert list(res.pivot("n_mse").columns) == [200, 300]
        res.to_csv(tmp_path / "t.csv")
        assert list(pd.read_csv(tmp_path / "t.csv").columns) == SIM_COLUMNS

    def test_reps_validated(self):
        with pytest.raises(DomainError):
            run_table1(ns=(200,), reps=0)

    def test_coverage_and_sup_outputs(self):
        cov = run_coverage(n=400, reps=3)
        assert 0.0 <= cov["coverage"] <= 1.0 and cov["reps"] == 3
        sup = run_sup_test(n=400, reps=2, grid=(0.5, 2.0), n_boot=1000)
        assert len(sup["p_values"]) == 2 and 0.0 <= sup["rejection_rate"] <= 1.0
