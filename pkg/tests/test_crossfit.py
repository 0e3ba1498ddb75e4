import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochmed.crossfit import (
    CrossFit,
    FitContext,
    NuisanceLearners,
    crossfit_nuisances,
    make_folds,
)
from stochmed.exceptions import DomainError, FoldFitError
from stochmed.learners import LearnerSpec
from stochmed.model import ExposureKind, InterventionSpec, ObservedDataset
from stochmed.sim import generate

SAT = NuisanceLearners.all(LearnerSpec.saturated(), fold_pseudo_count=0.0)


class TestMakeFolds:
    def test_even(self):
        assert sorted(make_folds(10, 5, 3).sizes) == [2] * 5

    def test_remainder(self):
        assert sorted(make_folds(11, 5, 3).sizes) == [2, 2, 2, 2, 3]

    def test_deterministic(self):
        assert np.array_equal(make_folds(50, 5, 9).assignment, make_folds(50, 5, 9).assignment)
        assert not np.array_equal(make_folds(50, 5, 9).assignment, make_folds(50, 5, 10).assignment)

    def test_domain(self):
        with pytest.raises(DomainError):
            make_folds(3, 4)
        with pytest.raises(DomainError):
            make_folds(10, 1)

    @given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 1000))
    def test_partition(self, n, J, seed):
        if J > n:
            return
        plan = make_folds(n, J, seed)
        assert plan.sizes.max() - plan.sizes.min() <= 1
        idx = np.concatenate([plan.validation(j) for j in range(J)])
        assert np.array_equal(np.sort(idx), np.arange(n))
        for j in range(J):
            assert np.intersect1d(plan.validation(j), plan.training(j)).size == 0


def toy_data():
    W = np.array([[0.0], [0.0], [0.0], [1.0], [1.0], [1.0]])
    A = np.array([0.0, 1.0, 1.0, 0.0, 1.0, 0.0])
    Z = np.array([[0.0], [1.0], [0.0], [1.0], [1.0], [0.0]])
    Y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    return ObservedDataset(W=W, A=A, Z=Z, Y=Y, exposure_kind=ExposureKind.BINARY)


class TestCrossfit:
    def test_out_of_fold_stratum_means(self):
        data = toy_data()
        plan = make_folds(6, 2, 0)
        cf = crossfit_nuisances(data, InterventionSpec.ips(2.0), SAT, plan)
        oof = cf.out_of_fold(data)
        for i in range(6):
            train = plan.training(plan.assignment[i])
            same_w = train[data.W[train, 0] == data.W[i, 0]]
            if same_w.size:
                expected = data.A[same_w].mean() if data.A[i] == 1 else 1 - data.A[same_w].mean()
                assert oof["g"][i] == pytest.approx(np.clip(expected, 1e-6, 1 - 1e-6), abs=1e-12)

    def test_intercept_means(self):
        data = generate(60, 1)
        plan = make_folds(60, 3, 2)
        cf = crossfit_nuisances(data, InterventionSpec.ips(2.0), NuisanceLearners.all(LearnerSpec.intercept()), plan)
        oof = cf.out_of_fold(data)
        for j in range(3):
            v, t = plan.validation(j), plan.training(j)
            assert np.allclose(oof["m"][v], data.Y[t].mean())

    def test_leave_one_out(self):
        data = generate(4, 3)
        plan = make_folds(4, 4, 0)
        cf = crossfit_nuisances(data, InterventionSpec.ips(2.0), NuisanceLearners.all(LearnerSpec.intercept()), plan)
        oof = cf.out_of_fold(data)
        for i in range(4):
            assert oof["m"][i] == pytest.approx(np.delete(data.Y, i).mean(), abs=1e-12)

    def test_no_leakage(self):
        data = generate(300, 4)
        plan = make_folds(300, 5, 1)
        iv = InterventionSpec.ips(0.5)
        base = crossfit_nuisances(data, iv, SAT, plan).out_of_fold(data)
        i = 17
        Y = data.Y.copy()
        Y[i] += 100.0
        bumped = ObservedDataset(W=data.W, A=data.A, Z=data.Z, Y=Y, exposure_kind=data.exposure_kind)
        after = crossfit_nuisances(bumped, iv, SAT, plan).out_of_fold(bumped)
        fold = plan.validation(plan.assignment[i])
        assert np.array_equal(base["m"][fold], after["m"][fold])
        others = np.setdiff1d(np.arange(300), fold)
        assert not np.array_equal(base["m"][others], after["m"][others])

    def test_retarget_matches_refit(self):
        data = generate(400, 5)
        plan = make_folds(400, 5, 0)
        cf = crossfit_nuisances(data, InterventionSpec.ips(0.5), SAT, plan)
        direct = crossfit_nuisances(data, InterventionSpec.ips(2.0), SAT, plan)
        moved = cf.retarget(InterventionSpec.ips(2.0))
        assert np.allclose(moved.out_of_fold(data)["g_delta"], direct.out_of_fold(data)["g_delta"], atol=1e-14)

    def test_known_g(self):
        data = generate(200, 6)
        known = lambda a, W: np.where(a == 1.0, 0.3, 0.7)
        cf = crossfit_nuisances(data, InterventionSpec.ips(2.0), SAT, make_folds(200, 4, 0), known_g=known)
        assert np.allclose(cf.out_of_fold(data)["g"], known(data.A, data.W))

    def test_fold_error_annotated(self):
        rng = np.random.default_rng(0)
        n = 400
        data = ObservedDataset(W=rng.normal(size=(n, 1)), A=(rng.random(n) < 0.5).astype(float),
                               Z=np.zeros((n, 0)), Y=rng.normal(size=n), exposure_kind=ExposureKind.BINARY)
        with pytest.raises(FoldFitError) as err:
            crossfit_nuisances(data, InterventionSpec.ips(2.0), SAT, make_folds(n, 2, 0))
        assert err.value.fold == 0 and err.value.nuisance == "g"

    def test_misspecify(self):
        learners = NuisanceLearners().misspecify(["G", "phi"])
        assert learners.g.kind.value == "intercept" and learners.phi.kind.value == "intercept"
        assert learners.m.kind.value == "saturated"
        with pytest.raises(DomainError):
            NuisanceLearners().misspecify(["Q"])

    def test_context_padding(self):
        rng = np.random.default_rng(1)
        data = ObservedDataset(W=np.zeros((50, 1)), A=rng.random(50), Z=np.zeros((50, 0)), Y=np.zeros(50),
                               exposure_kind=ExposureKind.CONTINUOUS)
        ctx = FitContext.for_data(data, InterventionSpec.shift(0.2))
        assert ctx.support.points[0] == pytest.approx(data.A.min() - 0.2)
        assert ctx.policy is not None


class TestFoldShrinkage:
    def test_for_folds_touches_saturated_only(self):
        ln = NuisanceLearners(g=LearnerSpec.intercept(), m=LearnerSpec.saturated(pseudo_count=9.0))
        folds = ln.for_folds()
        assert folds.g == ln.g
        assert folds.e.pseudo_count == 5.0 and folds.phi.pseudo_count == 5.0
        assert folds.m.pseudo_count == 9.0

    def test_defaults_are_raw_on_full_sample(self):
        assert NuisanceLearners().m.pseudo_count == 0.0
        assert NuisanceLearners(fold_pseudo_count=0.0).for_folds() == NuisanceLearners(fold_pseudo_count=0.0)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            NuisanceLearners(fold_pseudo_count=-1.0)

    def test_shrinkage_keeps_held_out_e_off_zero(self):
        data = generate(400, 8)
        plan = make_folds(400, 5, 0)
        iv = InterventionSpec.ips(0.5)
        raw = crossfit_nuisances(data, iv, NuisanceLearners(fold_pseudo_count=0.0), plan).out_of_fold(data)
        shrunk = crossfit_nuisances(data, iv, NuisanceLearners(), plan).out_of_fold(data)
        assert raw["e"].min() < 1e-3 < shrunk["e"].min()
