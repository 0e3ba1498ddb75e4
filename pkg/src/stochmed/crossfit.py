"""Fold partitioning and train-on-T_j / predict-on-V_j nuisance fitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from stochmed.exceptions import DomainError, FoldFitError
from stochmed.interventions import ExposureSupport, ShiftPolicyEval, make_gdelta, shift_policy_for
from stochmed.learners import (
    LearnerKind,
    LearnerSpec,
    fit_exposure_mechanism,
    fit_mediator_exposure,
    fit_outcome_regression,
    fit_phi,
    gw_as_e,
)
from stochmed.model import InterventionKind, InterventionSpec, NuisanceFits, ObservedDataset

DEFAULT_FOLDS: int = 5

#: Minimum pseudo observations per stratum for saturated fits made on
#: training folds. Raw stratum means put e near 0 or 1 in strata that are
#: sparse in the training split, and the resulting weights on the held-out
#: rows dominate the one-step estimate.
DEFAULT_FOLD_PSEUDO_COUNT: float = 5.0


@dataclass(frozen=True)
class FoldPlan:
    J: int
    assignment: np.ndarray  # fold index in 0..J-1 per observation
    seed: int

    def validation(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def training(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != j)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.J)


def make_folds(n: int, J: int = DEFAULT_FOLDS, seed: int = 0) -> FoldPlan:
    """Random partition of range(n) into J folds whose sizes differ by at most one."""
    if J < 2:
        raise DomainError(f"need at least two folds, got {J}")
    if J > n:
        raise DomainError(f"cannot split {n} observations into {J} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % J
    assignment.setflags(write=False)
    return FoldPlan(J=J, assignment=assignment, seed=seed)


@dataclass(frozen=True)
class NuisanceLearners:
    """Learner used for each nuisance function.

    ``fold_pseudo_count`` applies only to cross-fitting: saturated learners
    fitted on a training fold get at least that many pseudo observations per
    stratum. Full-sample fits use the specs as given.
    """

    g: LearnerSpec = field(default_factory=LearnerSpec)
    e: LearnerSpec = field(default_factory=LearnerSpec)
    m: LearnerSpec = field(default_factory=LearnerSpec)
    phi: LearnerSpec = field(default_factory=LearnerSpec)
    fold_pseudo_count: float = DEFAULT_FOLD_PSEUDO_COUNT

    def __post_init__(self):
        if self.fold_pseudo_count < 0:
            raise DomainError("fold_pseudo_count must be non-negative")

    def for_folds(self) -> "NuisanceLearners":
        """The learners used on training folds."""

        def shrunk(spec: LearnerSpec) -> LearnerSpec:
            if spec.kind is not LearnerKind.SATURATED or spec.pseudo_count >= self.fold_pseudo_count:
                return spec
            return replace(spec, pseudo_count=self.fold_pseudo_count)

        return replace(self, g=shrunk(self.g), e=shrunk(self.e), m=shrunk(self.m), phi=shrunk(self.phi))

    def misspecify(self, which: Iterable[str]) -> "NuisanceLearners":
        """Replace the named learners ("G", "E", "M", "Phi") with intercept-only fits."""
        names = {"G": "g", "E": "e", "M": "m", "PHI": "phi"}
        changes = {}
        for w in which:
            key = names.get(str(w).upper())
            if key is None:
                raise DomainError(f"unknown nuisance {w!r}")
            changes[key] = LearnerSpec.intercept()
        return replace(self, **changes)

    @classmethod
    def all(cls, spec: LearnerSpec, fold_pseudo_count: float = DEFAULT_FOLD_PSEUDO_COUNT) -> "NuisanceLearners":
        return cls(spec, spec, spec, spec, fold_pseudo_count)


@dataclass(frozen=True)
class FitContext:
    """Things fixed across folds: exposure support and resolved shift policy."""

    support: ExposureSupport
    policy: Optional[ShiftPolicyEval] = None

    @classmethod
    def for_data(cls, data: ObservedDataset, intervention: InterventionSpec) -> "FitContext":
        intervention.check_exposure(data.exposure_kind)
        policy = None
        pad = 0.0
        if intervention.kind is InterventionKind.SHIFT_POLICY:
            policy = shift_policy_for(intervention, data.A)
            policy.check(data.W)
            pad = intervention.delta
        return cls(ExposureSupport.for_data(data.A, data.exposure_kind, pad=pad), policy)


def fit_nuisances(
    train: ObservedDataset,
    intervention: InterventionSpec,
    learners: NuisanceLearners,
    context: FitContext,
    known_g: Optional[Callable] = None,
    phi_parameterization: str = "stabilized",
) -> NuisanceFits:
    """Fit every nuisance on one training sample, in the order g, e, m, g_delta, phi."""
    stage = "g"
    levels = context.support.points if context.support.kind == "discrete" else None
    try:
        g = known_g if known_g is not None else fit_exposure_mechanism(
            learners.g, train.W, train.A, train.exposure_kind, levels
        )
        stage = "e"
        e = fit_mediator_exposure(learners.e, train, levels) if train.has_mediators else gw_as_e(g)
        stage = "m"
        m = fit_outcome_regression(learners.m, train)
        stage = "g_delta"
        g_delta, c = make_gdelta(g, intervention, context.support, context.policy)
        fits = NuisanceFits(g=g, g_delta=g_delta, m=m, e=e, c=c, b=None if train.has_mediators else m)
        stage = "phi"
        finite = None if context.support.is_continuous else context.support.points
        phi = fit_phi(
            fits, train, learners.phi, intervention, context.policy,
            parameterization=phi_parameterization, support_points=finite,
        )
    except Exception as exc:
        exc.stage = stage  # read by crossfit_nuisances for the error message
        raise
    return fits.replace(phi=phi)


def retarget(fits: NuisanceFits, intervention: InterventionSpec, context: FitContext) -> NuisanceFits:
    """Swap g_delta (and c) for a new intervention of the same kind, keeping g, e, m, phi.

    Valid for incremental propensity and tilt interventions, whose phi does
    not depend on delta.
    """
    if intervention.kind is InterventionKind.SHIFT_POLICY:
        raise DomainError("shift-policy phi depends on delta; refit instead of retargeting")
    g_delta, c = make_gdelta(fits.g, intervention, context.support, context.policy)
    return fits.replace(g_delta=g_delta, c=c)


@dataclass(frozen=True)
class CrossFit:
    """Per-fold fits; ``folds[j]`` was trained without the rows of fold j."""

    plan: FoldPlan
    folds: Tuple[NuisanceFits, ...]
    context: FitContext

    def pieces(self) -> List[Tuple[np.ndarray, NuisanceFits]]:
        return [(self.plan.validation(j), f) for j, f in enumerate(self.folds)]

    def retarget(self, intervention: InterventionSpec) -> "CrossFit":
        return CrossFit(self.plan, tuple(retarget(f, intervention, self.context) for f in self.folds), self.context)

    def out_of_fold(self, data: ObservedDataset) -> dict:
        """Out-of-fold g(A|W), g_delta(A|W), e(A|Z,W), m(A,Z,W) per observation."""
        out = {k: np.empty(data.n) for k in ("g", "g_delta", "e", "m")}
        for idx, f in self.pieces():
            W, A, Z = data.W[idx], data.A[idx], data.Z[idx]
            out["g"][idx] = f.g(A, W)
            out["g_delta"][idx] = f.g_delta(A, W)
            out["e"][idx] = f.e(A, Z, W)
            out["m"][idx] = f.m(A, Z, W)
        return out


def crossfit_nuisances(
    data: ObservedDataset,
    intervention: InterventionSpec,
    learners: NuisanceLearners,
    plan: FoldPlan,
    known_g: Optional[Callable] = None,
    phi_parameterization: str = "stabilized",
    context: Optional[FitContext] = None,
) -> CrossFit:
    """Fit nuisances on each training split T_j for evaluation on V_j.

    ``known_g`` supplies the exposure mechanism of a randomized trial; it is
    used as-is in every fold.
    """
    if plan.assignment.shape[0] != data.n:
        raise DomainError(f"fold plan covers {plan.assignment.shape[0]} rows, data has {data.n}")
    context = context or FitContext.for_data(data, intervention)
    learners = learners.for_folds()
    folds = []
    for j in range(plan.J):
        train = data.subset(plan.training(j))
        try:
            folds.append(fit_nuisances(train, intervention, learners, context, known_g, phi_parameterization))
        except Exception as exc:
            raise FoldFitError(j, getattr(exc, "stage", "nuisance"), exc) from exc
    return CrossFit(plan, tuple(folds), context)
