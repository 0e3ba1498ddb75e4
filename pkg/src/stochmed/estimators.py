"""Substitution, reweighted and one-step estimators and the direct/indirect/total decomposition.

The direct effect is theta(delta) - E[Y], the total effect psi(delta) - E[Y]
and the indirect effect their difference. psi is estimated with the same
machinery as theta after dropping the mediators (then e = g and m = b).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from stochmed.crossfit import (
    CrossFit,
    FitContext,
    FoldPlan,
    NuisanceLearners,
    crossfit_nuisances,
    fit_nuisances,
    make_folds,
    retarget,
)
from stochmed.eif import WEIGHT_CAP, EifComponentsBatch, _cap, assemble_eif, eif_zw
from stochmed.inference import UniformInferenceConfig, multiplier_bootstrap, wald_ci
from stochmed.interventions import ExposureSupport
from stochmed.model import (
    TRUNCATION_FLOOR,
    EffectReport,
    InterventionKind,
    InterventionSpec,
    NuisanceFits,
    ObservedDataset,
    float_list,
)


class EstimatorKind(str, Enum):
    SUBSTITUTION = "sub"
    REWEIGHTED = "ipw"
    ONESTEP = "onestep"

    @classmethod
    def parse(cls, value) -> "EstimatorKind":
        aliases = {
            "substitution": cls.SUBSTITUTION, "reweighted": cls.REWEIGHTED,
            "efficient": cls.ONESTEP, "one-step": cls.ONESTEP, "eff": cls.ONESTEP,
        }
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        return aliases[key] if key in aliases else cls(key)


# =============================================================================
# Point estimators
# =============================================================================


def estimate_substitution(
    data: ObservedDataset,
    fits: NuisanceFits,
    intervention: InterventionSpec,
    support: Optional[ExposureSupport] = None,
) -> float:
    """Plug-in mean of the integral of m(a, Z_i, W_i) against g_delta(a | W_i)."""
    support = support or FitContext.for_data(data, intervention).support
    return float(np.mean(eif_zw(fits.m, fits.g_delta, data.Z, data.W, support)))


def reweighted_terms(
    data: ObservedDataset,
    fits: NuisanceFits,
    floor: float = TRUNCATION_FLOOR,
    cap: float = WEIGHT_CAP,
    flags: Optional[list] = None,
) -> np.ndarray:
    """Per-row {g_delta(A|W) / e(A|Z,W)} Y with truncated e and capped weights."""
    gd = fits.g_delta(data.A, data.W)
    if getattr(fits.e, "is_g", False) or not data.has_mediators:
        e = fits.g(data.A, data.W)
    else:
        e = fits.e(data.A, data.Z, data.W)
    w = _cap(gd / np.maximum(e, floor), cap, flags)
    return w * data.Y


def estimate_reweighted(
    data: ObservedDataset,
    fits: NuisanceFits,
    intervention: InterventionSpec = None,
    floor: float = TRUNCATION_FLOOR,
    cap: float = WEIGHT_CAP,
    flags: Optional[list] = None,
) -> float:
    """Inverse-weighted outcome mean (1/n) sum {g_delta(A_i|W_i) / e(A_i|Z_i,W_i)} Y_i."""
    return float(np.mean(reweighted_terms(data, fits, floor, cap, flags)))


def estimate_onestep(
    data: ObservedDataset,
    intervention: InterventionSpec,
    learners: NuisanceLearners = NuisanceLearners(),
    plan: Optional[FoldPlan] = None,
    known_g: Optional[Callable] = None,
    phi_parameterization: str = "stabilized",
) -> Tuple[float, float, EifComponentsBatch]:
    """Cross-fitted EIF mean, the standard deviation of the EIF, and the per-row pieces."""
    plan = plan or make_folds(data.n)
    cf = crossfit_nuisances(data, intervention, learners, plan, known_g, phi_parameterization)
    batch = assemble_eif(data, cf, intervention, randomized=known_g is not None)
    return batch.theta_contribution, float(np.sqrt(batch.sigma2)), batch


# =============================================================================
# Effects over a grid of intervention magnitudes
# =============================================================================


@dataclass
class FunctionalPath:
    """Estimates of one functional (theta or psi) at each grid point with its EIF values."""

    estimates: np.ndarray           # (K,)
    eif: np.ndarray                 # (n, K) uncentered EIF values
    flags: List[str] = field(default_factory=list)


@dataclass
class EffectPath:
    delta_grid: np.ndarray
    y_mean: float
    theta: FunctionalPath
    psi: FunctionalPath
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def direct(self) -> np.ndarray:
        return self.theta.estimates - self.y_mean

    @property
    def total(self) -> np.ndarray:
        return self.psi.estimates - self.y_mean

    @property
    def indirect(self) -> np.ndarray:
        return self.total - self.direct

    @property
    def s_direct(self) -> np.ndarray:
        return self.theta.eif - self.y[:, None]

    @property
    def s_total(self) -> np.ndarray:
        return self.psi.eif - self.y[:, None]

    @property
    def s_indirect(self) -> np.ndarray:
        return self.psi.eif - self.theta.eif

    @staticmethod
    def _sd(s: np.ndarray) -> np.ndarray:
        return np.std(s, axis=0)

    @property
    def sigma_direct(self) -> np.ndarray:
        return self._sd(self.s_direct)

    @property
    def sigma_indirect(self) -> np.ndarray:
        return self._sd(self.s_indirect)

    @property
    def sigma_total(self) -> np.ndarray:
        return self._sd(self.s_total)

    @property
    def flags(self) -> List[str]:
        return list(dict.fromkeys(self.theta.flags + self.psi.flags))


def _functional_path(
    data: ObservedDataset,
    base: InterventionSpec,
    grid: Sequence[float],
    kind: EstimatorKind,
    learners: NuisanceLearners,
    plan: FoldPlan,
    known_g: Optional[Callable],
    phi_parameterization: str,
) -> FunctionalPath:
    K = len(grid)
    est = np.empty(K)
    eif = np.empty((data.n, K))
    flags: List[str] = []
    reusable = base.kind is not InterventionKind.SHIFT_POLICY
    randomized = known_g is not None

    if kind is EstimatorKind.ONESTEP:
        cf = None
        for k, d in enumerate(grid):
            iv = base.with_delta(d)
            if cf is None or not reusable:
                cf = crossfit_nuisances(data, iv, learners, plan, known_g, phi_parameterization)
            else:
                cf = cf.retarget(iv)
            batch = assemble_eif(data, cf, iv, randomized=randomized)
            est[k] = batch.theta_contribution
            eif[:, k] = batch.total
            flags += batch.flags
        return FunctionalPath(est, eif, flags)

    # Substitution and reweighted estimators use one full-sample fit; their
    # standard errors come from the EIF evaluated at that fit.
    fits = None
    context = None
    for k, d in enumerate(grid):
        iv = base.with_delta(d)
        if fits is None or not reusable:
            context = FitContext.for_data(data, iv)
            fits = fit_nuisances(data, iv, learners, context, known_g, phi_parameterization)
        else:
            fits = retarget(fits, iv, context)
        batch = assemble_eif(data, fits, iv, support=context.support, randomized=randomized)
        if kind is EstimatorKind.SUBSTITUTION:
            est[k] = float(np.mean(batch.dZW))
        else:
            est[k] = estimate_reweighted(data, fits, iv, flags=flags)
        eif[:, k] = batch.total
        flags += batch.flags
    return FunctionalPath(est, eif, flags)


def effect_path(
    data: ObservedDataset,
    intervention: InterventionSpec,
    delta_grid: Optional[Sequence[float]] = None,
    kind=EstimatorKind.ONESTEP,
    learners: NuisanceLearners = NuisanceLearners(),
    plan: Optional[FoldPlan] = None,
    known_g: Optional[Callable] = None,
    phi_parameterization: str = "stabilized",
) -> EffectPath:
    """theta and psi estimates with their EIF values at every grid point.

    Defaults to the single magnitude carried by ``intervention``.
    """
    kind = EstimatorKind.parse(kind)
    grid = np.atleast_1d(np.asarray(intervention.delta if delta_grid is None else delta_grid, dtype=float))
    plan = plan or make_folds(data.n)
    args = (kind, learners, plan, known_g, phi_parameterization)
    theta = _functional_path(data, intervention, grid, *args)
    if data.has_mediators:
        psi = _functional_path(data.without_mediators(), intervention, grid, *args)
    else:
        psi = theta
    return EffectPath(grid, float(np.mean(data.Y)), theta, psi, np.asarray(data.Y, dtype=float))


def _report(path: EffectPath, intervention: InterventionSpec, kind: EstimatorKind, alpha: float) -> EffectReport:
    n = path.n
    rt = np.sqrt(n)
    direct, indirect, total = path.direct, path.indirect, path.total
    sd, si, st = path.sigma_direct, path.sigma_indirect, path.sigma_total
    ci = [wald_ci(b, s, n, alpha) for b, s in zip(direct, sd)]
    ci_ind = [wald_ci(b, s, n, alpha) for b, s in zip(indirect, si)]
    return EffectReport(
        intervention=intervention.kind.value,
        estimator=kind.value,
        delta_grid=float_list(path.delta_grid),
        y_mean=path.y_mean,
        theta=float_list(path.theta.estimates),
        psi=float_list(path.psi.estimates),
        direct=float_list(direct),
        indirect=float_list(indirect),
        total=float_list(total),
        se_direct=float_list(sd / rt),
        se_indirect=float_list(si / rt),
        se_total=float_list(st / rt),
        ci_lo=[c[0] for c in ci],
        ci_hi=[c[1] for c in ci],
        ci_lo_indirect=[c[0] for c in ci_ind],
        ci_hi_indirect=[c[1] for c in ci_ind],
        alpha=alpha,
        n=n,
        flags=path.flags,
    )


def decompose_effects(
    data: ObservedDataset,
    intervention: InterventionSpec,
    kind=EstimatorKind.ONESTEP,
    learners: NuisanceLearners = NuisanceLearners(),
    plan: Optional[FoldPlan] = None,
    alpha: float = 0.05,
    **kwargs,
) -> EffectReport:
    """Direct, indirect and total effects at one magnitude, with Wald intervals."""
    kind = EstimatorKind.parse(kind)
    path = effect_path(data, intervention, None, kind, learners, plan, **kwargs)
    return _report(path, intervention, kind, alpha)


def analyze(
    data: ObservedDataset,
    intervention: InterventionSpec,
    delta_grid: Optional[Sequence[float]] = None,
    kind=EstimatorKind.ONESTEP,
    learners: NuisanceLearners = NuisanceLearners(),
    folds: int = 5,
    seed: int = 0,
    n_boot: int = 2000,
    multiplier: str = "rademacher",
    alpha: float = 0.05,
    **kwargs,
) -> EffectReport:
    """Effects over a grid with pointwise intervals, a uniform band and the sup test.

    The band and sup test are computed when a grid is given and the
    intervention is a tilt or incremental propensity intervention.
    """
    kind = EstimatorKind.parse(kind)
    plan = make_folds(data.n, folds, seed)
    path = effect_path(data, intervention, delta_grid, kind, learners, plan, **kwargs)
    report = _report(path, intervention, kind, alpha)
    if delta_grid is not None and intervention.kind is not InterventionKind.SHIFT_POLICY:
        cfg = UniformInferenceConfig(
            delta_grid=tuple(path.delta_grid), n_boot=n_boot, multiplier=multiplier, alpha=alpha, seed=seed,
            positive_grid=intervention.kind is InterventionKind.INCREMENTAL_PROPENSITY,
        )
        boot = multiplier_bootstrap(path.s_direct, path.direct, path.sigma_direct, cfg)
        report.band_lo = float_list(boot.band_lo)
        report.band_hi = float_list(boot.band_hi)
        report.critical_value = boot.critical_value
        report.sup_test_p = boot.p_value
    return report
