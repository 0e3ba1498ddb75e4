"""Regression and conditional-density learners for the nuisance functions.

Every fit returns an immutable callable. Binomial predictions are clipped
to ``[PROB_CLIP, 1 - PROB_CLIP]``; densities are non-negative.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from stochmed.exceptions import DomainError, ExtremeWeight, NonConvergence, SingularDesign
from stochmed.interventions import ShiftPolicyEval
from stochmed.model import (
    TRUNCATION_FLOOR,
    ExposureKind,
    InterventionKind,
    InterventionSpec,
    NuisanceFits,
    ObservedDataset,
)

PROB_CLIP: float = 1e-6


class LearnerKind(str, Enum):
    SATURATED = "saturated"
    LOGISTIC = "logistic"
    RIDGE = "ridge"
    HISTOGRAM = "histogram"
    INTERCEPT = "intercept"


@dataclass(frozen=True)
class LearnerSpec:
    """Learner choice plus hyperparameters.

    ``ridge`` is the L2 penalty for LinearRidge and LogisticGLM. ``bins`` is
    the histogram bin count for continuous exposures. ``max_strata`` caps the
    number of observed joint strata for SaturatedStratified, and
    ``fallback`` ("glm" or "mean") picks the prediction for strata absent
    from the training data. ``pseudo_count`` adds that many pseudo
    observations at the fallback prediction to every observed stratum, which
    keeps small strata away from 0 and 1 (0 gives raw stratum means).
    ``base`` is the learner used for per-bin probabilities by
    HistogramDensity.
    """

    kind: LearnerKind = LearnerKind.SATURATED
    ridge: float = 0.0
    bins: int = 10
    max_iter: int = 100
    tol: float = 1e-8
    interactions: bool = False
    max_strata: int = 128
    fallback: str = "glm"
    pseudo_count: float = 0.0
    base: LearnerKind = LearnerKind.LOGISTIC

    def __post_init__(self):
        object.__setattr__(self, "kind", LearnerKind(self.kind))
        object.__setattr__(self, "base", LearnerKind(self.base))
        if self.ridge < 0:
            raise DomainError("ridge penalty must be non-negative")
        if self.bins < 2:
            raise DomainError("histogram needs at least two bins")
        if self.fallback not in ("glm", "mean"):
            raise DomainError(f"unknown fallback {self.fallback!r}")
        if self.pseudo_count < 0:
            raise DomainError("pseudo_count must be non-negative")

    @classmethod
    def saturated(cls, **kw) -> "LearnerSpec":
        return cls(LearnerKind.SATURATED, **kw)

    @classmethod
    def intercept(cls, **kw) -> "LearnerSpec":
        return cls(LearnerKind.INTERCEPT, **kw)


# =============================================================================
# Fitted regressions
# =============================================================================


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _basis(X: np.ndarray, interactions: bool) -> np.ndarray:
    if not interactions or X.shape[1] < 2:
        return X
    p = X.shape[1]
    prods = [X[:, i] * X[:, j] for i in range(p) for j in range(i + 1, p)]
    return np.column_stack([X] + prods)


class _Fitted:
    family = "gaussian"
    converged = True

    def _finish(self, pred):
        if self.family == "binomial":
            return np.clip(pred, PROB_CLIP, 1.0 - PROB_CLIP)
        return pred


class InterceptModel(_Fitted):
    def __init__(self, value: float, family: str):
        self.value = float(value)
        self.family = family

    def __call__(self, X):
        return self._finish(np.full(_as_matrix(X).shape[0], self.value))


class LinearModel(_Fitted):
    def __init__(self, coef: np.ndarray, interactions: bool, family: str = "gaussian", link: str = "identity"):
        self.coef = coef
        self.interactions = interactions
        self.family = family
        self.link = link

    def __call__(self, X):
        Xb = _basis(_as_matrix(X), self.interactions)
        eta = self.coef[0] + Xb @ self.coef[1:]
        return self._finish(expit(eta) if self.link == "logit" else eta)


class StratifiedModel(_Fitted):
    """Stratum sample means with a backup model for unseen strata."""

    def __init__(self, values_per_col, radices, codes, means, fallback, family):
        self.values_per_col = values_per_col
        self.radices = radices
        self.codes = codes
        self.means = means
        self.fallback = fallback
        self.family = family

    def __call__(self, X):
        X = _as_matrix(X)
        code, known = _encode(X, self.values_per_col, self.radices)
        pos = np.searchsorted(self.codes, code)
        pos = np.minimum(pos, len(self.codes) - 1)
        known &= self.codes[pos] == code
        out = np.empty(X.shape[0])
        out[known] = self.means[pos[known]]
        if not known.all():
            out[~known] = self.fallback(X[~known])
        return self._finish(out)


def _encode(X, values_per_col, radices):
    code = np.zeros(X.shape[0], dtype=np.int64)
    known = np.ones(X.shape[0], dtype=bool)
    for j, vals in enumerate(values_per_col):
        idx = np.searchsorted(vals, X[:, j])
        idx = np.minimum(idx, len(vals) - 1)
        known &= vals[idx] == X[:, j]
        code += idx * radices[j]
    return code, known


# =============================================================================
# Solvers
# =============================================================================


def _solve(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        sol = np.linalg.solve(H, rhs)
        if np.all(np.isfinite(sol)) and np.linalg.cond(H) < 1e12:
            return sol
    except np.linalg.LinAlgError:
        pass
    warnings.warn("singular design; adding a small ridge penalty", SingularDesign, stacklevel=3)
    jitter = 1e-8 * max(1.0, np.abs(np.diag(H)).max())
    return np.linalg.solve(H + jitter * np.eye(H.shape[0]), rhs)


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float = 0.0, interactions: bool = False) -> LinearModel:
    """Least squares with an unpenalized intercept."""
    Xb = _basis(X, interactions)
    X1 = np.column_stack([np.ones(len(y)), Xb])
    P = np.eye(X1.shape[1])
    P[0, 0] = 0.0
    coef = _solve(X1.T @ X1 + lam * P, X1.T @ y)
    return LinearModel(coef, interactions)


def _binomial_deviance(y, mu):
    mu = np.clip(mu, 1e-15, 1 - 1e-15)
    return -2.0 * np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu))


def irls_logistic(
    X: np.ndarray,
    y: np.ndarray,
    lam: float = 0.0,
    max_iter: int = 100,
    tol: float = 1e-8,
    interactions: bool = False,
) -> LinearModel:
    """Logistic regression by iteratively reweighted least squares.

    Responses may be fractional in [0, 1]. A step that increases the
    penalized deviance is halved up to 30 times. Non-convergence returns the
    last iterate with ``converged = False`` and a warning.
    """
    Xb = _basis(X, interactions)
    X1 = np.column_stack([np.ones(len(y)), Xb])
    P = np.eye(X1.shape[1])
    P[0, 0] = 0.0
    ybar = np.clip(y.mean(), 1e-4, 1 - 1e-4)
    beta = np.zeros(X1.shape[1])
    beta[0] = np.log(ybar / (1 - ybar))

    def objective(b):
        return _binomial_deviance(y, expit(X1 @ b)) + lam * b @ P @ b

    dev = objective(beta)
    converged = False
    for _ in range(max_iter):
        eta = X1 @ beta
        mu = expit(eta)
        w = np.maximum(mu * (1 - mu), 1e-10)
        z = eta + (y - mu) / w
        H = X1.T @ (w[:, None] * X1) + lam * P
        new = _solve(H, X1.T @ (w * z))
        new_dev = objective(new)
        halvings = 0
        while new_dev > dev + 1e-12 * abs(dev) and halvings < 30:
            new = (new + beta) / 2
            new_dev = objective(new)
            halvings += 1
        change = abs(dev - new_dev)
        beta, dev = new, new_dev
        if change < tol * (abs(dev) + 0.1):
            converged = True
            break
    model = LinearModel(beta, interactions, family="binomial", link="logit")
    model.converged = converged
    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iter} iterations", NonConvergence, stacklevel=2)
    return model


def _stratified_fit(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, family: str) -> StratifiedModel:
    values_per_col = [np.unique(X[:, j]) for j in range(X.shape[1])]
    radices = []
    r = 1
    for vals in values_per_col:
        radices.append(r)
        r *= len(vals)
        if r > 2**62:
            raise DomainError("too many distinct predictor values for a stratified fit")
    code, _ = _encode(X, values_per_col, radices)
    codes, inverse = np.unique(code, return_inverse=True)
    if len(codes) > spec.max_strata:
        raise DomainError(
            f"SaturatedStratified saw {len(codes)} joint strata (limit {spec.max_strata}); predictors must be discrete"
        )
    counts = np.bincount(inverse)
    sums = np.bincount(inverse, weights=y)
    if spec.fallback == "glm" and X.shape[1] > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", (NonConvergence, SingularDesign))
            if family == "binomial":
                fallback = irls_logistic(X, y, lam=1e-6, max_iter=spec.max_iter, tol=spec.tol)
            else:
                fallback = ridge_fit(X, y, lam=1e-8)
    else:
        fallback = InterceptModel(y.mean(), "gaussian")
    if spec.pseudo_count > 0:
        _, first = np.unique(inverse, return_index=True)
        prior = np.asarray(fallback(X[first]), dtype=float)
        means = (sums + spec.pseudo_count * prior) / (counts + spec.pseudo_count)
    else:
        means = sums / counts
    return StratifiedModel(values_per_col, np.array(radices, dtype=np.int64), codes, means, fallback, family)


def fit_regression(spec: LearnerSpec, X, y, family: str = "gaussian") -> Callable:
    """Fit E[y | X] and return a prediction function x -> real."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise DomainError(f"design has {X.shape[0]} rows but response has {y.shape[0]}")
    if family not in ("gaussian", "binomial"):
        raise DomainError(f"unknown family {family!r}")
    if family == "binomial" and (y.min() < 0 or y.max() > 1):
        raise DomainError("binomial responses must lie in [0, 1]")

    kind = spec.kind
    if kind is LearnerKind.HISTOGRAM:
        kind = spec.base
    if kind is LearnerKind.INTERCEPT or X.shape[1] == 0:
        return InterceptModel(y.mean(), family)
    if kind is LearnerKind.SATURATED:
        return _stratified_fit(spec, X, y, family)
    if kind is LearnerKind.LOGISTIC and family == "binomial":
        return irls_logistic(X, y, spec.ridge, spec.max_iter, spec.tol, spec.interactions)
    model = ridge_fit(X, y, spec.ridge, spec.interactions)
    if family == "binomial":
        model.family = "binomial"
    return model


# =============================================================================
# Conditional densities
# =============================================================================


class HistogramDensity:
    """Piecewise-constant conditional density of a continuous variable.

    Equal-width bins over the training range; bin probabilities come from
    one-vs-rest binomial fits normalized to sum to one for each row.
    """

    def __init__(self, edges: np.ndarray, bin_models):
        self.edges = edges
        self.widths = np.diff(edges)
        self.bin_models = bin_models

    def bin_probabilities(self, X) -> np.ndarray:
        X = _as_matrix(X)
        probs = np.column_stack([mdl(X) for mdl in self.bin_models])
        return probs / probs.sum(axis=1, keepdims=True)

    def __call__(self, a, X):
        X = _as_matrix(X)
        a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],))
        k = np.searchsorted(self.edges, a, side="right") - 1
        k = np.where(a == self.edges[-1], len(self.widths) - 1, k)
        inside = (k >= 0) & (k < len(self.widths))
        out = np.zeros(X.shape[0])
        if inside.any():
            p = self.bin_probabilities(X[inside])
            kk = k[inside]
            out[inside] = p[np.arange(len(kk)), kk] / self.widths[kk]
        return out


def fit_histogram_density(spec: LearnerSpec, X, a) -> HistogramDensity:
    X = _as_matrix(X)
    a = np.asarray(a, dtype=float)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        raise DomainError("continuous exposure is constant; cannot fit a density")
    edges = np.linspace(lo, hi, spec.bins + 1)
    k = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, spec.bins - 1)
    base = spec if spec.kind is not LearnerKind.HISTOGRAM else LearnerSpec(
        spec.base, ridge=spec.ridge, max_iter=spec.max_iter, tol=spec.tol,
        interactions=spec.interactions, max_strata=spec.max_strata, fallback=spec.fallback,
    )
    models = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        for j in range(spec.bins):
            models.append(fit_regression(base, X, (k == j).astype(float), "binomial"))
    return HistogramDensity(edges, models)


class BinaryMass:
    """Mass function a -> P(A = a | X) for a binary variable."""

    def __init__(self, p1: Callable):
        self.p1 = p1

    def __call__(self, a, X):
        X = _as_matrix(X)
        a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],))
        p = self.p1(X)
        return np.where(a == 1.0, p, np.where(a == 0.0, 1.0 - p, 0.0))


class CategoricalMass:
    """Mass function a -> P(A = a | X) on a finite set of levels.

    Level probabilities come from one-vs-rest binomial fits normalized to sum
    to one for each row; values off the levels get mass 0.
    """

    def __init__(self, levels: np.ndarray, level_models):
        self.levels = levels
        self.level_models = level_models

    def level_probabilities(self, X) -> np.ndarray:
        X = _as_matrix(X)
        probs = np.column_stack([mdl(X) for mdl in self.level_models])
        return probs / np.maximum(probs.sum(axis=1, keepdims=True), PROB_CLIP)

    def __call__(self, a, X):
        X = _as_matrix(X)
        a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],))
        k = np.minimum(np.searchsorted(self.levels, a), len(self.levels) - 1)
        hit = self.levels[k] == a
        out = np.zeros(X.shape[0])
        if hit.any():
            p = self.level_probabilities(X[hit])
            out[hit] = p[np.arange(int(hit.sum())), k[hit]]
        return out


def fit_categorical_mass(spec: LearnerSpec, X, a, levels) -> CategoricalMass:
    X = _as_matrix(X)
    a = np.asarray(a, dtype=float)
    levels = np.unique(np.asarray(levels, dtype=float))
    base = spec if spec.kind is not LearnerKind.HISTOGRAM else replace(spec, kind=spec.base)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        models = [fit_regression(base, X, (a == v).astype(float), "binomial") for v in levels]
    return CategoricalMass(levels, models)


def fit_exposure_mechanism(spec: LearnerSpec, W, A, kind: ExposureKind, levels=None) -> Callable:
    """Fit g(a | w).

    A binomial mass for binary A, a categorical mass when ``levels`` lists
    the finite support of A, and a histogram density otherwise. The returned
    callable has signature ``g(a, W)``.
    """
    kind = ExposureKind(kind)
    if kind is ExposureKind.BINARY:
        return BinaryMass(fit_regression(spec, W, A, "binomial"))
    if levels is not None:
        return fit_categorical_mass(spec, W, A, levels)
    return fit_histogram_density(spec, W, A)


def outcome_family(Y) -> str:
    return "binomial" if np.isin(np.asarray(Y), (0.0, 1.0)).all() else "gaussian"


def fit_outcome_regression(spec: LearnerSpec, data: ObservedDataset) -> Callable:
    """Fit m(a, z, w) = E[Y | A, Z, W]; with no mediators this is b(a, w)."""
    X = np.column_stack([data.A, data.Z, data.W])
    reg = fit_regression(spec, X, data.Y, outcome_family(data.Y))

    def m(a, Z, W):
        a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
        return reg(np.column_stack([a, Z, W]))

    return m


def fit_mediator_exposure(spec: LearnerSpec, data: ObservedDataset, levels=None) -> Callable:
    """Fit e(a | z, w), the exposure law given mediators and covariates."""
    mech = fit_exposure_mechanism(spec, np.column_stack([data.Z, data.W]), data.A, data.exposure_kind, levels)

    def e(a, Z, W):
        return mech(a, np.column_stack([Z, W]))

    return e


def gw_as_e(g: Callable) -> Callable:
    """View g(a | w) as e(a | z, w) for the empty-mediator reduction."""

    def e(a, Z, W):
        return g(a, W)

    e.is_g = True
    return e


# =============================================================================
# Auxiliary regression phi
# =============================================================================


def fit_phi(
    fits: NuisanceFits,
    data: ObservedDataset,
    spec: LearnerSpec,
    intervention: InterventionSpec,
    policy: Optional[ShiftPolicyEval] = None,
    parameterization: str = "stabilized",
    support_points=None,
    floor: float = TRUNCATION_FLOOR,
) -> Callable:
    """Regress the pseudo-outcome that defines phi and return the fit.

    Incremental propensity: m(1, Z, W) - m(0, Z, W) on W, giving phi(W).
    Tilt: {g(A|W) / e(A|Z,W)} m(A, Z, W) on (A, W). Shift policy: the same
    with m evaluated at the shifted exposure d(A, W).

    ``parameterization`` selects how the inner expectation is formed:

    * ``"stabilized"`` (default) keeps g inside the regression as above.
    * ``"unstabilized"`` regresses m / e on (A, W) and multiplies by g.
    * ``"marginal"`` integrates m over the law of Z given W directly, by
      regressing m(d(a, W), Z, W) on W for every exposure value ``a`` in
      ``support_points`` (finite supports only). It does not use g or e.
    """
    W, A, Z = data.W, data.A, data.Z
    if intervention.kind is InterventionKind.INCREMENTAL_PROPENSITY:
        n = data.n
        pseudo = fits.m(np.ones(n), Z, W) - fits.m(np.zeros(n), Z, W)
        reg = fit_regression(spec, W, pseudo, "gaussian")
        return lambda W_: reg(W_)

    if intervention.kind is InterventionKind.SHIFT_POLICY and policy is None:
        raise DomainError("shift policies need resolved support bounds")

    def target_exposure(a, W_):
        if intervention.kind is InterventionKind.SHIFT_POLICY:
            return policy.d(a, W_)
        return a

    if parameterization == "marginal":
        if support_points is None:
            raise DomainError("the marginal parameterization needs a finite exposure support")
        pts = np.asarray(support_points, dtype=float)
        regs = [
            fit_regression(spec, W, fits.m(target_exposure(np.full(data.n, a), W), Z, W), "gaussian")
            for a in pts
        ]

        def phi(a, W_):
            a = np.broadcast_to(np.asarray(a, dtype=float), (W_.shape[0],))
            out = np.zeros(W_.shape[0])
            for p, reg in zip(pts, regs):
                hit = a == p
                if hit.any():
                    out[hit] = reg(W_[hit])
            return out

        return phi

    m_target = fits.m(target_exposure(A, W), Z, W)
    g_obs = fits.g(A, W)
    if getattr(fits.e, "is_g", False) or Z.shape[1] == 0:
        e_obs = g_obs
        ratio = np.ones(data.n)
    else:
        e_raw = fits.e(A, Z, W)
        with np.errstate(divide="ignore"):
            extreme = np.any(g_obs / e_raw > 1.0 / floor)
        e_obs = np.maximum(e_raw, floor)
        ratio = g_obs / e_obs
    if Z.shape[1] > 0 and not getattr(fits.e, "is_g", False) and extreme:
        warnings.warn("g/e ratio exceeds 1/floor in the phi pseudo-outcome", ExtremeWeight, stacklevel=2)

    X = np.column_stack([A, W])
    if parameterization == "stabilized":
        reg = fit_regression(spec, X, ratio * m_target, "gaussian")

        def phi(a, W_):
            a = np.broadcast_to(np.asarray(a, dtype=float), (W_.shape[0],))
            return reg(np.column_stack([a, W_]))

        return phi

    if parameterization != "unstabilized":
        raise DomainError(f"unknown phi parameterization {parameterization!r}")
    reg = fit_regression(spec, X, m_target / np.maximum(e_obs, floor), "gaussian")

    def phi(a, W_):
        a = np.broadcast_to(np.asarray(a, dtype=float), (W_.shape[0],))
        return fits.g(a, W_) * reg(np.column_stack([a, W_]))

    return phi
