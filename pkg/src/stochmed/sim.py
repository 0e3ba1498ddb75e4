"""Discrete data-generating processes, exact enumeration oracles and the replication harness.

The benchmark DGP has three binary covariates, a binary exposure, three
binary mediators and a linear outcome with Gaussian noise:

    W1 ~ Bern(0.50), W2 ~ Bern(0.65), W3 ~ Bern(0.35)
    A  ~ Bern(0.25 (W1 + W2 + W3) + 0.1)
    Z1 ~ Bern(1 - expit((A + W1) / (A + W1 + 0.5)))
    Z2 ~ Bern(expit(((A - 1) + W2) / (W3 + 3)))
    Z3 ~ Bern(expit(((A - 1) + 2 W1 - 1) / (2 W1 + 0.5)))
    Y  = Z1 + Z2 - Z3 + A - 0.1 (W1 + W2 + W3)^2 + N(0, 0.25)

Because (W, A, Z) has 128 atoms and E[Y | A, Z, W] is known, every target
parameter is computed exactly by summation.
"""

from __future__ import annotations

import itertools
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from stochmed.exceptions import DomainError, UnsupportedForContinuous
from stochmed.interventions import ExposureSupport
from stochmed.model import (
    ExposureKind,
    InterventionKind,
    InterventionSpec,
    NuisanceFits,
    ObservedDataset,
)

W_PROBS = (0.50, 0.65, 0.35)
NOISE_SD = 0.5  # N(0, 0.25) noise has variance 0.25


# =============================================================================
# Finite laws
# =============================================================================


def _row_index(points: np.ndarray) -> Dict[tuple, int]:
    return {tuple(np.asarray(p, dtype=float)): i for i, p in enumerate(points)}


@dataclass
class DiscreteLaw:
    """A law of (W, A, Z) on finitely many atoms with known E[Y | A, Z, W].

    Tables are indexed ``[w, a, z]`` over ``w_points``, ``a_points`` and
    ``z_points``. ``noise_var`` is Var(Y | A, Z, W), taken constant.
    """

    w_points: np.ndarray
    w_probs: np.ndarray
    a_points: np.ndarray
    g_table: np.ndarray   # P(A = a | W = w), shape (Kw, Ka)
    z_points: np.ndarray
    q_table: np.ndarray   # P(Z = z | A = a, W = w), shape (Kw, Ka, Kz)
    m_table: np.ndarray   # E[Y | A = a, Z = z, W = w], shape (Kw, Ka, Kz)
    noise_var: float = 0.0
    lower: Optional[float] = None  # shift-policy support bound

    def __post_init__(self):
        self.w_points = np.asarray(self.w_points, dtype=float).reshape(len(self.w_probs), -1)
        self.z_points = np.asarray(self.z_points, dtype=float).reshape(self.q_table.shape[2], -1)
        self.a_points = np.asarray(self.a_points, dtype=float)
        self._w_idx = _row_index(self.w_points)
        self._z_idx = _row_index(self.z_points)

    # ------------------------------------------------------------------ joint

    @property
    def joint(self) -> np.ndarray:
        return self.w_probs[:, None, None] * self.g_table[:, :, None] * self.q_table

    @property
    def r_table(self) -> np.ndarray:
        """P(Z = z | W = w), shape (Kw, Kz)."""
        return np.einsum("wa,waz->wz", self.g_table, self.q_table)

    @property
    def e_table(self) -> np.ndarray:
        """P(A = a | Z = z, W = w), shape (Kw, Ka, Kz)."""
        j = self.joint
        tot = j.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, j / tot, 0.0)

    @property
    def y_mean(self) -> float:
        return float((self.joint * self.m_table).sum())

    @property
    def exposure_kind(self) -> ExposureKind:
        return ExposureKind.BINARY if set(self.a_points) <= {0.0, 1.0} else ExposureKind.CONTINUOUS

    @property
    def support(self) -> ExposureSupport:
        if self.exposure_kind is ExposureKind.BINARY and len(self.a_points) == 2:
            return ExposureSupport.binary()
        return ExposureSupport.discrete(self.a_points)

    # ---------------------------------------------------------- interventions

    def policy_target(self, delta: float) -> np.ndarray:
        """Index of d(a) for each support point under the two-piece shift."""
        l = self.a_points.min() if self.lower is None else self.lower
        target = np.where(self.a_points > l + delta, self.a_points - delta, self.a_points)
        idx = np.searchsorted(self.a_points, target)
        if np.any(idx >= len(self.a_points)) or not np.allclose(self.a_points[idx], target):
            raise DomainError("shift does not map the support into itself")
        return idx

    def gdelta_table(self, iv: InterventionSpec, g_table: Optional[np.ndarray] = None) -> np.ndarray:
        g = self.g_table if g_table is None else g_table
        if iv.kind is InterventionKind.INCREMENTAL_PROPENSITY:
            i1 = int(np.flatnonzero(self.a_points == 1.0)[0])
            p1 = g[:, i1]
            pd_ = iv.delta * p1 / (iv.delta * p1 + 1 - p1)
            out = np.empty_like(g)
            out[:, i1] = pd_
            out[:, 1 - i1] = 1 - pd_
            return out
        if iv.kind is InterventionKind.EXPONENTIAL_TILT:
            t = np.exp(iv.delta * self.a_points)[None, :] * g
            return t / t.sum(axis=1, keepdims=True)
        target = self.policy_target(iv.delta)
        out = np.zeros_like(g)
        for k, t in enumerate(target):
            out[:, t] += g[:, k]
        return out

    def tilt_normalizer(self, delta: float, g_table: Optional[np.ndarray] = None) -> np.ndarray:
        g = self.g_table if g_table is None else g_table
        return 1.0 / (np.exp(delta * self.a_points)[None, :] * g).sum(axis=1)

    # ------------------------------------------------------------- parameters

    def theta(self, iv: InterventionSpec) -> float:
        """Mean outcome when A follows g_delta and Z keeps its natural law given W."""
        gd = self.gdelta_table(iv)
        inner = np.einsum("waz,wa->wz", self.m_table, gd)
        return float(np.einsum("w,wz,wz->", self.w_probs, self.r_table, inner))

    def psi(self, iv: InterventionSpec) -> float:
        """Mean outcome when A follows g_delta and Z responds to it."""
        gd = self.gdelta_table(iv)
        b = np.einsum("waz,waz->wa", self.q_table, self.m_table)
        return float(np.einsum("w,wa,wa->", self.w_probs, gd, b))

    def phi_table(self, iv: InterventionSpec, m_table: Optional[np.ndarray] = None) -> np.ndarray:
        """Exact phi: shape (Kw,) for ips, (Kw, Ka) otherwise."""
        m = self.m_table if m_table is None else m_table
        r = self.r_table
        if iv.kind is InterventionKind.INCREMENTAL_PROPENSITY:
            i1 = int(np.flatnonzero(self.a_points == 1.0)[0])
            return np.einsum("wz,wz->w", m[:, i1, :] - m[:, 1 - i1, :], r)
        if iv.kind is InterventionKind.SHIFT_POLICY:
            m = m[:, self.policy_target(iv.delta), :]
        return np.einsum("waz,wz->wa", m, r)

    # --------------------------------------------------------------- lookups

    def _w(self, W) -> np.ndarray:
        return np.array([self._w_idx[tuple(row)] for row in np.asarray(W, dtype=float)], dtype=int)

    def _z(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape[1] == 0:
            return np.zeros(Z.shape[0], dtype=int)
        return np.array([self._z_idx[tuple(row)] for row in Z], dtype=int)

    def _a(self, a) -> Tuple[np.ndarray, np.ndarray]:
        a = np.asarray(a, dtype=float)
        idx = np.minimum(np.searchsorted(self.a_points, a), len(self.a_points) - 1)
        return idx, self.a_points[idx] == a

    def fits(
        self,
        iv: InterventionSpec,
        g_table: Optional[np.ndarray] = None,
        e_table: Optional[np.ndarray] = None,
        m_table: Optional[np.ndarray] = None,
        phi_table: Optional[np.ndarray] = None,
    ) -> NuisanceFits:
        """Nuisance callables built from tables; any table may be replaced.

        Omitted tables are the truth. ``phi_table`` defaults to the exact phi
        of the (possibly replaced) outcome table under the true law of Z | W.
        """
        g_t = self.g_table if g_table is None else np.asarray(g_table, dtype=float)
        e_t = self.e_table if e_table is None else np.asarray(e_table, dtype=float)
        m_t = self.m_table if m_table is None else np.asarray(m_table, dtype=float)
        phi_t = self.phi_table(iv, m_t) if phi_table is None else np.asarray(phi_table, dtype=float)
        gd_t = self.gdelta_table(iv, g_t)

        def table_wa(table):
            def fn(a, W):
                ia, ok = self._a(np.broadcast_to(a, (len(W),)))
                return np.where(ok, table[self._w(W), ia], 0.0)
            return fn

        def table_waz(table):
            def fn(a, Z, W):
                ia, ok = self._a(np.broadcast_to(a, (len(W),)))
                return np.where(ok, table[self._w(W), ia, self._z(Z)], 0.0)
            return fn

        if iv.kind is InterventionKind.INCREMENTAL_PROPENSITY:
            def phi(W):
                return phi_t[self._w(W)]
        else:
            phi = table_wa(phi_t)

        c = None
        if iv.kind is InterventionKind.EXPONENTIAL_TILT:
            c_t = self.tilt_normalizer(iv.delta, g_t)

            def c(W):
                return c_t[self._w(W)]

        return NuisanceFits(
            g=table_wa(g_t), g_delta=table_wa(gd_t), m=table_waz(m_t), e=table_waz(e_t), phi=phi, c=c
        )

    def atoms(self) -> Tuple[ObservedDataset, np.ndarray]:
        """Every positive-probability atom as a row with Y = E[Y | A, Z, W], plus its probability.

        The EIF is linear in y, so its expectation equals the probability
        weighted sum over these rows.
        """
        j = self.joint
        rows_w, rows_a, rows_z, probs, ys = [], [], [], [], []
        for iw, ia, iz in zip(*np.nonzero(j > 0)):
            rows_w.append(self.w_points[iw])
            rows_a.append(self.a_points[ia])
            rows_z.append(self.z_points[iz])
            probs.append(j[iw, ia, iz])
            ys.append(self.m_table[iw, ia, iz])
        data = ObservedDataset(
            W=np.array(rows_w), A=np.array(rows_a), Z=np.array(rows_z).reshape(len(rows_a), -1),
            Y=np.array(ys), exposure_kind=self.exposure_kind,
        )
        return data, np.array(probs)

    def sample(self, n: int, seed=None) -> ObservedDataset:
        """Draw n observations; Y adds N(0, noise_var) to the conditional mean."""
        rng = np.random.default_rng(seed)
        j = self.joint
        flat = rng.choice(j.size, size=n, p=j.ravel() / j.sum())
        iw, ia, iz = np.unravel_index(flat, j.shape)
        y = self.m_table[iw, ia, iz] + rng.normal(0.0, math.sqrt(self.noise_var), n)
        return ObservedDataset(
            W=self.w_points[iw], A=self.a_points[ia], Z=self.z_points[iz], Y=y, exposure_kind=self.exposure_kind,
        )

    def perturbed_fits(self, iv: InterventionSpec, eps: float, seed=0) -> NuisanceFits:
        """Fits whose g, e, m and phi each differ from the truth by O(eps).

        Conditional laws are tilted multiplicatively by exp(eps * noise) and
        renormalized; m and phi get additive eps * noise. The same seed gives
        the same directions for every eps.
        """
        rng = np.random.default_rng(seed)
        u = rng.normal(size=self.g_table.shape)
        v = rng.normal(size=self.e_table.shape)
        k = rng.normal(size=self.m_table.shape)
        s = rng.normal(size=self.phi_table(iv).shape)
        g1 = self.g_table * np.exp(eps * u)
        g1 /= g1.sum(axis=1, keepdims=True)
        e1 = self.e_table * np.exp(eps * v)
        e1 /= e1.sum(axis=1, keepdims=True)
        m1 = self.m_table + eps * k
        return self.fits(iv, g_table=g1, e_table=e1, m_table=m1, phi_table=self.phi_table(iv, m1) + eps * s)

    def marginalize_mediators(self) -> "DiscreteLaw":
        """The law of (W, A) with E[Y | A, W]: the total-effect reduction."""
        b = np.einsum("waz,waz->wa", self.q_table, self.m_table)
        return DiscreteLaw(
            w_points=self.w_points, w_probs=self.w_probs, a_points=self.a_points, g_table=self.g_table,
            z_points=np.zeros((1, 0)), q_table=np.ones(self.g_table.shape + (1,)), m_table=b[:, :, None],
            noise_var=self.noise_var, lower=self.lower,
        )

    def efficiency_bound(self, iv: InterventionSpec, target: str = "direct") -> float:
        """Variance of the influence function of the direct effect (or theta)."""
        gd = self.gdelta_table(iv)
        e = self.e_table
        m = self.m_table
        j = self.joint
        dzw = np.einsum("wbz,wb->wz", m, gd)[:, None, :]
        phi = self.phi_table(iv)
        if iv.kind is InterventionKind.INCREMENTAL_PROPENSITY:
            i1 = int(np.flatnonzero(self.a_points == 1.0)[0])
            p1 = self.g_table[:, i1]
            a = self.a_points[None, :]
            da = iv.delta * phi[:, None] * (a - p1[:, None]) / (iv.delta * p1[:, None] + 1 - p1[:, None]) ** 2
        elif iv.kind is InterventionKind.EXPONENTIAL_TILT:
            centre = (phi * gd).sum(axis=1, keepdims=True)
            da = gd / self.g_table * (phi - centre)
        else:
            da = phi - (phi * self.g_table).sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(e > 0, gd[:, :, None] / e, 0.0)
        mean_part = da[:, :, None] + dzw
        coef = w
        if target == "direct":
            mean_part = mean_part - m
            coef = w - 1.0
        mu = (j * mean_part).sum()
        return float((j * (mean_part - mu) ** 2).sum() + self.noise_var * (j * coef**2).sum())


def _binary_grid(k: int) -> np.ndarray:
    return np.array(list(itertools.product([0.0, 1.0], repeat=k)))


def _dgp5_mediator_probs(a, w1, w2, w3):
    p1 = 1.0 - expit((a + w1) / (a + w1 + 0.5))
    p2 = expit(((a - 1.0) + w2) / (w3 + 3.0))
    p3 = expit(((a - 1.0) + 2.0 * w1 - 1.0) / (2.0 * w1 + 0.5))
    return p1, p2, p3


def _build_dgp5_law(direct_path: bool) -> DiscreteLaw:
    w_pts = _binary_grid(3)
    w_probs = np.prod(np.where(w_pts == 1.0, W_PROBS, 1.0 - np.array(W_PROBS)), axis=1)
    a_pts = np.array([0.0, 1.0])
    g1 = 0.25 * w_pts.sum(axis=1) + 0.1
    g_table = np.column_stack([1.0 - g1, g1])
    z_pts = _binary_grid(3)
    q = np.empty((8, 2, 8))
    m = np.empty((8, 2, 8))
    for iw, w in enumerate(w_pts):
        s = w.sum()
        for ia, a in enumerate(a_pts):
            ps = np.array(_dgp5_mediator_probs(a, *w))
            q[iw, ia] = np.prod(np.where(z_pts == 1.0, ps, 1.0 - ps), axis=1)
            m[iw, ia] = z_pts[:, 0] + z_pts[:, 1] - z_pts[:, 2] + (a if direct_path else 0.0) - 0.1 * s**2
    return DiscreteLaw(w_pts, w_probs, a_pts, g_table, z_pts, q, m, noise_var=NOISE_SD**2)


def dgp5_law() -> DiscreteLaw:
    """Exact law of the benchmark DGP."""
    return _build_dgp5_law(direct_path=True)


def null_law() -> DiscreteLaw:
    """Benchmark DGP without the A term in Y, so the direct effect is zero for every delta."""
    return _build_dgp5_law(direct_path=False)


# =============================================================================
# Sampling
# =============================================================================


def generate(n: int, seed=None, direct_path: bool = True) -> ObservedDataset:
    """Draw n i.i.d. observations from the benchmark DGP.

    ``direct_path=False`` drops the A term from Y (null DGP).
    """
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    W = (rng.random((n, 3)) < np.array(W_PROBS)).astype(float)
    A = (rng.random(n) < 0.25 * W.sum(axis=1) + 0.1).astype(float)
    ps = np.column_stack(_dgp5_mediator_probs(A, W[:, 0], W[:, 1], W[:, 2]))
    Z = (rng.random((n, 3)) < ps).astype(float)
    Y = Z[:, 0] + Z[:, 1] - Z[:, 2] - 0.1 * W.sum(axis=1) ** 2 + rng.normal(0.0, NOISE_SD, n)
    if direct_path:
        Y = Y + A
    return ObservedDataset(
        W=W, A=A, Z=Z, Y=Y, exposure_kind=ExposureKind.BINARY,
        w_names=("W1", "W2", "W3"), z_names=("Z1", "Z2", "Z3"), a_name="A", y_name="Y",
    )


def generate_null(n: int, seed=None) -> ObservedDataset:
    return generate(n, seed, direct_path=False)


# =============================================================================
# Oracle truth
# =============================================================================


@dataclass(frozen=True)
class OracleTruth:
    theta: float
    psi: float
    y_mean: float

    @property
    def direct(self) -> float:
        return self.theta - self.y_mean

    @property
    def indirect(self) -> float:
        return self.psi - self.theta

    @property
    def total(self) -> float:
        return self.psi - self.y_mean

    def to_dict(self) -> dict:
        return {
            "theta": self.theta, "psi": self.psi, "y_mean": self.y_mean,
            "direct": self.direct, "indirect": self.indirect, "total": self.total,
        }


def _check_oracle_intervention(intervention: InterventionSpec) -> None:
    if intervention.kind is InterventionKind.SHIFT_POLICY:
        raise UnsupportedForContinuous("the benchmark DGP has a binary exposure; shift policies do not apply")


def oracle_truth(intervention: InterventionSpec, law: Optional[DiscreteLaw] = None) -> OracleTruth:
    """Exact parameters by summing over all 128 atoms of (W, A, Z)."""
    _check_oracle_intervention(intervention)
    law = law or dgp5_law()
    return OracleTruth(theta=law.theta(intervention), psi=law.psi(intervention), y_mean=law.y_mean)


def oracle_truth_reduced(intervention: InterventionSpec) -> OracleTruth:
    """Closed form over the 8 covariate strata.

    Y depends on A only through the additive +A term, so the direct effect is
    E[g_delta(1 | W) - g(1 | W)]; the mediator means enter through b(a, w).
    """
    _check_oracle_intervention(intervention)
    theta = psi = ey = 0.0
    for w in itertools.product([0.0, 1.0], repeat=3):
        pw = math.prod(p if wi else 1.0 - p for p, wi in zip(W_PROBS, w))
        s = sum(w)
        g1 = 0.25 * s + 0.1
        if intervention.kind is InterventionKind.INCREMENTAL_PROPENSITY:
            gd1 = intervention.delta * g1 / (intervention.delta * g1 + 1.0 - g1)
        else:
            t = math.exp(intervention.delta)
            gd1 = t * g1 / (t * g1 + 1.0 - g1)

        def b(a):
            p1, p2, p3 = _dgp5_mediator_probs(a, *w)
            return p1 + p2 - p3 + a - 0.1 * s**2

        b0, b1 = b(0.0), b(1.0)
        ey_w = g1 * b1 + (1.0 - g1) * b0
        ey += pw * ey_w
        theta += pw * (ey_w + gd1 - g1)
        psi += pw * (gd1 * b1 + (1.0 - gd1) * b0)
    return OracleTruth(theta=float(theta), psi=float(psi), y_mean=float(ey))


# =============================================================================
# Small laws for robustness checks
# =============================================================================


def mtp_toy_law() -> DiscreteLaw:
    """Binary W, exposure on {0, 1, 2, 3}, one binary mediator; shift policies map the support into itself."""
    w_pts = np.array([[0.0], [1.0]])
    w_probs = np.array([0.4, 0.6])
    a_pts = np.arange(4.0)
    g_table = np.array([[0.4, 0.3, 0.2, 0.1], [0.15, 0.25, 0.3, 0.3]])
    z_pts = np.array([[0.0], [1.0]])
    q = np.empty((2, 4, 2))
    m = np.empty((2, 4, 2))
    for iw, w in enumerate(w_pts[:, 0]):
        for ia, a in enumerate(a_pts):
            p = expit(-1.0 + 0.5 * a + 0.7 * w)
            q[iw, ia] = [1.0 - p, p]
            for iz, z in enumerate(z_pts[:, 0]):
                m[iw, ia, iz] = 1.0 + a + 2.0 * z + 0.5 * a * z - w + 0.3 * w * a
    return DiscreteLaw(w_pts, w_probs, a_pts, g_table, z_pts, q, m, noise_var=1.0, lower=0.0)


def no_indirect_toy_law() -> DiscreteLaw:
    """Binary exposure with Z independent of A given W and additive m: the indirect effect is zero."""
    w_pts = np.array([[0.0], [1.0]])
    w_probs = np.array([0.55, 0.45])
    a_pts = np.array([0.0, 1.0])
    g_table = np.array([[0.7, 0.3], [0.4, 0.6]])
    z_pts = np.array([[0.0], [1.0]])
    q = np.empty((2, 2, 2))
    m = np.empty((2, 2, 2))
    for iw, w in enumerate(w_pts[:, 0]):
        pz = 0.3 + 0.4 * w
        for ia, a in enumerate(a_pts):
            q[iw, ia] = [1.0 - pz, pz]
            m[iw, ia] = [0.5 + 1.2 * a + w, 0.5 + 1.2 * a + w + 0.8]
    return DiscreteLaw(w_pts, w_probs, a_pts, g_table, z_pts, q, m, noise_var=1.0)


# =============================================================================
# Replication harness
# =============================================================================

_NUISANCES = ("G", "E", "M", "PHI")


@dataclass(frozen=True)
class MisspecToggle:
    """Nuisances replaced by intercept-only fits."""

    which: Tuple[str, ...] = ()

    def __post_init__(self):
        which = tuple(sorted({str(w).upper() for w in self.which}))
        for w in which:
            if w not in _NUISANCES:
                raise DomainError(f"unknown nuisance {w!r}; choose from G, E, M, Phi")
        object.__setattr__(self, "which", which)

    @classmethod
    def parse(cls, value) -> "MisspecToggle":
        if isinstance(value, cls):
            return value
        if value is None or str(value).lower() in ("", "none"):
            return cls()
        if isinstance(value, str):
            return cls(tuple(v for v in value.replace("+", ",").split(",") if v))
        return cls(tuple(value))

    @property
    def label(self) -> str:
        return "+".join(self.which) if self.which else "none"

    def learners(self, base=None):
        from stochmed.crossfit import NuisanceLearners

        base = base or NuisanceLearners()
        return base.misspecify(self.which) if self.which else base


#: Rows of the benchmark table: (estimator, misspecified nuisances).
TABLE1_ROWS: Tuple[Tuple[str, str], ...] = (
    ("sub", "none"), ("ipw", "none"), ("onestep", "none"),
    ("onestep", "E"), ("onestep", "M"), ("onestep", "G"),
)

SIM_COLUMNS = ["estimator", "toggle", "n", "reps", "failures", "target", "bias", "se", "mse", "n_mse"]


@dataclass
class SimResult:
    """Summary per (estimator, toggle, n), plus the raw replicate estimates."""

    table: pd.DataFrame
    estimates: Dict[Tuple[str, str, int], np.ndarray] = field(default_factory=dict)
    truth: float = math.nan
    config: Dict = field(default_factory=dict)

    def row(self, estimator: str, toggle: str = "none", n: Optional[int] = None) -> pd.DataFrame:
        t = self.table
        sel = (t["estimator"] == estimator) & (t["toggle"] == toggle)
        if n is not None:
            sel &= t["n"] == n
        return t[sel]

    def n_mse(self, estimator: str, toggle: str, n: int) -> float:
        return float(self.row(estimator, toggle, n)["n_mse"].iloc[0])

    def pivot(self, metric: str) -> pd.DataFrame:
        """One metric laid out as rows (estimator, toggle) by columns n, ready for plotting."""
        return self.table.pivot_table(index=["estimator", "toggle"], columns="n", values=metric, sort=False)

    def to_csv(self, path) -> None:
        self.table[SIM_COLUMNS].to_csv(path, index=False)

    def to_dict(self) -> dict:
        records = self.table[SIM_COLUMNS].to_dict(orient="records")
        for r in records:
            for k, v in r.items():
                if isinstance(v, (np.floating, float)):
                    r[k] = None if not np.isfinite(v) else float(v)
                elif isinstance(v, np.integer):
                    r[k] = int(v)
        return {"truth": self.truth, "rows": records, "config": self.config}


def summarize(estimates: np.ndarray, truth: float, n: int) -> Dict[str, float]:
    """Bias, spread (ddof 0) and MSE of finite replicate estimates, so MSE = bias^2 + se^2."""
    est = np.asarray(estimates, dtype=float)
    est = est[np.isfinite(est)]
    if est.size == 0:
        return {"bias": math.nan, "se": math.nan, "mse": math.nan, "n_mse": math.nan}
    bias = float(est.mean() - truth)
    se = float(est.std())
    mse = float(np.mean((est - truth) ** 2))
    return {"bias": bias, "se": se, "mse": mse, "n_mse": n * mse}


def replicate_seed(seed: int, n: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(n), int(rep)])


def _fold_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def _direct_estimate(data: ObservedDataset, iv: InterventionSpec, kind: str, learners, fold_seed: int) -> float:
    from stochmed.crossfit import make_folds
    from stochmed.estimators import EstimatorKind, _functional_path

    plan = make_folds(data.n, 5, fold_seed)
    path = _functional_path(data, iv, [iv.delta], EstimatorKind.parse(kind), learners, plan, None, "stabilized")
    return float(path.estimates[0] - np.mean(data.Y))


def _table1_replicate(args) -> List[float]:
    n, rep, seed, rows, delta = args
    ss = replicate_seed(seed, n, rep)
    data_ss, fold_ss = ss.spawn(2)
    data = generate(n, data_ss)
    fseed = _fold_seed(fold_ss)
    iv = InterventionSpec.ips(delta)
    out = []
    for est, tog in rows:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out.append(_direct_estimate(data, iv, est, MisspecToggle.parse(tog).learners(), fseed))
        except Exception:  # failed replicate is recorded and excluded
            out.append(math.nan)
    return out


def _map(fn, jobs: list, threads: int):
    if threads == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor
    import os

    workers = os.cpu_count() if threads in (0, None) else threads
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_table1(
    ns: Sequence[int] = (400, 1600, 6400),
    reps: int = 300,
    estimators: Optional[Sequence[str]] = None,
    toggles: Optional[Sequence[str]] = None,
    seed: int = 0,
    delta: float = 0.5,
    threads: int = 1,
) -> SimResult:
    """Monte Carlo bias, spread and n MSE of direct-effect estimates on the benchmark DGP.

    With neither ``estimators`` nor ``toggles`` given, runs the benchmark
    rows (three well-specified estimators and the one-step estimator with G,
    E or M misspecified); otherwise every estimator is crossed with every
    toggle. Each replicate draws one dataset shared by all rows.
    """
    if reps < 1:
        raise DomainError("reps must be positive")
    if estimators is None and toggles is None:
        rows = list(TABLE1_ROWS)
    else:
        ests = list(estimators or ("sub", "ipw", "onestep"))
        togs = [MisspecToggle.parse(t).label for t in (toggles or ("none",))]
        rows = [(e, t) for e in ests for t in togs]
    rows = [(e, MisspecToggle.parse(t).label) for e, t in rows]
    truth = oracle_truth(InterventionSpec.ips(delta)).direct

    records, estimates = [], {}
    for n in ns:
        jobs = [(int(n), rep, seed, rows, delta) for rep in range(reps)]
        results = np.array(_map(_table1_replicate, jobs, threads), dtype=float).reshape(reps, len(rows))
        for k, (est, tog) in enumerate(rows):
            col = results[:, k]
            estimates[(est, tog, int(n))] = col
            records.append({
                "estimator": est, "toggle": tog, "n": int(n), "reps": int(np.isfinite(col).sum()),
                "failures": int((~np.isfinite(col)).sum()), "target": truth, **summarize(col, truth, n),
            })
    config = {"ns": [int(n) for n in ns], "reps": reps, "rows": [list(r) for r in rows], "seed": seed, "delta": delta}
    return SimResult(pd.DataFrame.from_records(records, columns=SIM_COLUMNS), estimates, truth, config)


def _coverage_replicate(args) -> Tuple[float, float, float]:
    from stochmed.estimators import decompose_effects
    from stochmed.crossfit import make_folds

    n, rep, seed, delta, alpha = args
    data_ss, fold_ss = replicate_seed(seed, n, rep).spawn(2)
    data = generate(n, data_ss)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = decompose_effects(data, InterventionSpec.ips(delta), "onestep",
                              plan=make_folds(n, 5, _fold_seed(fold_ss)), alpha=alpha)
    return r.direct[0], r.ci_lo[0], r.ci_hi[0]


def run_coverage(n: int = 2500, reps: int = 500, seed: int = 0, delta: float = 0.5,
                 alpha: float = 0.05, threads: int = 1) -> Dict[str, float]:
    """Share of Wald intervals for the direct effect that cover the oracle value."""
    truth = oracle_truth(InterventionSpec.ips(delta)).direct
    res = np.array(_map(_coverage_replicate, [(n, r, seed, delta, alpha) for r in range(reps)], threads))
    covered = (res[:, 1] <= truth) & (truth <= res[:, 2])
    return {"coverage": float(covered.mean()), "reps": reps, "n": n, "truth": truth,
            "mean_estimate": float(res[:, 0].mean()), "mean_width": float((res[:, 2] - res[:, 1]).mean())}


def _sup_replicate(args) -> float:
    from stochmed.crossfit import make_folds
    from stochmed.crossfit import NuisanceLearners
    from stochmed.estimators import EstimatorKind, _functional_path
    from stochmed.inference import UniformInferenceConfig, multiplier_bootstrap

    n, rep, seed, grid, n_boot, alpha, null = args
    data_ss, fold_ss, boot_ss = replicate_seed(seed, n, rep).spawn(3)
    data = generate(n, data_ss, direct_path=not null)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        path = _functional_path(data, InterventionSpec.ips(grid[0]), grid, EstimatorKind.ONESTEP,
                                NuisanceLearners(), make_folds(n, 5, _fold_seed(fold_ss)), None, "stabilized")
    s_direct = path.eif - data.Y[:, None]
    cfg = UniformInferenceConfig(tuple(grid), n_boot=n_boot, alpha=alpha, seed=_fold_seed(boot_ss))
    boot = multiplier_bootstrap(s_direct, path.estimates - data.Y.mean(), s_direct.std(axis=0), cfg)
    return boot.p_value


def run_sup_test(n: int = 1600, reps: int = 500, seed: int = 0, null: bool = True,
                 grid: Optional[Sequence[float]] = None, n_boot: int = 2000, alpha: float = 0.05,
                 threads: int = 1) -> Dict[str, float]:
    """Rejection rate of the sup test of no direct effect over a grid of odds multipliers.

    ``null=True`` draws from the DGP without the A term in Y, where the direct
    effect is zero for every multiplier.
    """
    from stochmed.inference import default_ips_grid

    grid = tuple(default_ips_grid() if grid is None else grid)
    jobs = [(n, r, seed, grid, n_boot, alpha, null) for r in range(reps)]
    p = np.array(_map(_sup_replicate, jobs, threads))
    return {"rejection_rate": float(np.mean(p < alpha)), "reps": reps, "n": n, "null": null, "p_values": p.tolist()}
