"""Efficient influence function contributions for the mediator-fixed intervention mean.

For an observation o = (w, a, z, y) the uncentered EIF is
D = D^Y + D^A + D^{Z,W}; its sample mean is the one-step estimate and
S = D - y is the influence value of the direct effect.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from stochmed.crossfit import CrossFit, FitContext
from stochmed.exceptions import QuadratureError, WeightOverflow
from stochmed.interventions import ExposureSupport
from stochmed.model import TRUNCATION_FLOOR, EifRecord, InterventionKind, InterventionSpec, NuisanceFits, ObservedDataset

#: Largest inverse-probability weight used before capping.
WEIGHT_CAP: float = 1e4

#: Allowed deviation of a quadrature mass from one before failing.
QUADRATURE_TOL: float = 0.05


def _cap(ratio: np.ndarray, cap: float, flags: Optional[list]) -> np.ndarray:
    over = ratio > cap
    if np.any(over):
        msg = f"{int(over.sum())} weights exceeded {cap:g} and were capped"
        warnings.warn(msg, WeightOverflow, stacklevel=3)
        if flags is not None:
            flags.append(msg)
        ratio = np.minimum(ratio, cap)
    return ratio


def eif_y(y, m_azw, gdelta_aw, e_azw, floor: float = TRUNCATION_FLOOR, cap: float = WEIGHT_CAP, flags=None):
    """Weighted outcome residual {g_delta(a|w) / e(a|z,w)} (y - m(a,z,w))."""
    ratio = np.asarray(gdelta_aw, dtype=float) / np.maximum(np.asarray(e_azw, dtype=float), floor)
    out = _cap(ratio, cap, flags) * (np.asarray(y, dtype=float) - np.asarray(m_azw, dtype=float))
    return float(out) if out.ndim == 0 else out


def _on_support(fn: Callable, support: ExposureSupport, *rows) -> np.ndarray:
    """Evaluate fn(a, *rows) at every support point: shape (n_points, n_rows)."""
    n = rows[-1].shape[0]
    return np.stack([fn(np.full(n, a), *rows) for a in support.points])


def _average(values: np.ndarray, dens: np.ndarray, support: ExposureSupport) -> np.ndarray:
    """Integral of values against dens over the support, per row."""
    num = support.integrate(values * dens)
    if support.is_continuous:
        mass = support.integrate(dens)
        if np.any(np.abs(mass - 1.0) > QUADRATURE_TOL):
            worst = float(np.abs(mass - 1.0).max())
            raise QuadratureError(f"quadrature mass deviates from 1 by {worst:.3g}")
        num = num / mass
    return num


def eif_zw(m: Callable, gdelta: Callable, Z, W, support: ExposureSupport) -> np.ndarray:
    """Integral of m(a, z, w) against g_delta(a | w) over the exposure support."""
    return _average(_on_support(m, support, Z, W), _on_support(gdelta, support, W), support)


def eif_a_mtp(phi: Callable, g: Callable, a, W, support: ExposureSupport) -> np.ndarray:
    """phi(a, w) minus its average under g(. | w); shift-policy exposure score."""
    centre = _average(_on_support(phi, support, W), _on_support(g, support, W), support)
    return phi(np.broadcast_to(a, (W.shape[0],)), W) - centre


def eif_a_tilt(
    phi: Callable,
    g: Callable,
    gdelta: Callable,
    a,
    W,
    support: ExposureSupport,
    floor: float = TRUNCATION_FLOOR,
    cap: float = WEIGHT_CAP,
    flags=None,
) -> np.ndarray:
    """{g_delta(a|w) / g(a|w)} {phi(a, w) - average of phi under g_delta}; tilt exposure score."""
    a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
    centre = _average(_on_support(phi, support, W), _on_support(gdelta, support, W), support)
    ratio = _cap(gdelta(a, W) / np.maximum(g(a, W), floor), cap, flags)
    return ratio * (phi(a, W) - centre)


def eif_a_ips(phi_w, g1w, delta_prime, a):
    """Exposure score of the incremental propensity intervention.

    delta' phi(w) (a - g(1|w)) / (delta' g(1|w) + 1 - g(1|w))^2
    """
    phi_w = np.asarray(phi_w, dtype=float)
    g1w = np.asarray(g1w, dtype=float)
    out = delta_prime * phi_w * (np.asarray(a, dtype=float) - g1w) / (delta_prime * g1w + 1.0 - g1w) ** 2
    return float(out) if out.ndim == 0 else out


@dataclass
class EifComponentsBatch:
    """EIF contributions aligned with observations."""

    dY: np.ndarray
    dA: np.ndarray
    dZW: np.ndarray
    y: np.ndarray
    flags: List[str] = field(default_factory=list)

    @property
    def total(self) -> np.ndarray:
        return self.dY + self.dA + self.dZW

    @property
    def theta_contribution(self) -> float:
        return float(np.mean(self.total))

    @property
    def sigma2(self) -> float:
        return float(np.var(self.total))

    @property
    def s_records(self) -> np.ndarray:
        return self.total - self.y

    def records(self) -> Iterator[EifRecord]:
        for y_, a_, zw in zip(self.dY, self.dA, self.dZW):
            yield EifRecord(float(y_), float(a_), float(zw))

    def weighted_mean(self, weights) -> float:
        """Expectation of the total under row weights (enumeration oracles)."""
        return float(np.dot(np.asarray(weights, dtype=float), self.total))


Pieces = Union[CrossFit, NuisanceFits, Sequence[Tuple[np.ndarray, NuisanceFits]]]


def _pieces(fits: Pieces, n: int) -> List[Tuple[np.ndarray, NuisanceFits]]:
    if isinstance(fits, CrossFit):
        return fits.pieces()
    if isinstance(fits, NuisanceFits):
        return [(np.arange(n), fits)]
    return list(fits)


def assemble_eif(
    data: ObservedDataset,
    fits: Pieces,
    intervention: InterventionSpec,
    support: Optional[ExposureSupport] = None,
    randomized: bool = False,
    floor: float = TRUNCATION_FLOOR,
    cap: float = WEIGHT_CAP,
) -> EifComponentsBatch:
    """Per-observation EIF pieces, each row evaluated with the fits of its fold.

    ``fits`` is a :class:`CrossFit`, a single :class:`NuisanceFits` applied to
    every row, or explicit ``(row indices, fits)`` pairs. With
    ``randomized=True`` the exposure score is set to zero.
    """
    if support is None:
        support = fits.context.support if isinstance(fits, CrossFit) else FitContext.for_data(data, intervention).support
    n = data.n
    dY, dA, dZW = np.zeros(n), np.zeros(n), np.zeros(n)
    flags: List[str] = []
    kind = intervention.kind
    for idx, f in _pieces(fits, n):
        W, A, Z, Y = data.W[idx], data.A[idx], data.Z[idx], data.Y[idx]
        gd_obs = f.g_delta(A, W)
        if getattr(f.e, "is_g", False) or Z.shape[1] == 0:
            e_obs = f.g(A, W)
        else:
            e_obs = f.e(A, Z, W)
        dY[idx] = eif_y(Y, f.m(A, Z, W), gd_obs, e_obs, floor, cap, flags)
        dZW[idx] = eif_zw(f.m, f.g_delta, Z, W, support)
        if randomized:
            continue
        if kind is InterventionKind.INCREMENTAL_PROPENSITY:
            dA[idx] = eif_a_ips(f.phi(W), f.g(np.ones(len(idx)), W), intervention.delta, A)
        elif kind is InterventionKind.EXPONENTIAL_TILT:
            dA[idx] = eif_a_tilt(f.phi, f.g, f.g_delta, A, W, support, floor, cap, flags)
        else:
            dA[idx] = eif_a_mtp(f.phi, f.g, A, W, support)
    return EifComponentsBatch(dY, dA, dZW, data.Y.copy(), flags)
