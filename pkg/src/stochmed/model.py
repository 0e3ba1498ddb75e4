"""Core data model shared by every other module.

Datasets, intervention specifications, fitted-nuisance containers and the
report record emitted by the estimators all live here.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from stochmed.exceptions import DomainError, EmptyDataset, MissingValue, RoleConflict

#: Default lower bound applied to g and e evaluations used as weight denominators.
TRUNCATION_FLOOR: float = 1e-3

#: Report schema version written into every serialized report.
SCHEMA_VERSION: int = 1


class ExposureKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


class InterventionKind(str, Enum):
    INCREMENTAL_PROPENSITY = "ips"
    EXPONENTIAL_TILT = "tilt"
    SHIFT_POLICY = "shift"


# =============================================================================
# Observed data
# =============================================================================


@dataclass(frozen=True)
class ObservedDataset:
    """Validated observations O = (W, A, Z, Y).

    ``W`` and ``Z`` are always two-dimensional; either may have zero
    columns. A mediator matrix without columns requests the total-effect
    functional downstream.
    """

    W: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    exposure_kind: ExposureKind
    w_names: tuple = ()
    z_names: tuple = ()
    a_name: str = "A"
    y_name: str = "Y"

    def __post_init__(self):
        n = self.A.shape[0]
        if n < 1:
            raise EmptyDataset("dataset has no rows")
        for name in ("W", "Z", "Y"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise DomainError(f"column block {name} has {arr.shape[0]} rows, expected {n}")
        if self.W.ndim != 2 or self.Z.ndim != 2:
            raise DomainError("W and Z must be two-dimensional")
        if self.exposure_kind is ExposureKind.BINARY and not np.isin(self.A, (0.0, 1.0)).all():
            raise DomainError("binary exposure must take values in {0, 1}")
        for arr in (self.W, self.A, self.Z, self.Y):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def has_mediators(self) -> bool:
        return self.Z.shape[1] > 0

    def without_mediators(self) -> "ObservedDataset":
        """Same data with the mediator block dropped (total-effect functional)."""
        return ObservedDataset(
            W=self.W, A=self.A, Z=np.empty((self.n, 0)), Y=self.Y,
            exposure_kind=self.exposure_kind, w_names=self.w_names, z_names=(),
            a_name=self.a_name, y_name=self.y_name,
        )

    def subset(self, idx: np.ndarray) -> "ObservedDataset":
        return ObservedDataset(
            W=self.W[idx], A=self.A[idx], Z=self.Z[idx], Y=self.Y[idx],
            exposure_kind=self.exposure_kind, w_names=self.w_names,
            z_names=self.z_names, a_name=self.a_name, y_name=self.y_name,
        )

    def to_frame(self) -> pd.DataFrame:
        cols: Dict[str, np.ndarray] = {}
        for j, name in enumerate(self.w_names or [f"W{j + 1}" for j in range(self.W.shape[1])]):
            cols[name] = self.W[:, j]
        cols[self.a_name] = self.A
        for j, name in enumerate(self.z_names or [f"Z{j + 1}" for j in range(self.Z.shape[1])]):
            cols[name] = self.Z[:, j]
        cols[self.y_name] = self.Y
        return pd.DataFrame(cols)


def infer_exposure_kind(A) -> ExposureKind:
    """Binary iff every value is 0 or 1."""
    A = np.asarray(A, dtype=float)
    return ExposureKind.BINARY if np.isin(A, (0.0, 1.0)).all() else ExposureKind.CONTINUOUS


def validate_dataset(
    raw,
    roles: Mapping[str, object],
    exposure_kind: Optional[str] = None,
) -> ObservedDataset:
    """Check a table against a column-role map and build an ObservedDataset.

    Parameters
    ----------
    raw : DataFrame or mapping of column name to sequence
    roles : mapping
        Keys ``"W"`` and ``"Z"`` map to lists of column names, ``"A"`` and
        ``"Y"`` to a single column name each.
    exposure_kind : {"binary", "continuous"}, optional
        Overrides the automatic inference.
    """
    frame = raw if isinstance(raw, pd.DataFrame) else pd.DataFrame(dict(raw))
    if frame.shape[0] == 0:
        raise EmptyDataset("dataset has no rows")

    unknown = set(roles) - {"W", "A", "Z", "Y"}
    if unknown:
        raise RoleConflict(f"unknown roles: {sorted(unknown)}")
    a_col, y_col = roles.get("A"), roles.get("Y")
    if not isinstance(a_col, str) or not isinstance(y_col, str):
        raise RoleConflict("exactly one exposure column A and one outcome column Y are required")
    w_cols = list(roles.get("W", []) or [])
    z_cols = list(roles.get("Z", []) or [])
    assigned = w_cols + z_cols + [a_col, y_col]
    dupes = sorted({c for c in assigned if assigned.count(c) > 1})
    if dupes:
        raise RoleConflict(f"columns assigned more than one role: {dupes}")
    missing_cols = [c for c in assigned if c not in frame.columns]
    if missing_cols:
        raise RoleConflict(f"columns not found in data: {missing_cols}")

    sub = frame[assigned].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(sub.to_numpy(dtype=float))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise MissingValue(int(row), assigned[col])

    A = sub[a_col].to_numpy(dtype=float)
    kind = ExposureKind(exposure_kind) if exposure_kind else infer_exposure_kind(A)
    return ObservedDataset(
        W=sub[w_cols].to_numpy(dtype=float).reshape(len(sub), len(w_cols)),
        A=A,
        Z=sub[z_cols].to_numpy(dtype=float).reshape(len(sub), len(z_cols)),
        Y=sub[y_col].to_numpy(dtype=float),
        exposure_kind=kind,
        w_names=tuple(w_cols),
        z_names=tuple(z_cols),
        a_name=a_col,
        y_name=y_col,
    )


# =============================================================================
# Interventions
# =============================================================================


@dataclass(frozen=True)
class InterventionSpec:
    """A stochastic intervention on the exposure.

    ``delta`` is the odds multiplier for ``ips``, the tilt parameter for
    ``tilt`` and the shift magnitude for ``shift``. ``lower`` and ``upper``
    are the per-unit support bounds of a shift policy; callables of W or
    constants. When omitted they default to the sample range of A.
    """

    kind: InterventionKind
    delta: float
    lower: Optional[object] = None
    upper: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", InterventionKind(self.kind))
        if not math.isfinite(self.delta):
            raise DomainError(f"delta must be finite, got {self.delta}")
        if self.kind is InterventionKind.INCREMENTAL_PROPENSITY and self.delta <= 0:
            raise DomainError(f"odds multiplier must be positive, got {self.delta}")
        if self.kind is InterventionKind.SHIFT_POLICY and self.delta <= 0:
            raise DomainError(f"shift magnitude must be positive, got {self.delta}")

    @classmethod
    def ips(cls, delta_prime: float) -> "InterventionSpec":
        return cls(InterventionKind.INCREMENTAL_PROPENSITY, float(delta_prime))

    @classmethod
    def tilt(cls, delta: float) -> "InterventionSpec":
        return cls(InterventionKind.EXPONENTIAL_TILT, float(delta))

    @classmethod
    def shift(cls, delta: float, lower=None, upper=None) -> "InterventionSpec":
        return cls(InterventionKind.SHIFT_POLICY, float(delta), lower, upper)

    def with_delta(self, delta: float) -> "InterventionSpec":
        return InterventionSpec(self.kind, float(delta), self.lower, self.upper)

    @property
    def is_identity(self) -> bool:
        if self.kind is InterventionKind.INCREMENTAL_PROPENSITY:
            return self.delta == 1.0
        if self.kind is InterventionKind.EXPONENTIAL_TILT:
            return self.delta == 0.0
        return False

    def check_exposure(self, kind: ExposureKind) -> None:
        if self.kind is InterventionKind.INCREMENTAL_PROPENSITY and kind is not ExposureKind.BINARY:
            raise DomainError("incremental propensity interventions need a binary exposure")
        if self.kind is InterventionKind.SHIFT_POLICY and kind is not ExposureKind.CONTINUOUS:
            raise DomainError("shift policies need a continuous exposure")


# =============================================================================
# Fitted nuisances
# =============================================================================

# Call signatures (all vectorized over rows):
#   g(a, W), g_delta(a, W), b(a, W)      -> density / mass values
#   m(a, Z, W), e(a, Z, W)               -> regression / density values
#   phi(a, W), or phi(W) for ips         -> real
#   c(W)                                 -> tilt normalizer


@dataclass(frozen=True)
class NuisanceFits:
    g: Callable
    g_delta: Optional[Callable] = None
    m: Optional[Callable] = None
    e: Optional[Callable] = None
    phi: Optional[Callable] = None
    b: Optional[Callable] = None
    c: Optional[Callable] = None

    def replace(self, **changes) -> "NuisanceFits":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return NuisanceFits(**kw)


# =============================================================================
# EIF records
# =============================================================================


@dataclass(frozen=True)
class EifRecord:
    """EIF contributions for one observation."""

    dY: float
    dA: float
    dZW: float

    @property
    def total(self) -> float:
        return self.dY + self.dA + self.dZW


# =============================================================================
# Reports
# =============================================================================


def _nan_to_none(values):
    return [None if (v is None or (isinstance(v, float) and math.isnan(v))) else float(v) for v in values]


def _none_to_nan(values):
    return [math.nan if v is None else float(v) for v in values]


@dataclass
class EffectReport:
    """Point estimates and inference for direct, indirect and total effects.

    ``theta`` is the mediator-fixed intervention mean and ``psi`` the
    intervention mean when mediators also respond (total-effect functional,
    not centred). Effects are contrasts against the sample mean outcome.
    Band fields and ``sup_test_p`` are NaN unless uniform inference ran.
    """

    intervention: str
    estimator: str
    delta_grid: List[float]
    y_mean: float
    theta: List[float]
    psi: List[float]
    direct: List[float]
    indirect: List[float]
    total: List[float]
    se_direct: List[float]
    se_indirect: List[float]
    se_total: List[float]
    ci_lo: List[float]
    ci_hi: List[float]
    ci_lo_indirect: List[float]
    ci_hi_indirect: List[float]
    band_lo: List[float] = field(default_factory=list)
    band_hi: List[float] = field(default_factory=list)
    critical_value: float = math.nan
    sup_test_p: float = math.nan
    alpha: float = 0.05
    n: int = 0
    flags: List[str] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    _list_fields = (
        "delta_grid", "theta", "psi", "direct", "indirect", "total", "se_direct",
        "se_indirect", "se_total", "ci_lo", "ci_hi", "ci_lo_indirect",
        "ci_hi_indirect", "band_lo", "band_hi",
    )

    def to_dict(self) -> dict:
        out = asdict(self)
        for name in self._list_fields:
            out[name] = _nan_to_none(out[name])
        for name in ("critical_value", "sup_test_p", "y_mean"):
            v = out[name]
            out[name] = None if math.isnan(v) else v
        out["schema_version"] = SCHEMA_VERSION
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "EffectReport":
        payload = dict(payload)
        payload.pop("schema_version", None)
        for name in cls._list_fields:
            payload[name] = _none_to_nan(payload.get(name, []))
        for name in ("critical_value", "sup_test_p", "y_mean"):
            v = payload.get(name)
            payload[name] = math.nan if v is None else float(v)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "EffectReport":
        return cls.from_dict(json.loads(text))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: getattr(self, name) for name in self._list_fields if getattr(self, name)})


def float_list(values: Sequence) -> List[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]
