"""
Domain types for clustered binary data and risk-ratio interval results.

Every type here is immutable after construction, so instances can be shared
freely between the interval methods and the simulation workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from errors import ValidationError


METHODS = (
    "HB1",
    "MK1", "MK2", "MK3",
    "IH1", "IH2", "IH3",
    "KA1", "KA2", "KA3",
    "DK1", "DK2", "DK3",
    "FB1", "FB2", "FB3",
    "MR3",
)

# The eight methods carried forward into the example analyses.
FEATURED_METHODS = ("HB1", "MK3", "IH2", "KA2", "DK2", "DK3", "FB2", "MR3")

# Unmodified single-sample baselines (not part of the 17).
BASELINE_METHODS = ("KATZ", "DELTA", "FIELLER", "BAILEY")


class Kind(str, Enum):
    """Variance estimator behind an effective sample size."""

    EQ = "EQ"
    OP = "OP"
    RE = "RE"
    NONE = "NONE"  # plain n_i. and Y_i., no clustering adjustment

    @property
    def index(self):
        return {"EQ": 1, "OP": 2, "RE": 3}.get(self.value)


class Flag(str, Enum):
    ICC_TRUNCATED = "ICC_TRUNCATED"
    ICC_UNDEFINED = "ICC_UNDEFINED"
    LOWER_CLAMPED_AT_ZERO = "LOWER_CLAMPED_AT_ZERO"
    ROOT_BRACKET_EXPANDED = "ROOT_BRACKET_EXPANDED"
    EFFECTIVE_SIZE_FALLBACK = "EFFECTIVE_SIZE_FALLBACK"


class Side(str, Enum):
    COVERED = "COVERED"
    DISTAL = "DISTAL"    # true eta above the upper limit
    MESIAL = "MESIAL"    # true eta below the lower limit


@dataclass(frozen=True)
class ClusterRecord:
    size: int
    successes: int

    def __post_init__(self):
        if int(self.size) != self.size or int(self.successes) != self.successes:
            raise ValidationError(f"cluster counts must be integers, got ({self.size}, {self.successes})")
        if self.size < 1:
            raise ValidationError(f"cluster size must be >= 1, got {self.size}")
        if not 0 <= self.successes <= self.size:
            raise ValidationError(
                f"successes must lie in [0, size], got {self.successes} of {self.size}"
            )


@dataclass(frozen=True)
class GroupData:
    """One treatment arm: an ordered sequence of clusters (at least two)."""

    clusters: tuple

    def __post_init__(self):
        clusters = tuple(self.clusters)
        object.__setattr__(self, "clusters", clusters)
        if len(clusters) < 2:
            raise ValidationError(f"a group needs at least 2 clusters, got {len(clusters)}")
        for cluster in clusters:
            if not isinstance(cluster, ClusterRecord):
                raise ValidationError(f"expected ClusterRecord, got {type(cluster).__name__}")

    @classmethod
    def from_counts(cls, sizes: Iterable[int], successes: Iterable[int]) -> "GroupData":
        sizes = list(sizes)
        successes = list(successes)
        if len(sizes) != len(successes):
            raise ValidationError(
                f"sizes and successes differ in length ({len(sizes)} vs {len(successes)})"
            )
        return cls(tuple(ClusterRecord(int(n), int(y)) for n, y in zip(sizes, successes)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]]) -> "GroupData":
        return cls(tuple(ClusterRecord(int(n), int(y)) for n, y in pairs))

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters], dtype=float)

    @cached_property
    def successes(self) -> np.ndarray:
        return np.array([c.successes for c in self.clusters], dtype=float)

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    @cached_property
    def total_size(self) -> int:
        return sum(c.size for c in self.clusters)

    @cached_property
    def total_successes(self) -> int:
        return sum(c.successes for c in self.clusters)

    def __len__(self):
        return len(self.clusters)


@dataclass(frozen=True)
class TwoGroupStudy:
    """Treatment (numerator of eta) and control (denominator) arms."""

    treatment: GroupData
    control: GroupData

    def swapped(self) -> "TwoGroupStudy":
        return TwoGroupStudy(treatment=self.control, control=self.treatment)


@dataclass(frozen=True)
class GroupSummary:
    """Pooled proportion, ANOVA intraclass correlation and variance inflation of a group.

    ``icc_raw`` is None when the ANOVA estimator was undefined for the design;
    ``icc_hat`` is always the truncated value used downstream.
    """

    gamma_hat: float
    icc_raw: Optional[float]
    icc_hat: float
    xi_hat: float
    bms: float
    wms: float
    n_star: float

    @property
    def icc_defined(self) -> bool:
        return self.icc_raw is not None

    @property
    def icc_truncated(self) -> bool:
        return self.icc_raw is not None and self.icc_raw != self.icc_hat


@dataclass(frozen=True)
class EffectiveSize:
    """Effective sample size, adjusted successes and the proportion they pair with.

    ``gamma_pooled`` keeps Y_i./n_i. alongside the kind-matched ``gamma_used``.
    ``fallback`` marks the n_eff = n_i. substitute used when the variance is zero
    or the proportion sits on the boundary.
    """

    kind: Kind
    n_eff: float
    y_eff: float
    gamma_used: float
    variance: float
    gamma_pooled: float
    fallback: bool = False

    def __post_init__(self):
        if not self.n_eff > 0:
            raise ValidationError(f"effective size must be positive, got {self.n_eff}")
        if not -1e-12 <= self.y_eff <= self.n_eff * (1 + 1e-12):
            raise ValidationError(f"adjusted successes {self.y_eff} outside [0, {self.n_eff}]")

    @classmethod
    def build(cls, kind, n_eff, gamma_used, variance, gamma_pooled, fallback=False):
        return cls(
            kind=Kind(kind),
            n_eff=float(n_eff),
            y_eff=float(gamma_used) * float(n_eff),
            gamma_used=float(gamma_used),
            variance=float(variance),
            gamma_pooled=float(gamma_pooled),
            fallback=fallback,
        )


@dataclass(frozen=True)
class IntervalResult:
    """Limits of one method's interval, or the Nonexistent marker (both limits None)."""

    method: str
    lower: Optional[float]
    upper: Optional[float]
    estimate: Optional[float] = None
    flags: frozenset = field(default_factory=frozenset)
    reason: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS and self.method not in BASELINE_METHODS:
            raise ValidationError(f"unknown method identifier {self.method!r}")
        object.__setattr__(self, "flags", frozenset(Flag(f) for f in self.flags))
        if (self.lower is None) != (self.upper is None):
            raise ValidationError("an interval needs both limits or neither")
        if self.lower is not None:
            if self.lower < 0 or self.upper < self.lower or math.isnan(self.lower) or math.isnan(self.upper):
                raise ValidationError(
                    f"{self.method}: limits must satisfy 0 <= lower <= upper, got ({self.lower}, {self.upper})"
                )

    @classmethod
    def nonexistent(cls, method, reason, flags=(), estimate=None):
        return cls(method=method, lower=None, upper=None, estimate=estimate,
                   flags=frozenset(flags), reason=reason)

    @property
    def exists(self) -> bool:
        return self.lower is not None

    @property
    def width(self) -> Optional[float]:
        if not self.exists:
            return None
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.exists and self.lower <= value <= self.upper


@dataclass(frozen=True)
class ReplicationOutcome:
    """How one method's interval from one simulated study relates to the true eta."""

    method: str
    interval: IntervalResult
    side: Optional[Side]

    @classmethod
    def classify(cls, interval: IntervalResult, eta: float) -> "ReplicationOutcome":
        if not interval.exists:
            return cls(interval.method, interval, None)
        if eta > interval.upper:
            side = Side.DISTAL
        elif eta < interval.lower:
            side = Side.MESIAL
        else:
            side = Side.COVERED
        return cls(interval.method, interval, side)

    @property
    def covered(self) -> bool:
        return self.side is Side.COVERED

    @property
    def width(self) -> Optional[float]:
        return self.interval.width


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation grid cell.

    ``treatment_sizes`` / ``control_sizes`` override the fixed cluster layout when
    a scenario mimics a real study with unequal cluster sizes.
    """

    clusters_per_group: int
    cluster_size: int
    gamma1: float
    eta: float
    theta1: float
    theta2: float
    alpha: float = 0.05
    replications: int = 2000
    seed: int = 0
    cell: int = 0
    treatment_sizes: Optional[tuple] = None
    control_sizes: Optional[tuple] = None
    stall_ratio: float = 100.0
    per_method_accounting: bool = False

    def __post_init__(self):
        if self.treatment_sizes is not None:
            object.__setattr__(self, "treatment_sizes", tuple(int(n) for n in self.treatment_sizes))
        if self.control_sizes is not None:
            object.__setattr__(self, "control_sizes", tuple(int(n) for n in self.control_sizes))
        if self.clusters_per_group < 2:
            raise ValidationError(f"clusters_per_group must be >= 2, got {self.clusters_per_group}")
        if self.cluster_size < 1:
            raise ValidationError(f"cluster_size must be >= 1, got {self.cluster_size}")
        if not 0 < self.gamma1 < 1:
            raise ValidationError(f"gamma1 must lie in (0, 1), got {self.gamma1}")
        if not self.eta > 0 or not 0 < self.gamma2 < 1:
            raise ValidationError(f"gamma1/eta = {self.gamma1}/{self.eta} must land in (0, 1)")
        for name in ("theta1", "theta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValidationError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.replications < 1:
            raise ValidationError(f"replications must be >= 1, got {self.replications}")
        if not self.stall_ratio > 0:
            raise ValidationError(f"stall_ratio must be positive, got {self.stall_ratio}")
        for sizes in (self.treatment_sizes, self.control_sizes):
            if sizes is not None and (len(sizes) < 2 or min(sizes) < 1):
                raise ValidationError("explicit cluster sizes need >= 2 clusters of size >= 1")

    @property
    def gamma2(self) -> float:
        return self.gamma1 / self.eta

    def group_sizes(self, group: int) -> tuple:
        explicit = self.treatment_sizes if group == 1 else self.control_sizes
        if explicit is not None:
            return explicit
        return (self.cluster_size,) * self.clusters_per_group

    @property
    def coordinates(self) -> tuple:
        return (self.clusters_per_group, self.cluster_size, self.gamma1, self.eta, self.theta1, self.theta2)


@dataclass(frozen=True)
class MethodMetrics:
    """Counts behind one method's coverage summary in one scenario."""

    method: str
    good: int = 0
    covered: int = 0
    distal: int = 0
    mesial: int = 0
    width_sum: float = 0.0
    rejected: int = 0

    @property
    def cp(self) -> float:
        return self.covered / self.good if self.good else math.nan

    @property
    def ew(self) -> float:
        return self.width_sum / self.good if self.good else math.nan

    @property
    def disncp(self) -> float:
        return self.distal / self.good if self.good else math.nan

    @property
    def mesncp(self) -> float:
        return self.mesial / self.good if self.good else math.nan

    @property
    def dnptnp(self) -> Optional[float]:
        """Distal share of noncoverage; None (Missing) when every interval covered."""
        missed = self.distal + self.mesial
        if missed == 0:
            return None
        return self.distal / missed


@dataclass(frozen=True)
class ScenarioMetrics:
    spec: ScenarioSpec
    methods: tuple
    good: int = 0
    rejected_samples: int = 0
    status: str = "ok"

    @property
    def by_method(self) -> dict:
        return {m.method: m for m in self.methods}

    @property
    def stalled(self) -> bool:
        return self.status != "ok"
