"""
Monte-Carlo evaluation of the risk-ratio intervals under beta-binomial data.

Every replication draws from its own generator keyed by (cell seed, attempt index),
so a scenario's metrics do not depend on how cells are spread over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from multiprocessing import Pool
from typing import Callable, Optional, Sequence

import numpy as np

from cluster_data import (
    FEATURED_METHODS,
    METHODS,
    GroupData,
    MethodMetrics,
    ReplicationOutcome,
    ScenarioMetrics,
    ScenarioSpec,
    Side,
    TwoGroupStudy,
)
from errors import ScenarioStalled, ValidationError
from interval_methods import IntervalCalculator, MethodParams

CP_RANGE = (0.94, 0.96)
LOCATION_RANGE = (0.375, 0.625)
WIDTH_FACTOR = 2.0

# Grid coordinates are scaled to integers before they key a cell's seed.
COORDINATE_SCALE = 10 ** 6


# ----------------------------------------------------------------------------
# Random generation
# ----------------------------------------------------------------------------

def cell_seed(master_seed: int, key) -> int:
    """
    64-bit seed for one grid cell derived from the master seed.

    Args:
        master_seed: Seed of the whole run
        key: Cell coordinates (a tuple of numbers) or a plain integer index
    """
    if isinstance(key, (tuple, list)):
        spawn_key = tuple(int(round(float(x) * COORDINATE_SCALE)) for x in key)
    else:
        spawn_key = (int(key),)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=spawn_key)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def attempt_rng(seed: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(attempt),)))


def beta_binomial_counts(sizes, gamma: float, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Success counts for clusters of the given sizes under the beta-binomial model."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if theta > 0:
        a = gamma * (1.0 - theta) / theta
        b = (1.0 - gamma) * (1.0 - theta) / theta
        p = rng.beta(a, b, size=sizes.shape)
        return rng.binomial(sizes, p)
    return rng.binomial(sizes, gamma, size=sizes.shape)


def beta_binomial_group(clusters: int, size, gamma: float, theta: float, rng) -> GroupData:
    """
    Draw one treatment arm.

    Args:
        clusters: Number of clusters
        size: Common cluster size, or a sequence of per-cluster sizes
        gamma: Mean success probability in (0, 1)
        theta: Intraclass correlation in [0, 1)
        rng: numpy Generator

    Returns:
        GroupData
    """
    if not 0 < gamma < 1:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0 <= theta < 1:
        raise ValidationError(f"theta must lie in [0, 1), got {theta}")
    if np.isscalar(size):
        sizes = np.full(clusters, int(size), dtype=np.int64)
    else:
        sizes = np.asarray(size, dtype=np.int64)
        if len(sizes) != clusters:
            raise ValidationError(f"expected {clusters} cluster sizes, got {len(sizes)}")
    return GroupData.from_counts(sizes, beta_binomial_counts(sizes, gamma, theta, rng))


def simulate_study(spec: ScenarioSpec, attempt: int) -> TwoGroupStudy:
    """The study generated for one attempt of a scenario."""
    rng = attempt_rng(spec.seed, attempt)
    sizes1 = spec.group_sizes(1)
    sizes2 = spec.group_sizes(2)
    treatment = beta_binomial_group(len(sizes1), sizes1, spec.gamma1, spec.theta1, rng)
    control = beta_binomial_group(len(sizes2), sizes2, spec.gamma2, spec.theta2, rng)
    return TwoGroupStudy(treatment, control)


def mixed_cluster_sizes(clusters: int, mean_size: float) -> tuple:
    """
    Deterministic mix of floor/ceil cluster sizes whose average is closest to ``mean_size``.

    Args:
        clusters: Number of clusters
        mean_size: Target (possibly fractional) mean cluster size, at least 1

    Returns:
        tuple: Sizes, larger clusters first
    """
    if clusters < 1 or mean_size < 1:
        raise ValidationError(f"need clusters >= 1 and mean size >= 1, got {clusters}, {mean_size}")
    low = int(math.floor(mean_size))
    total = int(round(mean_size * clusters))
    n_high = min(max(total - low * clusters, 0), clusters)
    return (low + 1,) * n_high + (low,) * (clusters - n_high)


# ----------------------------------------------------------------------------
# Scenario evaluation
# ----------------------------------------------------------------------------

class _Tally:
    __slots__ = ("covered", "distal", "mesial", "widths", "rejected")

    def __init__(self):
        self.covered = 0
        self.distal = 0
        self.mesial = 0
        self.widths = []
        self.rejected = 0

    def add(self, outcome: ReplicationOutcome):
        if outcome.side is Side.COVERED:
            self.covered += 1
        elif outcome.side is Side.DISTAL:
            self.distal += 1
        else:
            self.mesial += 1
        self.widths.append(outcome.width)

    def freeze(self, method) -> MethodMetrics:
        return MethodMetrics(
            method=method,
            good=len(self.widths),
            covered=self.covered,
            distal=self.distal,
            mesial=self.mesial,
            width_sum=math.fsum(self.widths),
            rejected=self.rejected,
        )


def run_scenario(spec: ScenarioSpec, params: Optional[MethodParams] = None) -> ScenarioMetrics:
    """
    Simulate until ``spec.replications`` good replications are collected.

    A replication is good when all 17 intervals exist; rejected replications are
    counted and discarded. With ``per_method_accounting`` every replication counts
    and a method's nonexistence is excluded from that method alone.

    Raises:
        ScenarioStalled: rejected replications outnumber good ones by more than
            ``spec.stall_ratio``
    """
    params = replace(params, alpha=spec.alpha) if params else MethodParams(alpha=spec.alpha)
    calculator = IntervalCalculator(params)
    tallies = {name: _Tally() for name in METHODS}
    good = rejected = attempt = 0

    while good < spec.replications:
        study = simulate_study(spec, attempt)
        attempt += 1
        results = calculator.compute_all(study)
        complete = all(r.exists for r in results)

        if spec.per_method_accounting:
            good += 1
            rejected += 0 if complete else 1
            for r in results:
                if r.exists:
                    tallies[r.method].add(ReplicationOutcome.classify(r, spec.eta))
                else:
                    tallies[r.method].rejected += 1
            continue

        if not complete:
            rejected += 1
            if rejected > spec.stall_ratio * max(good, 1):
                raise ScenarioStalled(
                    f"{rejected} rejected vs {good} good replications in cell {spec.cell}",
                    good=good, rejected=rejected,
                )
            continue
        good += 1
        for r in results:
            tallies[r.method].add(ReplicationOutcome.classify(r, spec.eta))

    if not spec.per_method_accounting:
        for tally in tallies.values():
            tally.rejected = rejected
    metrics = tuple(tallies[name].freeze(name) for name in METHODS)
    return ScenarioMetrics(spec=spec, methods=metrics, good=good, rejected_samples=rejected)


def _run_cell(job):
    spec, params = job
    try:
        return run_scenario(spec, params)
    except ScenarioStalled as exc:
        empty = tuple(MethodMetrics(method=name, rejected=exc.rejected) for name in METHODS)
        return ScenarioMetrics(spec=spec, methods=empty, good=exc.good,
                               rejected_samples=exc.rejected, status="stalled")


# ----------------------------------------------------------------------------
# Grids and summaries
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodMedians:
    method: str
    cp: float
    ew: float
    dnptnp: Optional[float]
    cells: int


def _median(values):
    values = sorted(v for v in values if v is not None and not math.isnan(v))
    if not values:
        return None
    return float(np.median(values))


def grid_medians(cells: Sequence[ScenarioMetrics], methods=METHODS) -> list:
    """Per-method medians of CP, EW and DNPTNP over the cells that finished."""
    finished = [c for c in cells if not c.stalled]
    medians = []
    for name in methods:
        per_cell = [c.by_method[name] for c in finished]
        medians.append(MethodMedians(
            method=name,
            cp=_median(m.cp for m in per_cell),
            ew=_median(m.ew for m in per_cell),
            dnptnp=_median(m.dnptnp for m in per_cell),
            cells=len(per_cell),
        ))
    return medians


@dataclass(frozen=True)
class GridResult:
    cells: tuple
    medians: tuple

    @property
    def stalled_cells(self):
        return [c for c in self.cells if c.stalled]


@dataclass(frozen=True)
class GroupDesign:
    """Fitted parameters of one arm of a real study, used to mimic it in simulation."""

    gamma: Optional[float]
    icc: float
    clusters: int
    mean_size: float


@dataclass(frozen=True)
class AppropriatenessRow:
    method: str
    cp: float
    ew: float
    dnptnp: Optional[float]
    cp_flag: bool
    location_flag: bool
    width_flag: bool

    @property
    def verdict(self) -> str:
        return "FLAG" if (self.cp_flag or self.location_flag or self.width_flag) else "PASS"


def qualify(metrics: ScenarioMetrics, methods=FEATURED_METHODS) -> list:
    """
    Flag methods whose coverage, location or width make them unsuitable.

    CP must lie in [0.94, 0.96], DNPTNP in [0.375, 0.625] (a Missing DNPTNP is not
    flagged), and EW may not exceed twice the median EW of the evaluated methods.
    """
    chosen = [metrics.by_method[name] for name in methods]
    typical_width = _median(m.ew for m in chosen)
    rows = []
    for m in chosen:
        cp, ew, location = m.cp, m.ew, m.dnptnp
        rows.append(AppropriatenessRow(
            method=m.method,
            cp=cp,
            ew=ew,
            dnptnp=location,
            cp_flag=math.isnan(cp) or not CP_RANGE[0] <= round(cp, 12) <= CP_RANGE[1],
            location_flag=location is not None and not LOCATION_RANGE[0] <= location <= LOCATION_RANGE[1],
            width_flag=typical_width is not None and ew > WIDTH_FACTOR * typical_width,
        ))
    return rows


class CoverageSimulator:
    """Runs scenarios, grids and example appropriateness checks."""

    def __init__(self, params: Optional[MethodParams] = None, workers: int = 1,
                 progress: Optional[Callable] = None):
        """
        Args:
            params: MethodParams for the interval methods (alpha comes from each scenario)
            workers: Worker processes used for grids
            progress: Optional callback(done, total, ScenarioMetrics) for status output
        """
        self.params = params or MethodParams()
        self.workers = max(int(workers), 1)
        self.progress = progress

    def run_grid(self, specs: Sequence[ScenarioSpec], methods=METHODS) -> GridResult:
        """
        Evaluate every cell and summarize with per-method medians.

        Cells are returned in input order whatever the worker count; a stalled
        cell is recorded with status "stalled" and left out of the medians.
        """
        specs = list(specs)
        keys = [(s.coordinates, s.seed) for s in specs]
        if len(set(keys)) != len(keys):
            raise ValidationError("scenario specs must be distinct")

        jobs = [(spec, self.params) for spec in specs]
        cells = []
        if self.workers > 1 and len(jobs) > 1:
            with Pool(min(self.workers, len(jobs))) as pool:
                for metrics in pool.imap(_run_cell, jobs, chunksize=1):
                    cells.append(metrics)
                    self._report(len(cells), len(jobs), metrics)
        else:
            for job in jobs:
                cells.append(_run_cell(job))
                self._report(len(cells), len(jobs), cells[-1])

        return GridResult(cells=tuple(cells), medians=tuple(grid_medians(cells, methods)))

    def _report(self, done, total, metrics):
        if self.progress is not None:
            self.progress(done, total, metrics)

    def appropriateness_check(self, treatment: GroupDesign, control: GroupDesign, eta_hat: float,
                              reps: int, alpha: float = 0.05, seed: int = 0,
                              methods=FEATURED_METHODS, stall_ratio: float = 100.0):
        """
        Simulate studies shaped like a real example and qualify each method.

        Args:
            treatment: Fitted treatment-arm design (gamma required)
            control: Fitted control-arm design (gamma derived as gamma_t / eta_hat)
            eta_hat: Estimated risk ratio used as the true eta
            reps: Good replications to collect
            alpha: Nominal error rate
            seed: Master seed
            methods: Methods reported in the qualification table
            stall_ratio: Rejected-to-good cap

        Returns:
            tuple: (ScenarioMetrics, list of AppropriatenessRow)
        """
        if treatment.gamma is None:
            raise ValidationError("treatment gamma is required")
        spec = ScenarioSpec(
            clusters_per_group=treatment.clusters,
            cluster_size=max(int(round(treatment.mean_size)), 1),
            gamma1=treatment.gamma,
            eta=eta_hat,
            theta1=treatment.icc,
            theta2=control.icc,
            alpha=alpha,
            replications=reps,
            seed=cell_seed(seed, 0),
            treatment_sizes=mixed_cluster_sizes(treatment.clusters, treatment.mean_size),
            control_sizes=mixed_cluster_sizes(control.clusters, control.mean_size),
            stall_ratio=stall_ratio,
        )
        metrics = _run_cell((spec, self.params))
        if metrics.stalled:
            raise ScenarioStalled(
                f"example simulation stalled: {metrics.rejected_samples} rejected, {metrics.good} good",
                good=metrics.good, rejected=metrics.rejected_samples,
            )
        return metrics, qualify(metrics, methods)
