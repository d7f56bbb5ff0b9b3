"""
Study files, YAML configs and tabular rendering for the CLI.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field, fields
from itertools import product
from typing import Optional

import pandas as pd
import yaml

from cluster_data import FEATURED_METHODS, METHODS, GroupData, ScenarioSpec, TwoGroupStudy
from coverage_simulator import GroupDesign, cell_seed
from errors import ConfigError, ParseError, ValidationError
from interval_methods import MethodParams

STUDY_COLUMNS = ["group", "cluster", "size", "successes"]
GROUPS = ("treatment", "control")

CI_COLUMNS = ["method", "lower", "upper", "width", "exists", "reason", "flags"]
GRID_COLUMNS = ["cell", "clusters", "cluster_size", "gamma1", "eta", "theta1", "theta2", "method",
                "cp", "ew", "disncp", "mesncp", "dnptnp", "good", "rejected_samples", "status"]
SUMMARY_COLUMNS = ["method", "median_cp", "median_ew", "median_dnptnp"]
MEANS_COLUMNS = ["eta", "theta1", "theta2", "method", "mean_cp", "mean_ew", "mean_dnptnp"]
APPROPRIATENESS_COLUMNS = ["method", "cp", "ew", "dnptnp", "cp_flag", "location_flag",
                           "width_flag", "verdict"]

FULL_PRECISION = "%.17g"


# ----------------------------------------------------------------------------
# Study CSV
# ----------------------------------------------------------------------------

def _parse_int(value, column, line):
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{column} must be an integer, got {text!r}", line=line) from None


def parse_study(text: str) -> TwoGroupStudy:
    """
    Parse study CSV text with header ``group,cluster,size,successes``.

    Clusters keep their file order within each group.

    Raises:
        ParseError: empty input, wrong header or malformed row (with its line number)
        ValidationError: duplicate (group, cluster) key or invalid counts
    """
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError("study file is empty", line=1) from None
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV: {exc}") from None

    header = [str(c).strip() for c in frame.columns]
    if header != STUDY_COLUMNS:
        raise ParseError(f"expected header {','.join(STUDY_COLUMNS)}, got {','.join(header)}", line=1)
    if frame.empty:
        raise ParseError("study file has no data rows", line=2)

    seen = set()
    counts = {group: [] for group in GROUPS}
    for offset, row in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        group = str(row[0]).strip().lower()
        if group not in GROUPS:
            raise ParseError(f"group must be treatment or control, got {row[0]!r}", line=line)
        cluster = str(row[1]).strip()
        if not cluster:
            raise ParseError("cluster identifier is empty", line=line)
        if (group, cluster) in seen:
            raise ValidationError(f"line {line}: duplicate cluster {cluster!r} in {group}")
        seen.add((group, cluster))
        size = _parse_int(row[2], "size", line)
        successes = _parse_int(row[3], "successes", line)
        if size < 1 or not 0 <= successes <= size:
            raise ValidationError(f"line {line}: need size >= 1 and 0 <= successes <= size, "
                                  f"got {successes} of {size}")
        counts[group].append((size, successes))

    for group in GROUPS:
        if len(counts[group]) < 2:
            raise ValidationError(f"{group} group needs at least 2 clusters, got {len(counts[group])}")
    return TwoGroupStudy(GroupData.from_pairs(counts["treatment"]), GroupData.from_pairs(counts["control"]))


def read_study(path) -> TwoGroupStudy:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_study(text)


def study_frame(study: TwoGroupStudy) -> pd.DataFrame:
    rows = []
    for group, data in zip(GROUPS, (study.treatment, study.control)):
        for index, cluster in enumerate(data.clusters, 1):
            rows.append({"group": group, "cluster": index,
                         "size": cluster.size, "successes": cluster.successes})
    return pd.DataFrame(rows, columns=STUDY_COLUMNS)


def write_study(study: TwoGroupStudy, path=None) -> str:
    """Serialize a study; returns the CSV text and writes it to ``path`` when given."""
    text = study_frame(study).to_csv(index=False, lineterminator="\n")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    return text


# ----------------------------------------------------------------------------
# YAML configs
# ----------------------------------------------------------------------------

def _load_yaml(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return document


def _check_keys(document: dict, allowed, where: str):
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")


def _require(document: dict, key: str, where: str):
    if key not in document:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return document[key]


def _methods(value, default, where):
    if value is None:
        return tuple(default)
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{where}: methods must be a non-empty list")
    unknown = [m for m in value if m not in METHODS]
    if unknown:
        raise ConfigError(f"{where}: unknown method(s) {', '.join(map(str, unknown))}")
    return tuple(value)


def _number_list(value, key, cast):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list")
    try:
        return tuple(cast(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must contain numbers, got {value!r}") from None


def _method_options(document: dict, alpha: float, where: str) -> dict:
    """Read the interval-formula switches, checking them the way MethodParams does."""
    options = {
        "koopman_form": str(document.get("koopman_form", "printed")),
        "katz_radicand": str(document.get("katz_radicand", "printed")),
        "fieller_pooled_gamma": bool(document.get("fieller_pooled_gamma", False)),
    }
    try:
        MethodParams(alpha=alpha, **options)
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return options


@dataclass(frozen=True)
class GridConfig:
    """Axes of a simulation grid; the cross product defines the cells."""

    clusters: tuple
    cluster_sizes: tuple
    gamma1: float
    eta: tuple
    theta_pairs: tuple
    alpha: float = 0.05
    replications: int = 2000
    seed: Optional[int] = None
    stall_ratio: float = 100.0
    per_method_accounting: bool = False
    methods: tuple = METHODS
    koopman_form: str = "printed"
    katz_radicand: str = "printed"
    fieller_pooled_gamma: bool = False

    @property
    def cell_count(self) -> int:
        return len(self.clusters) * len(self.cluster_sizes) * len(self.eta) * len(self.theta_pairs)

    def method_params(self) -> MethodParams:
        return MethodParams(alpha=self.alpha, koopman_form=self.koopman_form,
                            katz_radicand=self.katz_radicand, fieller_pooled_gamma=self.fieller_pooled_gamma)

    def scenarios(self, replications=None, seed=None, stall_ratio=None) -> list:
        """
        One ScenarioSpec per cell, ordered by eta, theta pair, clusters then size.

        Each cell's seed is derived from the master seed and the cell's coordinates,
        so adding a value to one axis leaves the other cells' seeds unchanged.
        """
        master = seed if seed is not None else self.seed
        if master is None:
            raise ConfigError("no master seed: set seed in the config, --seed or CLUSTER_RR_SEED")
        reps = replications if replications is not None else self.replications
        ratio = stall_ratio if stall_ratio is not None else self.stall_ratio
        specs = []
        axes = product(self.eta, self.theta_pairs, self.clusters, self.cluster_sizes)
        for cell, (eta, (theta1, theta2), clusters, size) in enumerate(axes):
            try:
                specs.append(ScenarioSpec(
                    clusters_per_group=clusters,
                    cluster_size=size,
                    gamma1=self.gamma1,
                    eta=eta,
                    theta1=theta1,
                    theta2=theta2,
                    alpha=self.alpha,
                    replications=reps,
                    seed=cell_seed(master, (clusters, size, self.gamma1, eta, theta1, theta2)),
                    cell=cell,
                    stall_ratio=ratio,
                    per_method_accounting=self.per_method_accounting,
                ))
            except ValidationError as exc:
                raise ConfigError(f"cell {cell}: {exc}") from None
        return specs


def load_grid_config(path) -> GridConfig:
    document = _load_yaml(path)
    allowed = [f.name for f in fields(GridConfig)]
    _check_keys(document, allowed, str(path))

    pairs = _require(document, "theta_pairs", str(path))
    if not isinstance(pairs, list) or not pairs or any(not isinstance(p, list) or len(p) != 2 for p in pairs):
        raise ConfigError(f"{path}: theta_pairs must be a list of [theta1, theta2] pairs")
    try:
        return GridConfig(
            clusters=_number_list(_require(document, "clusters", str(path)), "clusters", int),
            cluster_sizes=_number_list(_require(document, "cluster_sizes", str(path)), "cluster_sizes", int),
            gamma1=float(_require(document, "gamma1", str(path))),
            eta=_number_list(_require(document, "eta", str(path)), "eta", float),
            theta_pairs=tuple((float(a), float(b)) for a, b in pairs),
            alpha=float(document.get("alpha", 0.05)),
            replications=int(document.get("replications", 2000)),
            seed=None if document.get("seed") is None else int(document["seed"]),
            stall_ratio=float(document.get("stall_ratio", 100.0)),
            per_method_accounting=bool(document.get("per_method_accounting", False)),
            methods=_methods(document.get("methods"), METHODS, str(path)),
            **_method_options(document, float(document.get("alpha", 0.05)), str(path)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class ParamsConfig:
    """Fitted parameters of a real example for the appropriateness check."""

    name: str
    eta: float
    treatment: GroupDesign
    control: GroupDesign
    alpha: float = 0.05
    replications: int = 2000
    seed: Optional[int] = None
    stall_ratio: float = 100.0
    methods: tuple = field(default=FEATURED_METHODS)
    koopman_form: str = "printed"
    katz_radicand: str = "printed"
    fieller_pooled_gamma: bool = False

    def method_params(self) -> MethodParams:
        return MethodParams(alpha=self.alpha, koopman_form=self.koopman_form,
                            katz_radicand=self.katz_radicand, fieller_pooled_gamma=self.fieller_pooled_gamma)


def _group_design(document, where, needs_gamma):
    if not isinstance(document, dict):
        raise ConfigError(f"{where}: expected a mapping")
    allowed = ["gamma", "icc", "clusters", "mean_size"] if needs_gamma else ["icc", "clusters", "mean_size"]
    _check_keys(document, allowed, where)
    try:
        return GroupDesign(
            gamma=float(_require(document, "gamma", where)) if needs_gamma else None,
            icc=float(_require(document, "icc", where)),
            clusters=int(_require(document, "clusters", where)),
            mean_size=float(_require(document, "mean_size", where)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_params_config(path) -> ParamsConfig:
    document = _load_yaml(path)
    allowed = [f.name for f in fields(ParamsConfig)]
    _check_keys(document, allowed, str(path))
    try:
        return ParamsConfig(
            name=str(document.get("name", os.path.splitext(os.path.basename(str(path)))[0])),
            eta=float(_require(document, "eta", str(path))),
            treatment=_group_design(_require(document, "treatment", str(path)), f"{path}: treatment", True),
            control=_group_design(_require(document, "control", str(path)), f"{path}: control", False),
            alpha=float(document.get("alpha", 0.05)),
            replications=int(document.get("replications", 2000)),
            seed=None if document.get("seed") is None else int(document["seed"]),
            stall_ratio=float(document.get("stall_ratio", 100.0)),
            methods=_methods(document.get("methods"), FEATURED_METHODS, str(path)),
            **_method_options(document, float(document.get("alpha", 0.05)), str(path)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ----------------------------------------------------------------------------
# Result frames
# ----------------------------------------------------------------------------

def _nan_if_none(value):
    return math.nan if value is None else value


def results_frame(results) -> pd.DataFrame:
    rows = []
    for r in results:
        rows.append({
            "method": r.method,
            "lower": _nan_if_none(r.lower),
            "upper": _nan_if_none(r.upper),
            "width": _nan_if_none(r.width),
            "exists": r.exists,
            "reason": r.reason or "",
            "flags": ";".join(sorted(f.value for f in r.flags)),
        })
    return pd.DataFrame(rows, columns=CI_COLUMNS)


def grid_frame(cells) -> pd.DataFrame:
    """One row per (cell, method), cells in cell order and methods in the fixed order."""
    rows = []
    for cell in sorted(cells, key=lambda c: c.spec.cell):
        spec = cell.spec
        for m in cell.methods:
            rows.append({
                "cell": spec.cell,
                "clusters": spec.clusters_per_group,
                "cluster_size": spec.cluster_size,
                "gamma1": spec.gamma1,
                "eta": spec.eta,
                "theta1": spec.theta1,
                "theta2": spec.theta2,
                "method": m.method,
                "cp": m.cp,
                "ew": m.ew,
                "disncp": m.disncp,
                "mesncp": m.mesncp,
                "dnptnp": _nan_if_none(m.dnptnp),
                "good": m.good,
                "rejected_samples": m.rejected,
                "status": cell.status,
            })
    return pd.DataFrame(rows, columns=GRID_COLUMNS)


def summary_frame(medians) -> pd.DataFrame:
    rows = [{
        "method": m.method,
        "median_cp": _nan_if_none(m.cp),
        "median_ew": _nan_if_none(m.ew),
        "median_dnptnp": _nan_if_none(m.dnptnp),
    } for m in medians]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def eta_theta_means(cells, methods=METHODS) -> pd.DataFrame:
    """Mean CP, EW and DNPTNP per (eta, theta pair, method) over the finished cells."""
    frame = grid_frame([c for c in cells if not c.stalled])
    frame = frame[frame["method"].isin(methods)]
    if frame.empty:
        return pd.DataFrame(columns=MEANS_COLUMNS)
    order = {name: i for i, name in enumerate(methods)}
    means = (frame.groupby(["eta", "theta1", "theta2", "method"], sort=False)[["cp", "ew", "dnptnp"]]
             .mean()
             .reset_index()
             .rename(columns={"cp": "mean_cp", "ew": "mean_ew", "dnptnp": "mean_dnptnp"}))
    means["_order"] = means["method"].map(order)
    means = means.sort_values(["eta", "theta1", "theta2", "_order"], kind="mergesort")
    return means.drop(columns="_order").reset_index(drop=True)[MEANS_COLUMNS]


def appropriateness_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([{
        "method": r.method,
        "cp": r.cp,
        "ew": r.ew,
        "dnptnp": _nan_if_none(r.dnptnp),
        "cp_flag": r.cp_flag,
        "location_flag": r.location_flag,
        "width_flag": r.width_flag,
        "verdict": r.verdict,
    } for r in rows], columns=APPROPRIATENESS_COLUMNS)


# ----------------------------------------------------------------------------
# Rendering
# ----------------------------------------------------------------------------

def _six_digits(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def render_table(frame: pd.DataFrame) -> str:
    """Human table: 6 significant digits, Nonexistent limits spelled out."""
    shown = frame.copy()
    if "exists" in shown.columns:
        missing = ~shown["exists"].astype(bool)
        for column in ("lower", "upper", "width"):
            shown[column] = shown[column].astype(object)
            shown.loc[missing, column] = "Nonexistent"
    if "dnptnp" in shown.columns:
        shown["dnptnp"] = shown["dnptnp"].astype(object).where(shown["dnptnp"].notna(), "Missing")
    formatters = {c: _six_digits for c in shown.columns}
    return shown.to_string(index=False, formatters=formatters)


def render_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FULL_PRECISION, lineterminator="\n")


def _json_value(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if hasattr(value, "item"):
        return _json_value(value.item())
    return value


def render_json(frame: pd.DataFrame) -> str:
    records = [{k: _json_value(v) for k, v in row.items()} for row in frame.to_dict(orient="records")]
    return json.dumps(records, indent=2) + "\n"


RENDERERS = {"table": render_table, "csv": render_csv, "json": render_json}


def render(frame: pd.DataFrame, fmt: str) -> str:
    try:
        text = RENDERERS[fmt](frame)
    except KeyError:
        raise ConfigError(f"unknown output format {fmt!r}; choose from {', '.join(RENDERERS)}") from None
    return text if text.endswith("\n") else text + "\n"


def emit(text: str, path=None):
    """Write rendered output to ``path``, or return it for stdout when path is None."""
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    return None
