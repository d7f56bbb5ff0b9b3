"""
Confidence intervals for the risk ratio eta = gamma_1 / gamma_2 from clustered binary data.

Seventeen procedures are provided:

    HB1          hybrid (MOVER) interval built from two cluster-adjusted Wilson intervals
    MK1..MK3     modified Katz log interval on effective sizes
    IH1..IH3     inverse hyperbolic sine interval on effective sizes
    KA1..KA3     Koopman asymptotic score interval on effective sizes
    DK1..DK3     Katz-transformed delta interval on effective sizes
    FB1..FB3     Bailey's cube-root Fieller interval on effective sizes
    MR3          Fieller interval with ratio-estimator variances

The suffix 1/2/3 selects the equal-weight, optimal-weight or ratio-estimator
effective sample size. Every method returns an IntervalResult; restriction
failures come back as Nonexistent results rather than exceptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from cluster_data import (
    METHODS,
    EffectiveSize,
    Flag,
    GroupData,
    IntervalResult,
    Kind,
    TwoGroupStudy,
)
from errors import BoundaryProportion, ClusterRRError, DegenerateGroup, RootNotBracketed, ValidationError
from estimators import (
    pooled_proportion,
    resolve_effective_size,
    summarize_group,
    variance_ratio_estimator,
    z_quantile,
)

# Relative slack for radicands and discriminants that should be exactly zero.
_ROUNDOFF = 1e-12
_BISECT_RTOL = 4 * np.finfo(float).eps

KINDS = (Kind.EQ, Kind.OP, Kind.RE)


@dataclass(frozen=True)
class MethodParams:
    """
    Tuning shared by all interval procedures.

    Args:
        alpha: Nominal error rate
        root_tolerance: Allowed |Psi(root) - chi2| relative to chi2 for the Koopman roots
        bracket_growth: Factor used to widen Koopman root brackets
        max_doublings: Bracket expansions allowed before RootNotBracketed
        koopman_form: "printed" uses Y_1. in the score brace, "standard" uses n_1.
        katz_radicand: "printed" adds 1/n terms to the Katz and inverse sinh
            log-variance, "standard" subtracts them (1/y - 1/n per group)
        fieller_pooled_gamma: Bailey intervals use the pooled proportion instead of
            the proportion matched to the effective size
    """

    alpha: float = 0.05
    root_tolerance: float = 1e-10
    bracket_growth: float = 2.0
    max_doublings: int = 60
    koopman_form: str = "printed"
    katz_radicand: str = "printed"
    fieller_pooled_gamma: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bracket_growth <= 1:
            raise ValidationError(f"bracket_growth must exceed 1, got {self.bracket_growth}")
        if self.koopman_form not in ("printed", "standard"):
            raise ValidationError(f"koopman_form must be 'printed' or 'standard', got {self.koopman_form!r}")
        if self.katz_radicand not in ("printed", "standard"):
            raise ValidationError(f"katz_radicand must be 'printed' or 'standard', got {self.katz_radicand!r}")

    @property
    def z(self) -> float:
        return z_quantile(self.alpha)

    @property
    def chi2(self) -> float:
        return self.z * self.z


def _clean_radicand(value: float, scale: float) -> float:
    """Snap tiny negative round-off to zero; genuinely negative values pass through."""
    if value < 0 and abs(value) <= _ROUNDOFF * abs(scale):
        return 0.0
    return value


def _method_name(prefix: str, kind: Kind, baseline: str) -> str:
    if kind is Kind.NONE:
        return baseline
    return f"{prefix}{kind.index}"


def _matched_kind(es1: EffectiveSize, es2: EffectiveSize) -> Kind:
    if es1.kind is not es2.kind:
        raise ValidationError(f"effective sizes must share a kind, got {es1.kind.value} and {es2.kind.value}")
    return es1.kind


def _fallback_flags(*sizes):
    return {Flag.EFFECTIVE_SIZE_FALLBACK} if any(es.fallback for es in sizes) else set()


def _icc_flags(s1, s2):
    flags = set()
    if s1.icc_truncated or s2.icc_truncated:
        flags.add(Flag.ICC_TRUNCATED)
    if not (s1.icc_defined and s2.icc_defined):
        flags.add(Flag.ICC_UNDEFINED)
    return flags


# ----------------------------------------------------------------------------
# Hybrid (MOVER) interval
# ----------------------------------------------------------------------------

def wilson_single(g: GroupData, alpha: float, summary=None):
    """
    Wilson score interval for one arm with the ANOVA variance inflation factor.

    Args:
        g: Group data
        alpha: Nominal error rate
        summary: Precomputed GroupSummary (computed when omitted)

    Returns:
        tuple: (lower, upper) inside [0, 1]
    """
    summary = summary or summarize_group(g)
    z = z_quantile(alpha)
    z2 = z * z
    n = float(g.total_size)
    y = float(g.total_successes)
    xi = summary.xi_hat
    gamma = summary.gamma_hat

    n_tilde = n + xi * z2
    centre = (y + 0.5 * xi * z2) / n_tilde
    half = z / n_tilde * math.sqrt(n * gamma * (1.0 - gamma) * xi + xi * xi * z2 / 4.0)
    return max(centre - half, 0.0), min(centre + half, 1.0)


def mover_ratio(l1, u1, l2, u2, gamma1_hat, gamma2_hat, method="HB1", flags=()):
    """
    Combine single-proportion limits into an interval for their ratio.

    Returns:
        IntervalResult: Nonexistent with the first violated restriction as reason
    """
    g1, g2 = gamma1_hat, gamma2_hat
    estimate = g1 / g2 if g2 > 0 else None
    product = g1 * g2
    lower_den = u2 * (2.0 * g2 - u2)
    upper_den = l2 * (2.0 * g2 - l2)

    if not lower_den > 0:
        return IntervalResult.nonexistent(method, "UPPER_DENOMINATOR_NONPOSITIVE", flags, estimate)
    if not upper_den > 0:
        return IntervalResult.nonexistent(method, "LOWER_DENOMINATOR_NONPOSITIVE", flags, estimate)

    lower_rad = _clean_radicand(product * product - l1 * (2.0 * g1 - l1) * lower_den, product * product)
    upper_rad = _clean_radicand(product * product - u1 * (2.0 * g1 - u1) * upper_den, product * product)
    if lower_rad < 0:
        return IntervalResult.nonexistent(method, "LOWER_RADICAND_NEGATIVE", flags, estimate)
    if upper_rad < 0:
        return IntervalResult.nonexistent(method, "UPPER_RADICAND_NEGATIVE", flags, estimate)

    lower = max((product - math.sqrt(lower_rad)) / lower_den, 0.0)
    upper = (product + math.sqrt(upper_rad)) / upper_den
    return IntervalResult(method, min(lower, upper), upper, estimate, frozenset(flags))


def hybrid_wilson(study: TwoGroupStudy, alpha: float, summaries=None) -> IntervalResult:
    """HB1: MOVER applied to the two cluster-adjusted Wilson intervals."""
    s1, s2 = summaries or (summarize_group(study.treatment), summarize_group(study.control))
    l1, u1 = wilson_single(study.treatment, alpha, s1)
    l2, u2 = wilson_single(study.control, alpha, s2)
    return mover_ratio(l1, u1, l2, u2, s1.gamma_hat, s2.gamma_hat, "HB1", _icc_flags(s1, s2))


# ----------------------------------------------------------------------------
# Effective-sample-size families
# ----------------------------------------------------------------------------

def _katz_radicand(y1, n1, y2, n2, form):
    if form == "standard":
        return 1.0 / y1 - 1.0 / n1 + 1.0 / y2 - 1.0 / n2
    return 1.0 / y1 + 1.0 / y2 + 1.0 / n1 + 1.0 / n2


def katz_modified(es1: EffectiveSize, es2: EffectiveSize, alpha: float, params=None) -> IntervalResult:
    """MK1-MK3: Katz log interval with +0.5 corrections on effective quantities."""
    params = params or MethodParams(alpha=alpha)
    kind = _matched_kind(es1, es2)
    for es in (es1, es2):
        if es.y_eff >= es.n_eff:
            raise DegenerateGroup("modified Katz interval needs n_eff != y_eff in both groups")

    y1, n1, y2, n2 = es1.y_eff + 0.5, es1.n_eff + 0.5, es2.y_eff + 0.5, es2.n_eff + 0.5
    estimate = (y1 * n2) / (y2 * n1)
    spread = z_quantile(alpha) * math.sqrt(_katz_radicand(y1, n1, y2, n2, params.katz_radicand))
    log_est = math.log(estimate)
    return IntervalResult(_method_name("MK", kind, "KATZ"), math.exp(log_est - spread),
                          math.exp(log_est + spread), estimate, _fallback_flags(es1, es2))


def _log_ratio_terms(es1: EffectiveSize, es2: EffectiveSize, form: str):
    for es in (es1, es2):
        if es.y_eff <= 0 or es.n_eff <= 0 or es.y_eff >= es.n_eff:
            raise DegenerateGroup("log-scale interval needs 0 < y_eff < n_eff in both groups")
    estimate = (es1.y_eff / es1.n_eff) / (es2.y_eff / es2.n_eff)
    radicand = _katz_radicand(es1.y_eff, es1.n_eff, es2.y_eff, es2.n_eff, form)
    return estimate, radicand


def inverse_sinh(es1: EffectiveSize, es2: EffectiveSize, alpha: float, params=None) -> IntervalResult:
    """IH1-IH3: inverse hyperbolic sine interval on effective quantities."""
    params = params or MethodParams(alpha=alpha)
    kind = _matched_kind(es1, es2)
    estimate, radicand = _log_ratio_terms(es1, es2, params.katz_radicand)
    spread = 2.0 * math.asinh(z_quantile(alpha) / 2.0 * math.sqrt(radicand))
    log_est = math.log(estimate)
    return IntervalResult(_method_name("IH", kind, "KATZ"), math.exp(log_est - spread),
                          math.exp(log_est + spread), estimate, _fallback_flags(es1, es2))


def katz_plain(es1: EffectiveSize, es2: EffectiveSize, alpha: float, params=None) -> IntervalResult:
    """Unmodified Katz log interval (no +0.5 corrections); comparison baseline."""
    params = params or MethodParams(alpha=alpha)
    estimate, radicand = _log_ratio_terms(es1, es2, params.katz_radicand)
    spread = z_quantile(alpha) * math.sqrt(radicand)
    log_est = math.log(estimate)
    return IntervalResult("KATZ", math.exp(log_est - spread), math.exp(log_est + spread), estimate,
                          _fallback_flags(es1, es2))


def koopman_psi(eta, y1, n1, y2, n2, form="printed"):
    """
    Koopman score statistic at a candidate ratio.

    Lambda is the constrained estimate of gamma_1 under ratio ``eta``, taken as the
    smaller root of its quadratic in the cancellation-free form.
    """
    total = n1 + n2
    b = eta * (n1 + y2) + y1 + n2
    disc = max(b * b - 4.0 * eta * total * (y1 + y2), 0.0)
    lam = 2.0 * eta * (y1 + y2) / (b + math.sqrt(disc))
    if not 0.0 < lam < 1.0:
        return math.inf
    weight = y1 if form == "printed" else n1
    resid = y1 - n1 * lam
    value = resid * resid / (n1 * lam * (1.0 - lam)) * (1.0 + weight * (eta - lam) / (n2 * (1.0 - lam)))
    return value if math.isfinite(value) else math.inf


def _expand_bracket(excess, start, factor, max_steps):
    """Walk geometrically from ``start`` (where excess < 0) until excess turns positive."""
    inner, outer = start, start * factor
    steps = 0
    while not excess(outer) > 0:
        steps += 1
        if steps > max_steps:
            raise RootNotBracketed(f"score equation not bracketed after {max_steps} expansions")
        inner, outer = outer, outer * factor
    return inner, outer, steps > 0


def koopman_score(es1: EffectiveSize, es2: EffectiveSize, alpha: float, params=None) -> IntervalResult:
    """
    KA1-KA3: roots of Psi(eta) = chi2 on either side of the sample ratio.

    Raises:
        DegenerateGroup: both groups all-failure, or either group all-success
        RootNotBracketed: a side could not be bracketed within max_doublings expansions
    """
    params = params or MethodParams(alpha=alpha)
    kind = _matched_kind(es1, es2)
    method = _method_name("KA", kind, "KATZ")
    y1, n1, y2, n2 = es1.y_eff, es1.n_eff, es2.y_eff, es2.n_eff
    if y1 <= 0 and y2 <= 0:
        raise DegenerateGroup("score interval needs successes in at least one group")
    if y1 >= n1 or y2 >= n2:
        # the score is infinite at the sample ratio, so no side can be bracketed
        raise DegenerateGroup("score interval needs failures in both groups")
    flags = _fallback_flags(es1, es2)
    if y2 <= 0:
        return IntervalResult.nonexistent(method, "ZERO_CONTROL_SUCCESSES", flags)

    chi2 = z_quantile(alpha) ** 2
    growth = params.bracket_growth

    def excess(eta):
        return koopman_psi(eta, y1, n1, y2, n2, params.koopman_form) - chi2

    estimate = (y1 / n1) / (y2 / n2)
    expanded = False
    if estimate > 0:
        if not excess(estimate) < 0:
            raise RootNotBracketed(f"score at the sample ratio {estimate:.6g} is not below the critical value")
        inner, outer, grew = _expand_bracket(excess, estimate, 1.0 / growth, params.max_doublings)
        lower = bisect(excess, outer, inner, xtol=1e-300, rtol=_BISECT_RTOL, maxiter=400)
        expanded |= grew
        start = estimate
    else:
        lower = 0.0
        start = 1.0
        steps = 0
        while not excess(start) < 0:
            steps += 1
            if steps > params.max_doublings:
                raise RootNotBracketed("no ratio with a score below the critical value")
            start /= growth

    inner, outer, grew = _expand_bracket(excess, start, growth, params.max_doublings)
    upper = bisect(excess, inner, outer, xtol=1e-300, rtol=_BISECT_RTOL, maxiter=400)
    expanded |= grew

    tolerance = params.root_tolerance * chi2
    for root in ((lower, upper) if estimate > 0 else (upper,)):
        if abs(excess(root)) > tolerance:
            raise RootNotBracketed(f"score residual at {root:.6g} exceeds tolerance")

    if expanded:
        flags.add(Flag.ROOT_BRACKET_EXPANDED)
    return IntervalResult(method, lower, upper, estimate, flags)


def _interior_gammas(es1: EffectiveSize, es2: EffectiveSize, pooled=False):
    g1 = es1.gamma_pooled if pooled else es1.gamma_used
    g2 = es2.gamma_pooled if pooled else es2.gamma_used
    for g in (g1, g2):
        if not 0.0 < g < 1.0:
            raise BoundaryProportion(f"proportion {g} must lie strictly inside (0, 1)")
    return g1, g2


def delta_katz(es1: EffectiveSize, es2: EffectiveSize, alpha: float) -> IntervalResult:
    """DK1-DK3: eta_hat * exp(+/- z sqrt(var(log eta_hat))) on effective sizes."""
    kind = _matched_kind(es1, es2)
    g1, g2 = _interior_gammas(es1, es2)
    variance = (1.0 - g1) / (es1.n_eff * g1) + (1.0 - g2) / (es2.n_eff * g2)
    estimate = g1 / g2
    factor = math.exp(z_quantile(alpha) * math.sqrt(variance))
    return IntervalResult(_method_name("DK", kind, "DELTA"), estimate / factor, estimate * factor,
                          estimate, _fallback_flags(es1, es2))


def delta_plain(es1: EffectiveSize, es2: EffectiveSize, alpha: float) -> IntervalResult:
    """Untransformed delta interval max(eta_hat -/+ z sd, 0); comparison baseline."""
    g1, g2 = _interior_gammas(es1, es2)
    estimate = g1 / g2
    sd = estimate * math.sqrt((1.0 - g1) / (es1.n_eff * g1) + (1.0 - g2) / (es2.n_eff * g2))
    half = z_quantile(alpha) * sd
    flags = _fallback_flags(es1, es2)
    if estimate - half < 0:
        flags.add(Flag.LOWER_CLAMPED_AT_ZERO)
    return IntervalResult("DELTA", max(estimate - half, 0.0), estimate + half, estimate, flags)


def fieller_bailey(es1: EffectiveSize, es2: EffectiveSize, alpha: float, params=None) -> IntervalResult:
    """
    FB1-FB3: Bailey's cube-root form of the Fieller interval with effective n.

    Returns:
        IntervalResult: Nonexistent with A_NONPOSITIVE or DISCRIMINANT_NEGATIVE
    """
    params = params or MethodParams(alpha=alpha)
    kind = _matched_kind(es1, es2)
    method = _method_name("FB", kind, "BAILEY")
    g1, g2 = _interior_gammas(es1, es2, params.fieller_pooled_gamma)
    z2 = z_quantile(alpha) ** 2
    flags = _fallback_flags(es1, es2)
    estimate = g1 / g2

    a = g2 ** (2.0 / 3.0) - z2 * (1.0 - g2) / (9.0 * es2.n_eff * g2 ** (1.0 / 3.0))
    b = (g1 * g2) ** (1.0 / 3.0)
    c = g1 ** (2.0 / 3.0) - z2 * (1.0 - g1) / (9.0 * es1.n_eff * g1 ** (1.0 / 3.0))
    if not a > 0:
        return IntervalResult.nonexistent(method, "A_NONPOSITIVE", flags, estimate)
    disc = _clean_radicand(b * b - a * c, b * b)
    if disc < 0:
        return IntervalResult.nonexistent(method, "DISCRIMINANT_NEGATIVE", flags, estimate)

    root = math.sqrt(disc)
    lower = ((b - root) / a) ** 3
    upper = ((b + root) / a) ** 3
    if lower < 0:
        lower = 0.0
        flags.add(Flag.LOWER_CLAMPED_AT_ZERO)
    return IntervalResult(method, min(lower, upper), upper, estimate, flags)


def fieller_quadratic(method, gamma1, gamma2, var1, var2, alpha, flags=()) -> IntervalResult:
    """Fieller interval [max((b - r)/a, 0), (b + r)/a] for a ratio of two proportions."""
    z2 = z_quantile(alpha) ** 2
    flags = set(flags)
    estimate = gamma1 / gamma2 if gamma2 > 0 else None
    a = gamma2 * gamma2 - z2 * var2
    b = gamma1 * gamma2
    c = gamma1 * gamma1 - z2 * var1
    if not a > 0:
        return IntervalResult.nonexistent(method, "A_NONPOSITIVE", flags, estimate)
    disc = _clean_radicand(b * b - a * c, b * b)
    if disc < 0:
        return IntervalResult.nonexistent(method, "DISCRIMINANT_NEGATIVE", flags, estimate)

    root = math.sqrt(disc)
    lower = (b - root) / a
    if lower < 0:
        lower = 0.0
        flags.add(Flag.LOWER_CLAMPED_AT_ZERO)
    upper = (b + root) / a
    return IntervalResult(method, min(lower, upper), upper, estimate, flags)


def mr3(study: TwoGroupStudy, alpha: float) -> IntervalResult:
    """MR3: Fieller interval on the raw study with ratio-estimator variances."""
    return fieller_quadratic(
        "MR3",
        pooled_proportion(study.treatment),
        pooled_proportion(study.control),
        variance_ratio_estimator(study.treatment),
        variance_ratio_estimator(study.control),
        alpha,
    )


# ----------------------------------------------------------------------------
# Batch evaluation
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyPreparation:
    """Per-group summaries and effective sizes, computed once per study."""

    summaries: tuple
    effective: dict = field(default_factory=dict)


class IntervalCalculator:
    """Runs all 17 procedures on a study, capturing individual method failures."""

    def __init__(self, params=None):
        """
        Args:
            params: MethodParams (defaults to alpha = 0.05)
        """
        self.params = params or MethodParams()

    @property
    def alpha(self):
        return self.params.alpha

    def prepare(self, study: TwoGroupStudy) -> StudyPreparation:
        s1 = summarize_group(study.treatment)
        s2 = summarize_group(study.control)
        effective = {}
        for kind in KINDS:
            effective[kind] = (
                resolve_effective_size(study.treatment, kind, self.alpha, s1.icc_hat),
                resolve_effective_size(study.control, kind, self.alpha, s2.icc_hat),
            )
        return StudyPreparation(summaries=(s1, s2), effective=effective)

    def _guard(self, method, fn, *args, flags=()):
        try:
            return fn(*args)
        except ClusterRRError as exc:
            return IntervalResult.nonexistent(method, exc.code, flags)

    def compute_all(self, study: TwoGroupStudy) -> list:
        """
        Compute the 17 intervals in the fixed order HB1, MK, IH, KA, DK, FB, MR3.

        Returns:
            list: IntervalResult per method; failures are Nonexistent results
        """
        prep = self.prepare(study)
        alpha = self.alpha
        results = {"HB1": self._guard("HB1", hybrid_wilson, study, alpha, prep.summaries,
                                      flags=_icc_flags(*prep.summaries))}

        for kind in KINDS:
            es1, es2 = prep.effective[kind]
            i = kind.index
            flags = _fallback_flags(es1, es2)
            for prefix, fn in (("MK", katz_modified), ("IH", inverse_sinh), ("KA", koopman_score),
                               ("DK", delta_katz), ("FB", fieller_bailey)):
                args = (es1, es2, alpha) if fn is delta_katz else (es1, es2, alpha, self.params)
                results[f"{prefix}{i}"] = self._guard(f"{prefix}{i}", fn, *args, flags=flags)

        results["MR3"] = self._guard("MR3", mr3, study, alpha)
        return [results[name] for name in METHODS]

    def baseline_methods(self, study: TwoGroupStudy) -> list:
        """Unadjusted Katz, delta, Fieller and Bailey intervals that ignore clustering."""
        alpha = self.alpha
        es1 = resolve_effective_size(study.treatment, Kind.NONE, alpha)
        es2 = resolve_effective_size(study.control, Kind.NONE, alpha)
        return [
            self._guard("KATZ", katz_plain, es1, es2, alpha, self.params),
            self._guard("DELTA", delta_plain, es1, es2, alpha),
            self._guard("FIELLER", fieller_quadratic, "FIELLER", es1.gamma_pooled, es2.gamma_pooled,
                        es1.variance, es2.variance, alpha),
            self._guard("BAILEY", fieller_bailey, es1, es2, alpha, self.params),
        ]


def compute_all(study: TwoGroupStudy, alpha: float = 0.05, params=None) -> list:
    """All 17 intervals for ``study`` at level 1 - alpha."""
    params = params or MethodParams(alpha=alpha)
    return IntervalCalculator(params).compute_all(study)
