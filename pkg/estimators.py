"""
Point and variance estimators for one arm of a clustered binary study.

Sums go through math.fsum so every estimator is exactly invariant to the
order in which clusters are listed.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import stats

from cluster_data import EffectiveSize, GroupData, GroupSummary, Kind
from errors import BoundaryProportion, DegenerateDesign, ZeroVariance


@lru_cache(maxsize=256)
def z_quantile(alpha: float) -> float:
    """Upper alpha/2 quantile of the standard normal."""
    return float(stats.norm.ppf(1.0 - alpha / 2.0))


@lru_cache(maxsize=4096)
def t_quantile(alpha: float, df: float) -> float:
    """Upper alpha/2 quantile of Student's t with ``df`` degrees of freedom."""
    return float(stats.t.ppf(1.0 - alpha / 2.0, df))


def pooled_proportion(g: GroupData) -> float:
    """Overall sample proportion Y_i. / n_i."""
    return g.total_successes / g.total_size


def anova_components(g: GroupData):
    """
    Between and within mean squares of a group plus the ANOVA average cluster size.

    Returns:
        tuple: (bms, wms, n_star)

    Raises:
        DegenerateDesign: every cluster has size 1, so the within mean square is undefined
    """
    n = g.sizes
    y = g.successes
    m = g.num_clusters
    n_tot = float(g.total_size)
    y_tot = float(g.total_successes)
    within_df = n_tot - m
    if within_df <= 0:
        raise DegenerateDesign("all clusters have size 1; within-cluster mean square is undefined")

    ssq = math.fsum(y * y / n)
    bms = (ssq - y_tot * y_tot / n_tot) / (m - 1)
    wms = (y_tot - ssq) / within_df
    n_star = (n_tot * n_tot - math.fsum(n * n)) / ((m - 1) * n_tot)
    return bms, wms, n_star


def anova_icc(g: GroupData):
    """
    ANOVA estimate of the intraclass correlation.

    Args:
        g: Group with at least one cluster larger than 1

    Returns:
        tuple: (raw, truncated) where truncated is clipped to [0, 1]

    Raises:
        DegenerateDesign: within mean square or the ANOVA denominator is undefined
    """
    bms, wms, n_star = anova_components(g)
    denominator = bms + (n_star - 1.0) * wms
    if denominator == 0:
        raise DegenerateDesign("ANOVA denominator BMS + (n* - 1)WMS is zero")
    raw = (bms - wms) / denominator
    return raw, min(max(raw, 0.0), 1.0)


def variance_inflation(g: GroupData, theta: float) -> float:
    """Cluster-size weighted average of 1 + (n_ij - 1) theta."""
    n = g.sizes
    return math.fsum(n * (1.0 + (n - 1.0) * theta)) / g.total_size


def variance_equal_weights(g: GroupData):
    """
    Variance of the unweighted mean of cluster proportions.

    Returns:
        tuple: (v_eq, gamma_zeta)
    """
    m = g.num_clusters
    p = g.successes / g.sizes
    gamma_zeta = math.fsum(p) / m
    v_eq = math.fsum((p - gamma_zeta) ** 2) / (m * (m - 1))
    return v_eq, min(max(gamma_zeta, 0.0), 1.0)


def optimal_weights(g: GroupData, theta: float) -> np.ndarray:
    raw = g.sizes / (1.0 + (g.sizes - 1.0) * theta)
    return raw / math.fsum(raw)


def variance_optimal_weights(g: GroupData, theta: float):
    """
    Variance of the cluster proportions weighted by n_ij / [1 + (n_ij - 1) theta].

    Returns:
        tuple: (v_op, gamma_xi)
    """
    w = optimal_weights(g, theta)
    p = g.successes / g.sizes
    gamma_xi = math.fsum(w * p)
    v_op = math.fsum(w * (p - gamma_xi) ** 2) / (g.num_clusters - 1)
    return v_op, min(max(gamma_xi, 0.0), 1.0)


def variance_ratio_estimator(g: GroupData) -> float:
    """Ratio-estimator variance of the pooled proportion (squared residuals)."""
    m = g.num_clusters
    gamma = pooled_proportion(g)
    residuals = g.successes - g.sizes * gamma
    n_tot = float(g.total_size)
    return m / (m - 1.0) * math.fsum(residuals * residuals) / (n_tot * n_tot)


def df_adjustment(g: GroupData, alpha: float) -> float:
    """Squared ratio of t quantiles with n_i. - 1 and m_i - 1 degrees of freedom."""
    m = g.num_clusters
    n_tot = g.total_size
    if n_tot == m:
        return 1.0
    ratio = t_quantile(alpha, n_tot - 1) / t_quantile(alpha, m - 1)
    return ratio * ratio


def effective_size(g: GroupData, kind, alpha: float, theta=None) -> EffectiveSize:
    """
    Effective sample size and adjusted successes for one variance estimator.

    Args:
        g: Group data
        kind: Kind.EQ, Kind.OP, Kind.RE (or Kind.NONE for the unadjusted counts)
        alpha: Nominal error rate used by the degrees-of-freedom adjustment
        theta: Intraclass correlation for the optimal weights (ANOVA estimate if None)

    Returns:
        EffectiveSize

    Raises:
        BoundaryProportion: the paired proportion is 0 or 1
        ZeroVariance: the variance estimate is 0
    """
    kind = Kind(kind)
    gamma_pooled = pooled_proportion(g)

    if kind is Kind.NONE:
        n_tot = float(g.total_size)
        return EffectiveSize.build(kind, n_tot, gamma_pooled,
                                   gamma_pooled * (1.0 - gamma_pooled) / n_tot, gamma_pooled)

    if kind is Kind.EQ:
        variance, gamma = variance_equal_weights(g)
        adjustment = df_adjustment(g, alpha)
    elif kind is Kind.OP:
        if theta is None:
            theta = summarize_group(g).icc_hat
        variance, gamma = variance_optimal_weights(g, theta)
        adjustment = df_adjustment(g, alpha)
    else:
        variance = variance_ratio_estimator(g)
        gamma = gamma_pooled
        adjustment = 1.0

    if gamma <= 0.0 or gamma >= 1.0:
        raise BoundaryProportion(f"{kind.value} proportion is {gamma}; effective size needs 0 < gamma < 1")
    if variance <= 0.0:
        raise ZeroVariance(f"{kind.value} variance is zero; effective size is unbounded")

    n_eff = gamma * (1.0 - gamma) / variance * adjustment
    return EffectiveSize.build(kind, n_eff, gamma, variance, gamma_pooled)


def resolve_effective_size(g: GroupData, kind, alpha: float, theta=None) -> EffectiveSize:
    """effective_size, falling back to n_i. when the variance or proportion is degenerate."""
    try:
        return effective_size(g, kind, alpha, theta)
    except (ZeroVariance, BoundaryProportion):
        kind = Kind(kind)
        if kind is Kind.EQ:
            variance, gamma = variance_equal_weights(g)
        elif kind is Kind.OP:
            variance, gamma = variance_optimal_weights(g, summarize_group(g).icc_hat if theta is None else theta)
        else:
            variance, gamma = variance_ratio_estimator(g), pooled_proportion(g)
        return EffectiveSize.build(kind, float(g.total_size), gamma, variance,
                                   pooled_proportion(g), fallback=True)


def summarize_group(g: GroupData) -> GroupSummary:
    """Everything the hybrid interval needs from one arm, computed once."""
    gamma = pooled_proportion(g)
    try:
        bms, wms, n_star = anova_components(g)
    except DegenerateDesign:
        return GroupSummary(gamma, None, 0.0, 1.0, math.nan, math.nan, math.nan)

    try:
        raw, truncated = anova_icc(g)
    except DegenerateDesign:
        raw, truncated = None, 0.0
    return GroupSummary(
        gamma_hat=gamma,
        icc_raw=raw,
        icc_hat=truncated,
        xi_hat=variance_inflation(g, truncated),
        bms=bms,
        wms=wms,
        n_star=n_star,
    )
