import numpy as np
import pytest
from scipy import stats

from cluster_data import GroupData, Kind
from errors import BoundaryProportion, DegenerateDesign, ZeroVariance
from estimators import (
    anova_icc,
    df_adjustment,
    effective_size,
    resolve_effective_size,
    summarize_group,
    variance_equal_weights,
    variance_inflation,
    variance_optimal_weights,
    variance_ratio_estimator,
)

SIZES = [12, 7, 15, 9, 20, 11]
SUCCESSES = [5, 1, 9, 2, 6, 4]


@pytest.fixture
def group():
    return GroupData.from_counts(SIZES, SUCCESSES)


def test_icc_negative_raw_is_truncated():
    raw, icc = anova_icc(GroupData.from_pairs([(2, 1), (2, 1)]))
    assert raw == pytest.approx(-1.0)
    assert icc == 0.0


def test_icc_perfect_separation():
    raw, icc = anova_icc(GroupData.from_pairs([(2, 2), (2, 0)]))
    assert raw == pytest.approx(1.0)
    assert icc == pytest.approx(1.0)


def test_icc_undefined_for_singleton_clusters():
    g = GroupData.from_pairs([(1, 0), (1, 1), (1, 1)])
    with pytest.raises(DegenerateDesign):
        anova_icc(g)
    summary = summarize_group(g)
    assert not summary.icc_defined
    assert summary.icc_hat == 0.0
    assert summary.xi_hat == 1.0


def test_variance_inflation():
    g = GroupData.from_counts([10, 20], [1, 2])
    assert variance_inflation(g, 0.0) == pytest.approx(1.0)
    assert variance_inflation(g, 0.1) == pytest.approx((10 * 1.9 + 20 * 2.9) / 30)


def test_estimators_ignore_cluster_order(group):
    order = [3, 0, 5, 1, 4, 2]
    shuffled = GroupData.from_counts([SIZES[i] for i in order], [SUCCESSES[i] for i in order])
    assert anova_icc(shuffled) == anova_icc(group)
    assert variance_equal_weights(shuffled) == variance_equal_weights(group)
    assert variance_optimal_weights(shuffled, 0.2) == variance_optimal_weights(group, 0.2)
    assert variance_ratio_estimator(shuffled) == variance_ratio_estimator(group)


def test_equal_weight_variance_matches_sample_variance(group):
    p = np.array(SUCCESSES) / np.array(SIZES)
    v_eq, gamma = variance_equal_weights(group)
    assert gamma == pytest.approx(p.mean())
    assert v_eq == pytest.approx(p.var(ddof=1) / len(p))


def test_optimal_weights_reduce_to_size_weights_at_zero_icc(group):
    v_op, gamma = variance_optimal_weights(group, 0.0)
    assert gamma == pytest.approx(sum(SUCCESSES) / sum(SIZES))


def test_ratio_estimator_variance(group):
    n = np.array(SIZES, dtype=float)
    y = np.array(SUCCESSES, dtype=float)
    gamma = y.sum() / n.sum()
    expected = len(n) / (len(n) - 1) * np.sum((y - n * gamma) ** 2) / n.sum() ** 2
    assert variance_ratio_estimator(group) == pytest.approx(expected)


def test_df_adjustment(group):
    expected = (stats.t.ppf(0.975, sum(SIZES) - 1) / stats.t.ppf(0.975, len(SIZES) - 1)) ** 2
    assert df_adjustment(group, 0.05) == pytest.approx(expected, rel=1e-10)
    assert df_adjustment(group, 0.05) < 1.0
    assert df_adjustment(GroupData.from_pairs([(1, 0), (1, 1)]), 0.05) == 1.0


def test_effective_size_equal_weights(group):
    v_eq, gamma = variance_equal_weights(group)
    es = effective_size(group, Kind.EQ, 0.05)
    assert es.n_eff == pytest.approx(gamma * (1 - gamma) / v_eq * df_adjustment(group, 0.05))
    assert es.y_eff == pytest.approx(gamma * es.n_eff)
    assert not es.fallback


def test_effective_size_ratio_has_no_df_adjustment(group):
    es = effective_size(group, Kind.RE, 0.05)
    gamma = sum(SUCCESSES) / sum(SIZES)
    assert es.n_eff == pytest.approx(gamma * (1 - gamma) / variance_ratio_estimator(group))


def test_effective_size_unadjusted_counts(group):
    es = effective_size(group, Kind.NONE, 0.05)
    assert es.n_eff == sum(SIZES)
    assert es.y_eff == pytest.approx(sum(SUCCESSES))


def test_zero_variance_and_fallback():
    g = GroupData.from_pairs([(10, 3), (10, 3), (10, 3)])
    for kind in (Kind.EQ, Kind.OP, Kind.RE):
        with pytest.raises(ZeroVariance):
            effective_size(g, kind, 0.05)
        es = resolve_effective_size(g, kind, 0.05)
        assert es.fallback
        assert es.n_eff == 30
        assert es.y_eff == pytest.approx(9.0)


def test_boundary_proportion():
    g = GroupData.from_pairs([(10, 0), (8, 0), (12, 0)])
    with pytest.raises(BoundaryProportion):
        effective_size(g, Kind.EQ, 0.05)
    es = resolve_effective_size(g, Kind.EQ, 0.05)
    assert es.fallback and es.y_eff == 0.0


# --- worked examples -----------------------------------------------------------

def test_table1_anova_icc(table1_study):
    assert summarize_group(table1_study.treatment).icc_hat == pytest.approx(0.35, abs=0.005)
    assert summarize_group(table1_study.control).icc_hat == pytest.approx(0.12, abs=0.005)


def test_two_cluster_variances():
    g = GroupData.from_pairs([(10, 4), (10, 6)])
    v_eq, gamma = variance_equal_weights(g)
    assert gamma == pytest.approx(0.5)
    assert v_eq == pytest.approx(0.01)
    v_op, gamma_xi = variance_optimal_weights(g, 0.1)
    assert gamma_xi == pytest.approx(0.5)
    assert v_op == pytest.approx(0.01)
    assert variance_ratio_estimator(g) == pytest.approx(0.01)


def test_three_cluster_equal_weight_variance():
    v_eq, gamma = variance_equal_weights(GroupData.from_pairs([(2, 1), (4, 1), (4, 3)]))
    assert gamma == pytest.approx(0.5)
    assert v_eq == pytest.approx(0.125 / 6)


def test_ratio_effective_size_worked_example():
    es = effective_size(GroupData.from_pairs([(10, 4), (10, 6)]), Kind.RE, 0.05)
    assert es.n_eff == pytest.approx(25.0)
    assert es.y_eff == pytest.approx(12.5)


def test_variance_inflation_worked_example():
    assert variance_inflation(GroupData.from_counts([2, 4], [1, 2]), 0.5) == pytest.approx(13 / 6)
    assert variance_inflation(GroupData.from_counts([5, 5, 5], [1, 2, 3]), 0.25) == pytest.approx(2.0)


def test_optimal_weight_fallback_uses_anova_icc():
    g = GroupData.from_pairs([(10, 2), (20, 4), (5, 1)])
    es = resolve_effective_size(g, Kind.OP, 0.05)
    assert es.fallback
    expected = variance_optimal_weights(g, summarize_group(g).icc_hat)[1]
    assert es.gamma_used == pytest.approx(expected)
    assert es.gamma_used == pytest.approx(7 / 35)
