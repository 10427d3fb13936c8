import pytest
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.stats.proportion import proportion_confint

from sparsenet.stats import EmpiricalRate, wilson_interval


@pytest.mark.parametrize("hits,trials", [(0, 10), (0, 10**6), (5, 10), (10, 10), (1282, 10**6)])
def test_wilson_matches_statsmodels(hits, trials):
    lo, hi = wilson_interval(hits, trials)
    ref_lo, ref_hi = proportion_confint(hits, trials, alpha=0.05, method="wilson")
    assert lo == pytest.approx(ref_lo, abs=1e-12)
    assert hi == pytest.approx(ref_hi, abs=1e-12)


@given(st.integers(1, 10**7).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_interval_contains_rate(pair):
    hits, trials = pair
    r = EmpiricalRate.from_counts(hits, trials)
    assert 0 <= r.ci_low <= r.rate <= r.ci_high <= 1


def test_zero_hits_has_positive_upper_bound():
    r = EmpiricalRate.from_counts(0, 10**6)
    assert r.rate == 0 and 0 < r.ci_high < 1e-5


def test_merge_adds_counts():
    a = EmpiricalRate.from_counts(3, 10)
    assert a.merge(EmpiricalRate.from_counts(4, 20)) == EmpiricalRate.from_counts(7, 30)


def test_invalid_counts():
    with pytest.raises(ValueError):
        EmpiricalRate.from_counts(11, 10)
