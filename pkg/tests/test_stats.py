import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from greenscan.errors import InsufficientDataError, UndefinedCorrelationError, ValidationError
from greenscan.stats import (aggregate_by, bland_altman, bland_altman_points, correlation_matrix,
                             pearson, t_two_tailed_p)

# Two-tailed Student-t tail probabilities from adaptive quadrature of the
# density at 40 digits (regenerated below when mpmath is available).
P_TABLE = [
    (0.5, 1, 0.70483276469913345),
    (1.0, 1, 0.5),
    (2.0, 3, 0.13932596855884318),
    (2.5, 5, 0.054490099342376241),
    (0.1, 8, 0.9228049094305969),
    (3.0, 10, 0.013343655022569577),
    (1.96, 38, 0.057359235561142366),
    (4.0, 38, 0.00028239058141957445),
    (0.7, 98, 0.48558571094387851),
    (6.5, 200, 6.2672344103117449e-10),
]


@pytest.mark.parametrize("t,df,expected", P_TABLE)
def test_t_p_values_against_table(t, df, expected):
    assert t_two_tailed_p(t, df) == pytest.approx(expected, abs=1e-8, rel=1e-8)
    assert t_two_tailed_p(-t, df) == t_two_tailed_p(t, df)


def test_p_table_regenerates():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 30
    for t, df, expected in P_TABLE:
        c = mp.gamma((df + 1) / mp.mpf(2)) / (mp.sqrt(df * mp.pi) * mp.gamma(df / mp.mpf(2)))
        tail = mp.quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / mp.mpf(2)), [t, mp.inf])
        assert abs(float(2 * tail) - expected) <= 1e-15 * max(1.0, expected)


def test_t_p_closed_forms():
    # df = 1 is Cauchy: p = 1 - 2 atan(|t|) / pi ; df = 2: p = 1 - |t| / sqrt(2 + t^2)
    for t in (0.0, 0.3, 1.7, 12.0):
        assert t_two_tailed_p(t, 1) == pytest.approx(1 - 2 * math.atan(t) / math.pi, abs=1e-14)
        assert t_two_tailed_p(t, 2) == pytest.approx(1 - t / math.sqrt(2 + t * t), abs=1e-14)
    assert t_two_tailed_p(float("inf"), 5) == 0.0


def test_pearson_perfect_linear(rng):
    x = rng.normal(size=12)
    res = pearson(x, 2 * x + 1)
    assert res.r == pytest.approx(1.0, abs=1e-15)
    assert res.p < 0.05 and res.significant()
    assert pearson(x, -3 * x).r == pytest.approx(-1.0, abs=1e-15)


def test_pearson_zero_covariance():
    res = pearson([1, 2, 3, 4, 5], [1, 4, 5, 4, 1])
    assert res.r == pytest.approx(0.0, abs=1e-15)
    assert res.p == pytest.approx(1.0, abs=1e-12)
    assert not res.significant()


def test_pearson_hand_example():
    # x = 1..5, y = (2, 4, 5, 4, 5): sxy = 6, sxx = 10, syy = 6
    res = pearson([1, 2, 3, 4, 5], [2, 4, 5, 4, 5])
    r = 6 / math.sqrt(60)
    assert res.r == pytest.approx(r, abs=1e-15)
    t = r * math.sqrt(3 / (1 - r * r))
    assert res.p == pytest.approx(t_two_tailed_p(t, 3), abs=1e-15)
    assert res.n == 5


def test_pearson_errors():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(InsufficientDataError):
        pearson([1, 2], [2, 1])
    with pytest.raises(ValidationError):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(ValidationError):
        pearson([1, 2, float("nan")], [1, 2, 3])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=25),
       st.floats(0.01, 100), st.floats(-50, 50), st.floats(0.01, 100), st.floats(-50, 50))
def test_pearson_affine_invariance(pairs, a, b, c, d):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
    r = pearson(x, y).r
    assert pearson(a * x + b, c * y + d).r == pytest.approx(r, abs=1e-12)
    assert pearson(-x, y).r == pytest.approx(-r, abs=1e-12)


def test_bland_altman_plus_minus_one():
    ba = bland_altman([1.0, 3.0], [2.0, 2.0])
    assert ba.mean_diff == 0.0
    assert ba.sd_diff == pytest.approx(math.sqrt(2), abs=1e-15)
    assert ba.upper_loa == pytest.approx(2.772, abs=5e-4)
    assert ba.lower_loa == pytest.approx(-2.772, abs=5e-4)
    assert ba.outside_count == 0


def test_bland_altman_constant_offset():
    ref = [0.1, 0.4, 0.35, 0.8]
    ba = bland_altman([v + 0.25 for v in ref], ref)
    assert ba.mean_diff == pytest.approx(0.25, abs=1e-15)
    assert ba.sd_diff == pytest.approx(0.0, abs=1e-15)
    assert ba.upper_loa == pytest.approx(0.25) and ba.lower_loa == pytest.approx(0.25)
    assert ba.outside_count == 0


def test_bland_altman_identity():
    ba = bland_altman([0.2, 0.5, 0.9], [0.2, 0.5, 0.9])
    assert (ba.mean_diff, ba.sd_diff, ba.upper_loa, ba.lower_loa, ba.outside_count) == \
        (0.0, 0.0, 0.0, 0.0, 0)


def test_bland_altman_counts_outliers():
    diffs = [0.0] * 30 + [10.0]
    ba = bland_altman(diffs, [0.0] * 31)
    assert ba.outside_count == 1
    assert ba.lower_loa <= ba.mean_diff <= ba.upper_loa
    pts = bland_altman_points([3.0, 1.0], [1.0, 1.0])
    assert pts == [(2.0, 2.0), (1.0, 0.0)]


def test_correlation_matrix_examples(rng):
    a = rng.normal(size=50)
    m = correlation_matrix({"a": a, "b": a.copy(), "neg": -a, "flat": np.ones(50)})
    assert m.get("a", "b") == pytest.approx(1.0, abs=1e-15)
    assert m.get("a", "neg") == pytest.approx(-1.0, abs=1e-15)
    assert m.get("flat", "a") is None and m.get("flat", "flat") is None
    assert [m.values[i, i] for i in range(3)] == [1.0, 1.0, 1.0]
    assert np.array_equal(np.nan_to_num(m.values), np.nan_to_num(m.values.T))
    assert m.to_rows()[3] == [None] * 4


def test_correlation_matrix_independent_columns():
    r = np.random.default_rng(7)
    m = correlation_matrix({k: r.normal(size=1000) for k in "xyz"})
    off = m.values[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off) < 0.1)


def test_correlation_matrix_length_checks():
    with pytest.raises(ValidationError):
        correlation_matrix({"a": [1, 2, 3], "b": [1, 2]})
    with pytest.raises(InsufficientDataError):
        correlation_matrix({"a": [1, 2], "b": [2, 1]})


def row(species, condition, ndvi, ctd=0.0):
    return {"species": species, "condition": condition, "measured_ndvi": ndvi,
            "measured_ctd": ctd}


def test_aggregates():
    groups = aggregate_by([row("Red Pine", "good", 0.3, 1.0), row("Red Pine", "good", 0.5, 3.0),
                           row("Eastern White Pine", "fair", 0.46, -2.0)])
    assert [g.key for g in groups] == [("Eastern White Pine", "fair"), ("Red Pine", "good")]
    single, pair = groups
    assert single.ndvi_mean == 0.46 and single.ndvi_sd is None and single.ctd_sd is None
    assert pair.ndvi_mean == pytest.approx(0.4)
    assert pair.ndvi_sd == pytest.approx(0.1414, abs=5e-5)
    assert pair.ctd_mean == 2.0 and pair.n == 2
    assert aggregate_by([]) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(-1, 1)), min_size=1, max_size=30),
       st.randoms())
def test_aggregates_permutation_invariant(items, rnd):
    rows = [row(s, "good", v) for s, v in items]
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a, b = aggregate_by(rows), aggregate_by(shuffled)
    assert [g.key for g in a] == [g.key for g in b]
    for ga, gb in zip(a, b):
        assert ga.ndvi_mean == gb.ndvi_mean
