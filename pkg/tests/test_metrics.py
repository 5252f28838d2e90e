import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsebench.errors import EmptyList, LengthMismatch, ZeroVariance
from pulsebench.metrics import MetricsReport, bland_altman, error_stats, video_level_hr


def brute_stats(p, g):
    """Pure-python recomputation with the statistics module."""
    e = [a - b for a, b in zip(p, g)]
    n = len(e)
    return dict(
        mae=sum(abs(x) for x in e) / n,
        rmse=math.sqrt(sum(x * x for x in e) / n),
        sd=statistics.stdev(e),
        rho=statistics.correlation(p, g) if hasattr(statistics, "correlation") else _pearson(p, g),
    )


def _pearson(p, g):
    mp, mg = sum(p) / len(p), sum(g) / len(g)
    num = sum((a - mp) * (b - mg) for a, b in zip(p, g))
    return num / math.sqrt(sum((a - mp) ** 2 for a in p) * sum((b - mg) ** 2 for b in g))


def test_two_pair_example():
    r = error_stats([72, 75], [70, 80])
    assert r.mae == 3.5
    assert r.rmse == pytest.approx(math.sqrt(14.5), abs=1e-12)


def test_constant_offset():
    g = np.array([60.0, 70, 85, 90])
    r = error_stats(g + 5, g)
    assert r.rho == pytest.approx(1.0, abs=1e-12) and r.mae == 5


def test_sample_sd():
    assert error_stats([1, 0], [0, 1]).sd == pytest.approx(math.sqrt(2), abs=1e-12)


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 30))
        p, g = rng.normal(80, 10, n).tolist(), rng.normal(80, 10, n).tolist()
        r, ref = error_stats(p, g), brute_stats(p, g)
        for k in ("mae", "rmse", "sd", "rho"):
            assert abs(getattr(r, k) - ref[k]) < 1e-9
        assert r.mae <= r.rmse


def test_errors():
    with pytest.raises(LengthMismatch):
        error_stats([1, 2], [1])
    with pytest.raises(LengthMismatch):
        error_stats([1], [1])
    with pytest.raises(ZeroVariance):
        error_stats([70, 70], [60, 80])


def test_non_strict_returns_nan():
    r = error_stats([70.0], [70.0], strict=False)
    assert r.mae == 0 and math.isnan(r.rho) and math.isnan(r.sd)
    assert json.loads(r.to_json())["rho"] is None


def test_report_json_roundtrip():
    r = error_stats([72, 75, 80], [70, 80, 79])
    d = json.loads(r.to_json())
    assert set(d) == {"sd", "mae", "rmse", "rho", "n", "per_video"}
    assert MetricsReport.from_dict(d) == r


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.1, 10), b=st.floats(-100, 100))
def test_rho_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    p, g = rng.normal(size=10), rng.normal(size=10)
    assert error_stats(a * p + b, g).rho == pytest.approx(error_stats(p, g).rho, abs=1e-9)
    assert error_stats(p, a * g + b).rho == pytest.approx(error_stats(p, g).rho, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=2, max_size=40))
def test_mae_le_rmse_and_mean_diff(pairs):
    p, g = zip(*pairs)
    r = error_stats(p, g, strict=False)
    assert r.mae <= r.rmse * (1 + 1e-12) + 1e-12
    ba = bland_altman(p, g)
    assert ba.mean_diff == pytest.approx(np.mean(p) - np.mean(g), abs=1e-9)
    assert ba.loa_lo <= ba.mean_diff <= ba.loa_hi


def test_bland_altman_example():
    ba = bland_altman([2, 4], [0, 0])
    assert ba.mean_diff == 3
    assert ba.sd_diff == pytest.approx(math.sqrt(2))
    assert ba.loa_lo == pytest.approx(3 - 2.7719, abs=1e-4)
    assert ba.loa_hi == pytest.approx(3 + 2.7719, abs=1e-4)
    assert ba.points == [(1.0, 2.0), (2.0, 4.0)]


def test_bland_altman_identity():
    ba = bland_altman([70, 80, 90], [70, 80, 90])
    assert (ba.mean_diff, ba.loa_lo, ba.loa_hi) == (0, 0, 0)


def test_bland_altman_coverage_monte_carlo():
    rng = np.random.default_rng(11)
    inside = []
    for _ in range(200):
        g = rng.uniform(60, 100, 100)
        p = g + rng.normal(0, 3, 100)
        ba = bland_altman(p, g)
        d = p - g
        inside.append(np.sum((d >= ba.loa_lo) & (d <= ba.loa_hi)))
    assert abs(np.mean(inside) - 95) <= 4


def test_video_level_hr():
    assert video_level_hr([72, 74, 76]) == 74
    assert video_level_hr([80]) == 80
    with pytest.raises(EmptyList):
        video_level_hr([])
