import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_footprint
from wavecorrect.model import RH_PERCENTILES, RHProfile, SimulatedMetrics, Waveform
from wavecorrect.scoring import (
    METRIC_NAMES,
    MetricError,
    aged,
    crssda,
    kl_divergence,
    minmax_scores,
    normalize_to_distribution,
    parse_metric_set,
    pearson,
    rh95_change_filter,
    rh_distance,
    score_candidates,
    spearman,
)
from wavecorrect.simulator import candidate_set_from_metrics

distinct_vec = st.lists(st.integers(-1000, 1000), min_size=3, max_size=30, unique=True)


def test_normalize_examples():
    assert normalize_to_distribution([1, 1, 2]) == pytest.approx([0.25, 0.25, 0.5], abs=1e-9)
    out = normalize_to_distribution([-1, 0, 3])
    assert out[0] == out[1] == pytest.approx(1e-12 / 3, rel=1e-6)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(MetricError, match="degenerate waveform"):
        normalize_to_distribution([0, 0, 0])


def test_pearson_examples():
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    # product-moment by hand: 3.5 / sqrt(5 * 4.75)
    assert pearson([1, 2, 3, 4], [2, 4, 5, 4]) == pytest.approx(3.5 / math.sqrt(23.75), abs=1e-12)
    with pytest.raises(MetricError, match="constant input"):
        pearson([1, 1, 1], [1, 2, 3])


def test_spearman_examples():
    a = np.array([1.0, 2.0, 3.0, 5.0])
    assert spearman(a, np.exp(a)) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [9, 4, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 2, 3], [1, 3, 2, 4]) == pytest.approx(pearson([1, 2.5, 2.5, 4], [1, 3, 2, 4]))


def test_crssda_kl_aged_rh_examples():
    assert crssda([1, 0], [0, 1]) == pytest.approx(math.sqrt(2))
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3))
    eps = 1e-12
    big = kl_divergence([1 - eps, eps], [eps, 1 - eps])
    assert math.isfinite(big) and big > 20
    with pytest.raises(MetricError, match="not a distribution"):
        kl_divergence([0.5, 0.6], [0.5, 0.5])
    assert aged(100.0, 98.5) == pytest.approx(1.5)
    assert aged(-3.2, 4.8) == pytest.approx(8.0)
    base = RHProfile(RH_PERCENTILES, tuple(float(p) / 10 for p in RH_PERCENTILES))
    plus = RHProfile(RH_PERCENTILES, tuple(h + 1 for h in base.heights))
    assert rh_distance(base, base) == 0.0
    assert rh_distance(base, plus) == pytest.approx(4.0)


def test_parse_metric_set():
    assert parse_metric_set("kl terrain") == ("kl", "terrain")
    assert parse_metric_set(["kl", "rh_distance wave_pearson"]) == ("kl", "rh_distance", "wave_pearson")
    for bad in ("", "kl kl", "cosine"):
        with pytest.raises(MetricError):
            parse_metric_set(bad)


@settings(max_examples=200)
@given(distinct_vec, st.floats(0.1, 10), st.floats(-50, 50))
def test_correlations_affine_invariant(a, scale, shift):
    a = np.array(a, dtype=float)
    b = np.sin(np.arange(a.size)) + np.arange(a.size)
    assert abs(pearson(a * scale + shift, b) - pearson(a, b)) < 1e-9
    assert abs(spearman(a * scale + shift, b) - spearman(a, b)) < 1e-9


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_kl_nonnegative_and_triangle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 50))
    p = normalize_to_distribution(rng.uniform(0, 1, n))
    q = normalize_to_distribution(rng.uniform(0, 1, n))
    assert kl_divergence(p, q) >= 0
    assert kl_divergence(p, p) == 0
    x, y, z = rng.normal(size=(3, n))
    assert crssda(x, z) <= crssda(x, y) + crssda(y, z) + 1e-12


def test_minmax_direction_and_flat():
    raw = np.array([3.0, 1.0, 2.0, np.nan])
    s = minmax_scores(raw, smaller_is_better=True)
    assert s.tolist() == [0.0, 1.0, 0.5, 0.0]
    c = minmax_scores(np.array([-1.0, 0.0, 1.0]), smaller_is_better=False)
    assert c.tolist() == [0.0, 0.5, 1.0]
    assert minmax_scores(np.array([2.0, 2.0]), True).tolist() == [1.0, 1.0]


def _lattice_candidates(n_cands=9, seed=0):
    """Synthetic candidates: index 4 is identical to the reported waveform,
    the rest have the canopy mode moved progressively."""
    b = 0.15
    idx = np.arange(200)
    items = []
    for i in range(n_cands):
        shift = abs(i - 4) * 6
        a = np.exp(-0.5 * ((idx - 150) / 6) ** 2) + 0.7 * np.exp(-0.5 * ((idx - 50 - shift) / 6) ** 2)
        w = Waveform(30.0, b, a)
        rh = RHProfile(RH_PERCENTILES, tuple(np.linspace(0, 15 - shift * b, len(RH_PERCENTILES))))
        items.append(SimulatedMetrics(w, 7.5, rh, (float(i - 4), 0.0)))
    return items


def test_score_identical_candidate_wins():
    items = _lattice_candidates()
    fp = make_footprint(waveform=items[4].waveform, rh=items[4].rh, elev_lowestmode=7.5)
    cand = candidate_set_from_metrics(items)
    for metric in ("kl", "wave_pearson", "wave_distance", "rh_distance"):
        s = score_candidates(fp, cand, [metric]).scores
        assert s[4] == 1.0 and int(np.argmax(s)) == 4
        assert all(s[i] < 1.0 for i in range(9) if i != 4)


def test_score_flat_and_mean_and_failed():
    items = _lattice_candidates()
    fp = make_footprint(waveform=items[4].waveform, rh=items[4].rh, elev_lowestmode=7.5)
    cand = candidate_set_from_metrics(items)
    assert score_candidates(fp, cand, ["terrain"]).scores.tolist() == [1.0] * 9
    both = score_candidates(fp, cand, ["terrain", "kl"]).scores
    kl = score_candidates(fp, cand, ["kl"]).scores
    assert both == pytest.approx((kl + 1.0) / 2)
    items[0] = None
    s = score_candidates(fp, candidate_set_from_metrics(items), ["kl"])
    assert s.scores[0] == 0.0 and s.valid
    dead = score_candidates(fp, candidate_set_from_metrics([None] * 9), ["kl"])
    assert not dead.valid


def test_score_permutation_invariant_and_pure():
    items = _lattice_candidates()
    fp = make_footprint(waveform=items[4].waveform, rh=items[4].rh, elev_lowestmode=7.0)
    cand = candidate_set_from_metrics(items)
    a = score_candidates(fp, cand, list(METRIC_NAMES))
    b = score_candidates(fp, cand, list(reversed(METRIC_NAMES)))
    assert np.array_equal(a.scores, b.scores)
    assert score_candidates(fp, cand, list(METRIC_NAMES)) == a
    assert np.all((a.scores >= 0) & (a.scores <= 1))


def _with_rh95(v):
    w = Waveform(30.0, 0.15, [0.0, 1.0, 0.0])
    heights = tuple(v * p / 95 if p <= 95 else v for p in RH_PERCENTILES)
    return SimulatedMetrics(w, 0.0, RHProfile(RH_PERCENTILES, heights))


@pytest.mark.parametrize("reported,sim,keep", [(12, 11, True), (22, 5, False), (20, 10, True)])
def test_rh95_change_filter(reported, sim, keep):
    fp = make_footprint(rh95=reported)
    assert rh95_change_filter(fp, [_with_rh95(sim), None], 10.0) is keep
