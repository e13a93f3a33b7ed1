import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_footprint
from wavecorrect.correction import (
    ClusterWindow,
    NothingToCorrect,
    aggregate_beam,
    aggregate_footprint,
    aggregate_orbit,
    best_offset_index,
    cluster_footprints,
    generate_offset_grid,
    process_footprint,
    resimulate_and_emit,
    select_offsets,
    uncorrected_result,
)
from wavecorrect.model import CorrectionMode, ScoredFootprint, canonical_offset_index
from wavecorrect.simulator import SimParams, simulate_candidates, simulate_waveform

GRID = generate_offset_grid(10, 1)


def _peaked(shot, peak, beam=0, t=None, width=2.0, grid=GRID):
    offs = grid.offsets
    d2 = ((offs - np.array(peak)) ** 2).sum(axis=1)
    scores = np.exp(-d2 / (2 * width * width))
    return ScoredFootprint(shot, beam, shot / 242.0 if t is None else t, scores, True)


def _invalid(shot, beam=0, t=None):
    return ScoredFootprint(shot, beam, shot / 242.0 if t is None else t, None, False, "rh95 change")


@pytest.mark.parametrize("span,step,n,extreme", [(30, 1, 961, 15), (4, 2, 9, 2), (5, 2, 9, 2), (3, 1, 25, 2)])
def test_grid_examples(span, step, n, extreme):
    g = generate_offset_grid(span, step)
    assert len(g) == n
    assert g.offsets.max() == extreme
    assert canonical_offset_index(0, 0, g) == g.center_index


@pytest.mark.parametrize("span,step", [(0, 1), (30, 0), (-1, 1), (1, 2)])
def test_grid_bad_inputs(span, step):
    with pytest.raises(ValueError):
        generate_offset_grid(span, step)


def test_orbit_examples():
    same = [_peaked(i, (3, -4)) for i in range(10)]
    assert aggregate_orbit(same, GRID) == (3.0, -4.0)
    split = [_peaked(i, (2, 0)) for i in range(5)] + [_peaked(i + 5, (4, 0)) for i in range(5)]
    assert aggregate_orbit(split, GRID) == (3.0, 0.0)
    flat = [ScoredFootprint(i, 0, 0.0, np.ones(len(GRID)), True) for i in range(3)]
    assert aggregate_orbit(flat, GRID) == (0.0, 0.0)
    with pytest.raises(NothingToCorrect, match="nothing to correct"):
        aggregate_orbit([_invalid(1)], GRID)


def test_tie_break_magnitude_then_dy_dx():
    s = np.zeros(len(GRID))
    for dx, dy in [(1, 0), (0, 1), (-1, 0), (0, -1), (3, 3)]:
        s[canonical_offset_index(dx, dy, GRID)] = 1.0
    assert GRID.offset(best_offset_index(s, GRID)) == (0.0, -1.0)


def test_invalid_footprints_have_zero_weight():
    good = [_peaked(i, (2, 1)) for i in range(4)]
    assert aggregate_orbit(good + [_invalid(99)], GRID) == aggregate_orbit(good, GRID)


def test_beam_examples():
    scored = [_peaked(i, (3, 0), beam=0) for i in range(5)] + [_peaked(10 + i, (-2, 5), beam=1) for i in range(5)]
    assert aggregate_beam(scored, GRID) == {0: (3.0, 0.0), 1: (-2.0, 5.0)}
    single = [_peaked(i, (1, 1), beam=2) for i in range(3)]
    assert aggregate_beam(single, GRID) == {2: aggregate_orbit(single, GRID)}
    sel = select_offsets(scored + [_invalid(50, beam=3)], GRID, CorrectionMode.BEAM)
    assert sel.offsets[50] is None and sel.reasons[50] == "rh95 change"
    assert aggregate_beam([_peaked(1, (1, 1), beam=0), _invalid(3, beam=4)], GRID) == {0: (1.0, 1.0), 4: None}
    sel = select_offsets([_peaked(1, (1, 1), beam=0), _invalid(3, beam=4)], GRID, "beam")
    assert sel.offsets == {1: (1.0, 1.0), 3: None}


@pytest.mark.parametrize("window,lo,hi", [(0.2, 48, 49), (0.04, 9, 11), (0.0, 1, 1)])
def test_cluster_sizes_at_242hz(window, lo, hi):
    scored = [_peaked(i, (0, 0)) for i in range(400)]
    clusters = cluster_footprints(scored, ClusterWindow(window))
    interior = [len(clusters[i]) for i in range(100, 300)]
    assert min(interior) >= lo and max(interior) <= hi


def test_clusters_stay_on_beam_and_skip_invalid():
    scored = [_peaked(i, (0, 0), beam=i % 2, t=i * 0.001) for i in range(20)] + [_invalid(100, t=0.005)]
    clusters = cluster_footprints(scored, ClusterWindow(0.01))
    beam_of = {s.shot_number: s.beam_id for s in scored}
    for t, members in clusters.items():
        assert {beam_of[m] for m in members} == {beam_of[t]}
        assert 100 not in members
    assert 100 not in clusters


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=40, unique=True), st.floats(0, 0.5))
def test_cluster_symmetry(times, window):
    scored = [_peaked(i, (0, 0), t=t) for i, t in enumerate(times)]
    clusters = cluster_footprints(scored, ClusterWindow(window))
    for t, members in clusters.items():
        assert t in members
        for m in members:
            assert t in clusters[m]


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_aggregation_permutation_invariant(rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    scored = [
        ScoredFootprint(i, i % 3, i / 242.0, rng.uniform(size=len(GRID)), True) for i in range(30)
    ] + [_invalid(100)]
    shuffled = scored[:]
    rnd.shuffle(shuffled)
    for mode in CorrectionMode:
        assert select_offsets(scored, GRID, mode) == select_offsets(shuffled, GRID, mode)


def test_footprint_mode_isolated_and_constant():
    scored = [_peaked(i, (2, -3)) for i in range(30)]
    clusters = cluster_footprints(scored, ClusterWindow(0.04))
    per = aggregate_footprint(scored, clusters, GRID)
    assert set(per.values()) == {aggregate_orbit(scored, GRID)}
    lone = [_peaked(1, (4, 4), t=0.0), _peaked(2, (-1, 0), t=10.0)]
    sel = select_offsets(lone, GRID, CorrectionMode.FOOTPRINT, ClusterWindow(0.04))
    assert sel.offsets == {1: (4.0, 4.0), 2: (-1.0, 0.0)}
    assert sel.cluster_sizes == {1: 1, 2: 1}


def test_chosen_offsets_within_grid():
    rng = np.random.default_rng(0)
    scored = [ScoredFootprint(i, 0, i / 242.0, rng.uniform(size=len(GRID)), True) for i in range(50)]
    sel = select_offsets(scored, GRID, CorrectionMode.FOOTPRINT)
    for off in sel.offsets.values():
        canonical_offset_index(*off, GRID)
        assert math.hypot(*off) <= 5 * math.sqrt(2)


# ------------------------------------------------------------ simulate & score


def _plot_cloud(seed=0, extent=60.0):
    rng = np.random.default_rng(seed)
    n = 12000
    x, y = rng.uniform(-extent, extent, n), rng.uniform(-extent, extent, n)
    z = 0.02 * x + rng.normal(0, 0.05, n)
    pts = [np.column_stack([x, y, z])]
    # one tall tree east of the origin and a short one to the west
    for cx, h in ((5.0, 25.0), (-9.0, 8.0)):
        m = 600
        px, py = rng.normal(cx, 2.0, m), rng.normal(0.0, 2.0, m)
        pts.append(np.column_stack([px, py, rng.uniform(0.6, 1.0, m) * h]))
    return np.vstack(pts)


def test_process_footprint_recovers_shift():
    pts = _plot_cloud()
    params = SimParams()
    truth = simulate_waveform(pts, 0.0, 0.0, params)
    fp = make_footprint(
        x=-5.0, y=0.0, waveform=truth.waveform, rh=truth.rh, elev_lowestmode=truth.ground_elevation
    )
    out = process_footprint(fp, pts, GRID, params, ["kl"])
    assert out.scored.valid
    assert GRID.offset(int(np.argmax(out.scored.scores))) == (5.0, 0.0)


def test_process_footprint_failures():
    pts = _plot_cloud()
    far = make_footprint(x=1000.0, y=1000.0)
    out = process_footprint(far, pts, GRID, SimParams(), ["kl"])
    assert not out.scored.valid and out.scored.reason == "empty footprint"
    tall = make_footprint(x=0.0, y=30.0, rh95=40.0)
    out = process_footprint(tall, pts, GRID, SimParams(), ["kl"], keep_candidates=True)
    assert not out.scored.valid and out.scored.reason == "rh95 change"
    assert len(out.candidates) == len(GRID)


def test_resimulate_center_matches_candidate():
    pts = _plot_cloud()
    fp = make_footprint(x=1.0, y=2.0)
    cand = simulate_candidates(pts, fp.x, fp.y, GRID.offsets)
    r = resimulate_and_emit(fp, (0.0, 0.0), pts, SimParams(), final_score=0.9, origin=True)
    assert r.status == "corrected" and not r.discarded
    assert r.simulated == cand.metrics(GRID.center_index)
    assert r.origin_simulated == r.simulated
    r = resimulate_and_emit(fp, (3.0, -2.0), pts, SimParams())
    assert (r.corrected_x, r.corrected_y) == (4.0, 0.0)
    assert r.simulated == cand.metrics(canonical_offset_index(3, -2, GRID))


def test_resimulate_outside_coverage_discarded():
    pts = _plot_cloud(extent=10.0)
    fp = make_footprint(x=45.0, y=0.0)
    r = resimulate_and_emit(fp, (5.0, 0.0), pts, SimParams())
    assert r.discarded and r.status == "discarded" and r.reason == "empty footprint"
    u = uncorrected_result(fp, "orbit", "rejected", "quality flag")
    assert u.discarded and u.chosen_offset is None and (u.original_x, u.original_y) == (45.0, 0.0)
