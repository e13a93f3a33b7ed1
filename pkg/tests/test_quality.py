import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_footprint
from wavecorrect.quality import (
    GeoidFormatError,
    GeoidRaster,
    QualityCriteria,
    apply_quality_filters,
    geoid_adjust,
    read_geoid_raster,
    write_geoid_raster,
)


def _reason(fp, criteria=QualityCriteria()):
    kept, rejected = apply_quality_filters([fp], criteria)
    return rejected[0][1] if rejected else None


@pytest.mark.parametrize(
    "overrides,reason",
    [
        ({}, None),
        ({"solar_elevation": -12.0}, None),
        ({"sensitivity": 0.89}, "sensitivity"),
        ({"sensitivity": 0.9}, None),
        ({"degrade_flag": 3, "sensitivity": 0.1}, "degrade flag"),
        ({"quality_flag": 0}, "quality flag"),
        ({"solar_elevation": 0.0}, "solar elevation"),
        ({"num_detected_modes": 1, "rh95": 8.0}, "mode count"),
        ({"num_detected_modes": 1, "rh95": 4.0}, None),
        ({"rh95": 31.0}, "rh95 max"),
        ({"dem_elevation": 151.0}, "dem difference"),
        ({"dem_elevation": 150.0}, None),
        ({"sensitivity": None}, "missing quality field"),
    ],
)
def test_first_failure(overrides, reason):
    assert _reason(make_footprint(**overrides)) == reason


def test_toggles():
    fp = make_footprint(solar_elevation=30.0, num_detected_modes=1, rh95=50.0)
    assert _reason(fp) == "solar elevation"
    assert _reason(fp, QualityCriteria(require_night=False)) == "mode count"
    assert _reason(fp, QualityCriteria.disabled()) is None
    assert _reason(make_footprint(sensitivity=None), QualityCriteria.disabled()) is None
    with pytest.raises(ValueError):
        QualityCriteria(max_rh95_m=float("nan"))


def test_partition_idempotent_and_order_free():
    rng = np.random.default_rng(0)
    fps = [
        make_footprint(shot=i, sensitivity=float(rng.uniform(0.8, 1)), rh95=float(rng.uniform(0, 35)),
                       num_detected_modes=int(rng.integers(0, 3)))
        for i in range(200)
    ]
    kept, rejected = apply_quality_filters(fps)
    assert len(kept) + len(rejected) == 200
    assert {f.shot_number for f in kept}.isdisjoint({f.shot_number for f, _ in rejected})
    assert apply_quality_filters(kept)[0] == kept
    rev_kept, _ = apply_quality_filters(fps[::-1])
    assert {f.shot_number for f in rev_kept} == {f.shot_number for f in kept}


def _raster(fn, nodata=None, ncols=6, nrows=5, cell=10.0, ox=0.0, oy=0.0):
    vals = np.empty((nrows, ncols))
    for r in range(nrows):
        for c in range(ncols):
            x = ox + (c + 0.5) * cell
            y = oy + (nrows - r - 0.5) * cell  # row 0 is the northern row
            vals[r, c] = fn(x, y)
    return GeoidRaster(ox, oy, cell, ncols, nrows, vals, nodata)


def test_geoid_constant_and_zero():
    fp = make_footprint(x=25.0, y=17.0)
    adj, rej = geoid_adjust([fp], _raster(lambda x, y: 54.3))
    a = adj[0]
    assert not rej
    assert a.elev_lowestmode == pytest.approx(fp.elev_lowestmode - 54.3, abs=1e-12)
    assert a.waveform.top_elevation == pytest.approx(fp.waveform.top_elevation - 54.3, abs=1e-12)
    assert a.rh == fp.rh and a.datum_adjustment == pytest.approx(54.3)
    same, _ = geoid_adjust([fp], _raster(lambda x, y: 0.0))
    assert same[0].elev_lowestmode == fp.elev_lowestmode


@given(st.floats(0, 60), st.floats(0, 50))
def test_bilinear_exact_on_plane(x, y):
    r = _raster(lambda x, y: 0.01 * x - 0.02 * y + 3.0)
    assert r.sample(x, y) == pytest.approx(0.01 * x - 0.02 * y + 3.0, abs=1e-9)


def test_cell_centres_and_continuity():
    rng = np.random.default_rng(1)
    table = rng.normal(size=(5, 6))
    r = GeoidRaster(0.0, 0.0, 10.0, 6, 5, table, None)
    assert r.sample(5.0, 45.0) == pytest.approx(table[0, 0], abs=1e-12)
    assert r.sample(35.0, 15.0) == pytest.approx(table[3, 3], abs=1e-12)
    for x in (10.0, 20.0, 30.0):
        assert abs(r.sample(x - 1e-10, 22.0) - r.sample(x + 1e-10, 22.0)) < 1e-9


def test_nodata_rules():
    vals = np.full((3, 3), -9999.0)
    vals[0, 0] = 2.0
    r = GeoidRaster(0.0, 0.0, 10.0, 3, 3, vals, -9999.0)
    assert r.sample(8.0, 22.0) == pytest.approx(2.0)  # one live corner carries the weight
    assert r.sample(25.0, 5.0) is None
    _, rej = geoid_adjust([make_footprint(x=25.0, y=5.0)], r)
    assert rej[0][1] == "no datum coverage"


def test_esri_round_trip(tmp_path):
    r = _raster(lambda x, y: x / 100.0, nodata=-9999.0)
    p = tmp_path / "g.asc"
    write_geoid_raster(p, r)
    back = read_geoid_raster(p)
    assert np.array_equal(back.values, r.values)
    assert (back.origin_x, back.cell_size, back.nodata) == (0.0, 10.0, -9999.0)


def test_esri_centre_header_and_errors(tmp_path):
    p = tmp_path / "c.asc"
    p.write_text("NCOLS 2\nNROWS 2\nXLLCENTER 5\nYLLCENTER 5\nCELLSIZE 10\n1 2\n3 4\n")
    r = read_geoid_raster(p)
    assert (r.origin_x, r.origin_y) == (0.0, 0.0)
    assert r.sample(5.0, 5.0) == 3.0
    bad = tmp_path / "bad.asc"
    bad.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 10\n1 2 3\n")
    with pytest.raises(GeoidFormatError):
        read_geoid_raster(bad)


def test_rh_preserved_by_adjust():
    fps = [make_footprint(shot=i, x=float(10 * i), y=20.0) for i in range(6)]
    adj, _ = geoid_adjust(fps, _raster(lambda x, y: 0.5 * x))
    for a, b in zip(adj, fps):
        d = b.elev_lowestmode - a.elev_lowestmode
        assert b.waveform.top_elevation - a.waveform.top_elevation == pytest.approx(d, abs=1e-12)
        assert a.rh == b.rh
        assert dataclasses.replace(a, elev_lowestmode=b.elev_lowestmode).shot_number == b.shot_number
