import math
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pytest

from wavecorrect.model import RH_PERCENTILES, Footprint, RHProfile, Waveform
from wavecorrect.synthgen import JitterSpec, SceneSpec, Terrain, TrackSpec, generate_orbit, generate_scene, random_trees

# criterion number -> {"title": str, "outcomes": [(nodeid, passed)]}
_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_collection_modifyitems(config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            _CRITERIA.setdefault(num, {"title": title, "outcomes": {}})
            _CRITERIA[num]["outcomes"][item.nodeid] = None


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["outcomes"]:
            if report.when == "call" or report.outcome == "failed" or report.skipped:
                prev = entry["outcomes"][report.nodeid]
                ok = report.outcome == "passed"
                entry["outcomes"][report.nodeid] = ok if prev is None else (prev and ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        entry = _CRITERIA[num]
        results = list(entry["outcomes"].values())
        if any(r is None for r in results):
            state = "NOT RUN"
        else:
            state = "PASS" if all(results) else "FAIL"
        tr.write_line(f"criterion {num:2d}: {state}  {entry['title']}")
        if len(results) > 1:
            for nodeid, ok in entry["outcomes"].items():
                sub = "not run" if ok is None else ("pass" if ok else "fail")
                tr.write_line(f"    {sub:7s} {nodeid.split('::')[-1]}")


# ----------------------------------------------------------------- helpers


def make_footprint(shot=1, beam=0, t=0.0, x=0.0, y=0.0, rh95=12.0, **overrides) -> Footprint:
    """Footprint passing every default quality check unless overridden."""
    heights = tuple(rh95 * p / 95.0 if p <= 95 else rh95 + 1.0 for p in RH_PERCENTILES)
    fields = dict(
        shot_number=shot, beam_id=beam, delta_time=t, x=x, y=y, elev_lowestmode=100.0,
        rh=RHProfile(RH_PERCENTILES, heights),
        waveform=Waveform(130.05, 0.15, np.linspace(0.0, 1.0, 40)),
        sensitivity=0.95, quality_flag=1, degrade_flag=0, solar_elevation=-10.0,
        num_detected_modes=3, dem_elevation=101.0,
    )
    fields.update(overrides)
    return Footprint(**fields)


def crit2_spec() -> SceneSpec:
    extent = (0.0, 0.0, 200.0, 3000.0)
    return SceneSpec(
        extent, Terrain("sine", z0=100.0, amplitude=5.0, wavelength=120.0),
        random_trees(extent, 150, seed=1), ground_density=1.0, seed=3,
    )


CRIT2_TRACK = TrackSpec((60.0, 100.0, 140.0), 50.0, 100)


@pytest.fixture(scope="session")
def crit2_scene(tmp_path_factory):
    """Criterion-2 scene: 200 x 3000 m, sine terrain, 150 trees, constant jitter (7, -4)."""
    root = tmp_path_factory.mktemp("crit2")
    scene = generate_scene(crit2_spec(), root / "tiles")
    orbit = generate_orbit(
        scene, CRIT2_TRACK, JitterSpec(constant=(7.0, -4.0)),
        out_file=root / "orbit.jsonl", truth_file=root / "truth_offsets.csv",
    )
    return {"root": root, "scene": scene, "orbit": orbit, "input": root / "orbit.jsonl"}


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """A quick 200 x 1200 m scene with constant jitter for engine-level tests."""
    root = tmp_path_factory.mktemp("small")
    extent = (0.0, 0.0, 200.0, 1200.0)
    spec = SceneSpec(
        extent, Terrain("sine", z0=50.0, amplitude=5.0, wavelength=120.0),
        random_trees(extent, 60, seed=4), ground_density=1.0, seed=9,
    )
    scene = generate_scene(spec, root / "tiles")
    orbit = generate_orbit(
        scene, TrackSpec((70.0, 130.0), 50.0, 30), JitterSpec(constant=(3.0, -2.0)),
        out_file=root / "orbit.jsonl", truth_file=root / "truth_offsets.csv",
    )
    return {"root": root, "scene": scene, "orbit": orbit, "input": root / "orbit.jsonl"}


def rel_close(a, b, rel=1e-9, floor=1e-15) -> bool:
    return abs(a - b) <= rel * abs(b) + floor


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
