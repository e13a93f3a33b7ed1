import math

import numpy as np
import pytest

from wavecorrect.pointcloud import read_point_cloud
from wavecorrect.synthgen import (
    JitterSpec,
    SceneSpec,
    Terrain,
    TrackSpec,
    Tree,
    generate_orbit,
    generate_scene,
    scene_points,
    shot_number,
)


def test_flat_density_exact():
    spec = SceneSpec((0.0, 0.0, 100.0, 100.0), Terrain("flat", z0=0.0), (), ground_density=4.0, seed=1)
    pts = scene_points(spec)
    assert len(pts) == 40_000
    assert np.all(pts.z == 0.0)


def test_tree_reaches_its_height():
    tree = Tree(50.0, 50.0, 15.0, 3.0, 20.0)
    spec = SceneSpec((0.0, 0.0, 100.0, 100.0), Terrain("flat"), (tree,), ground_density=0.5, seed=2)
    pts = scene_points(spec)
    top = pts.z.max()
    # crown heights are Gaussian: the sample maximum sits around +3 sigma
    assert 15.0 < top <= 15.0 + 4.5 * tree.sigma


def test_terrain_forms():
    assert Terrain("ramp", z0=1.0, gradient=(0.1, -0.2)).elevation(10.0, 5.0) == pytest.approx(1.0)
    s = Terrain("sine", z0=0.0, amplitude=2.0, wavelength=40.0)
    assert s.elevation(10.0, 10.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        Terrain("cliff")


def test_zero_area_rejected():
    with pytest.raises(ValueError):
        SceneSpec((0.0, 0.0, 0.0, 10.0), Terrain("flat"), (), 1.0, 0)


def test_same_seed_byte_identical(tmp_path):
    spec = SceneSpec((0.0, 0.0, 300.0, 700.0), Terrain("sine", amplitude=3.0), (Tree(100, 100, 20, 4, 10),), 0.5, 11)
    a = generate_scene(spec, tmp_path / "a")
    b = generate_scene(spec, tmp_path / "b")
    assert [p.name for p in a.tiles] == [p.name for p in b.tiles] and len(a.tiles) == 2
    for pa, pb in zip(a.tiles, b.tiles):
        assert pa.read_bytes() == pb.read_bytes()
    total = sum(len(read_point_cloud(p)) for p in a.tiles)
    assert total == len(scene_points(spec))


def test_jitter_closed_form():
    j = JitterSpec((1.0, -2.0), (6.0, 0.0), 2.0, (0.0, 0.5))
    t = np.arange(100) / 242.0
    got = j.evaluate(t)
    assert np.allclose(got[:, 0], 1.0 + 6.0 * np.sin(4 * math.pi * t), atol=1e-12)
    assert np.allclose(got[:, 1], -2.0, atol=1e-12)
    with pytest.raises(ValueError):
        JitterSpec(frequency_hz=-1.0)


@pytest.fixture(scope="module")
def tiny_scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    spec = SceneSpec(
        (0.0, 0.0, 120.0, 400.0), Terrain("ramp", z0=10.0, gradient=(0.0, 0.02)),
        (Tree(60.0, 120.0, 18.0, 4.0, 8.0), Tree(60.0, 250.0, 12.0, 3.0, 8.0)), 1.0, 5,
    )
    return generate_scene(spec, root / "tiles"), root


def test_orbit_truth_and_timing(tiny_scene):
    scene, root = tiny_scene
    jitter = JitterSpec((7.0, -4.0))
    orbit = generate_orbit(scene, TrackSpec((40.0, 80.0), 50.0, 10), jitter, out_file=root / "o.jsonl",
                           truth_file=root / "t.csv")
    assert len(orbit.footprints) == 20
    for fp in orbit.footprints:
        assert orbit.truth[fp.shot_number] == (-7.0, 4.0)
        tx, ty = orbit.true_positions[fp.shot_number]
        dx, dy = orbit.truth[fp.shot_number]
        assert abs(fp.x + dx - tx) < 1e-9 and abs(fp.y + dy - ty) < 1e-9
        i = fp.shot_number - shot_number(fp.beam_id, 0)
        assert fp.delta_time == i / 242.0
    assert (root / "o.jsonl").exists() and (root / "t.csv").exists()


def test_orbit_waveform_from_true_position(tiny_scene):
    from wavecorrect.simulator import simulate_waveform

    scene, _ = tiny_scene
    orbit = generate_orbit(scene, TrackSpec((60.0,), 110.0, 3), JitterSpec((5.0, 0.0)))
    cloud = scene.load_points()
    for fp in orbit.footprints:
        tx, ty = orbit.true_positions[fp.shot_number]
        assert fp.waveform == simulate_waveform(cloud, tx, ty).waveform
        if fp.rh.rh95 >= 5:
            assert fp.num_detected_modes >= 2


def test_track_outside_scene(tiny_scene):
    scene, _ = tiny_scene
    with pytest.raises(ValueError, match="track outside scene"):
        generate_orbit(scene, TrackSpec((500.0,), 50.0, 3))
