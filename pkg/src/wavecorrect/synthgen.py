"""Seeded synthetic scenes and orbits with known geolocation error.

Reported waveforms are simulated at the true shot position while the
reported coordinates carry an injected jitter, so the correcting offset is
known exactly: ``truth = -jitter``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .formats import write_footprint_file, write_truth_offsets
from .model import Footprint
from .pointcloud import PointCloud, read_point_cloud, write_las
from .simulator import SimParams, SimulationError, count_modes, simulate_waveform

GROUND_CLASS = 2
VEGETATION_CLASS = 5
SHOT_RATE_HZ = 242.0


@dataclass(frozen=True)
class Terrain:
    """``kind`` is ``flat``, ``ramp`` or ``sine``.

    ramp: ``z0 + gx*x + gy*y``; sine: ``z0 + amplitude/2 * (sin(2 pi x/L) + sin(2 pi y/L))``.
    """

    kind: str = "flat"
    z0: float = 0.0
    gradient: Tuple[float, float] = (0.0, 0.0)
    amplitude: float = 0.0
    wavelength: float = 100.0

    def __post_init__(self):
        if self.kind not in ("flat", "ramp", "sine"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "sine" and not self.wavelength > 0:
            raise ValueError("sine terrain needs a positive wavelength")

    def elevation(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "flat":
            return np.full(np.broadcast(x, y).shape, float(self.z0))
        if self.kind == "ramp":
            return self.z0 + self.gradient[0] * x + self.gradient[1] * y
        k = 2.0 * math.pi / self.wavelength
        return self.z0 + 0.5 * self.amplitude * (np.sin(k * x) + np.sin(k * y))


@dataclass(frozen=True)
class Tree:
    x: float
    y: float
    height: float
    crown_radius: float
    point_density: float
    crown_sigma: Optional[float] = None

    @property
    def sigma(self) -> float:
        return self.crown_sigma if self.crown_sigma is not None else self.crown_radius / 2.0


@dataclass(frozen=True)
class SceneSpec:
    extent: Tuple[float, float, float, float]  # min_x, min_y, max_x, max_y
    terrain: Terrain = Terrain()
    trees: Tuple[Tree, ...] = ()
    ground_density: float = 1.0
    seed: int = 0
    tile_size: float = 500.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError("scene extent has zero area")
        if not self.ground_density > 0:
            raise ValueError("ground density must be positive")
        if not self.tile_size > 0:
            raise ValueError("tile size must be positive")
        for t in self.trees:
            if not (x0 <= t.x <= x1 and y0 <= t.y <= y1):
                raise ValueError("tree outside scene extent")
            if not (t.point_density > 0 and t.crown_radius > 0):
                raise ValueError("tree densities and radii must be positive")
        object.__setattr__(self, "trees", tuple(self.trees))

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.extent
        return (x1 - x0) * (y1 - y0)

    def without_canopy(self) -> "SceneSpec":
        """Same ground points, trees removed (a clear-cut of the whole scene)."""
        return dataclasses.replace(self, trees=())


def random_trees(
    extent, count: int, seed: int, height=(10.0, 22.0), crown_radius=(2.5, 6.0), point_density=4.0
) -> Tuple[Tree, ...]:
    """Uniformly scattered trees with heights and crowns drawn uniformly."""
    rng = np.random.default_rng([seed, 7])
    x0, y0, x1, y1 = extent
    out = []
    for _ in range(count):
        out.append(Tree(
            float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)),
            float(rng.uniform(*height)), float(rng.uniform(*crown_radius)), float(point_density),
        ))
    return tuple(out)


def scene_points(spec: SceneSpec) -> PointCloud:
    """All points of the scene, in generation order (ground first)."""
    x0, y0, x1, y1 = spec.extent
    streams = np.random.SeedSequence(spec.seed).spawn(1 + len(spec.trees))
    rng = np.random.default_rng(streams[0])
    n = int(round(spec.area * spec.ground_density))
    gx = rng.uniform(x0, x1, n)
    gy = rng.uniform(y0, y1, n)
    xs, ys, zs, cs = [gx], [gy], [spec.terrain.elevation(gx, gy)], [np.full(n, GROUND_CLASS)]
    for tree, ss in zip(spec.trees, streams[1:]):
        trng = np.random.default_rng(ss)
        m = max(1, int(round(math.pi * tree.crown_radius ** 2 * tree.point_density)))
        r = tree.crown_radius * np.sqrt(trng.uniform(0.0, 1.0, m))
        a = trng.uniform(0.0, 2.0 * math.pi, m)
        tx = np.clip(tree.x + r * np.cos(a), x0, x1)
        ty = np.clip(tree.y + r * np.sin(a), y0, y1)
        base = spec.terrain.elevation(tx, ty)
        tz = base + np.maximum(trng.normal(tree.height, tree.sigma, m), 0.0)
        xs.append(tx)
        ys.append(ty)
        zs.append(tz)
        cs.append(np.full(m, VEGETATION_CLASS))
    return PointCloud(np.concatenate(xs), np.concatenate(ys), np.concatenate(zs), np.concatenate(cs))


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    tile_dir: Path
    tiles: Tuple[Path, ...]

    def load_points(self) -> PointCloud:
        return PointCloud.concatenate([read_point_cloud(p) for p in self.tiles])


def generate_scene(spec: SceneSpec, tile_dir) -> Scene:
    """Write the scene as LAS tiles on a ``tile_size`` grid."""
    tile_dir = Path(tile_dir)
    tile_dir.mkdir(parents=True, exist_ok=True)
    cloud = scene_points(spec)
    x0, y0, x1, y1 = spec.extent
    size = spec.tile_size
    nx = max(1, math.ceil((x1 - x0) / size))
    ny = max(1, math.ceil((y1 - y0) / size))
    ix = np.minimum(((cloud.x - x0) // size).astype(int), nx - 1)
    iy = np.minimum(((cloud.y - y0) // size).astype(int), ny - 1)
    paths = []
    for j in range(ny):
        for i in range(nx):
            sel = (ix == i) & (iy == j)
            if not sel.any():
                continue
            path = tile_dir / f"tile_{i:03d}_{j:03d}.las"
            write_las(path, cloud.x[sel], cloud.y[sel], cloud.z[sel], cloud.classification[sel])
            paths.append(path)
    return Scene(spec, tile_dir, tuple(paths))


# -------------------------------------------------------------------- orbits


@dataclass(frozen=True)
class JitterSpec:
    """Pointing error added to true positions: constant + sinusoid + white noise."""

    constant: Tuple[float, float] = (0.0, 0.0)
    amplitude: Tuple[float, float] = (0.0, 0.0)
    frequency_hz: float = 0.0
    phase: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frequency_hz < 0:
            raise ValueError("jitter frequency must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("jitter noise sigma must be >= 0")

    def evaluate(self, t) -> np.ndarray:
        """``(n, 2)`` jitter at times ``t``."""
        t = np.asarray(t, dtype=float)
        out = np.empty((t.size, 2))
        for axis in range(2):
            w = 2.0 * math.pi * self.frequency_hz
            out[:, axis] = self.constant[axis] + self.amplitude[axis] * np.sin(w * t + self.phase[axis])
        if self.noise_sigma > 0:
            out += np.random.default_rng(self.seed).normal(0.0, self.noise_sigma, out.shape)
        return out


@dataclass(frozen=True)
class TrackSpec:
    """Ground tracks running along +y, one per beam at fixed x."""

    beam_x: Tuple[float, ...]
    y_start: float
    n_shots: int
    ground_speed: float = 7000.0
    shot_rate_hz: float = SHOT_RATE_HZ

    @property
    def spacing(self) -> float:
        return self.ground_speed / self.shot_rate_hz


@dataclass
class Orbit:
    footprints: List[Footprint]
    truth: dict
    true_positions: dict = field(default_factory=dict)


def shot_number(beam: int, index: int) -> int:
    return (beam + 1) * 1_000_000 + index


def generate_orbit(
    scene: Scene,
    track: TrackSpec,
    jitter: JitterSpec = JitterSpec(),
    params: SimParams = SimParams(),
    out_file=None,
    truth_file=None,
    points: Optional[PointCloud] = None,
) -> Orbit:
    """Simulate reported shots along ``track`` over ``scene``.

    ``points`` defaults to the scene's tiles as written (after LAS
    quantisation), so the engine later sees exactly the same cloud.
    """
    x0, y0, x1, y1 = scene.spec.extent
    t = np.arange(track.n_shots) / track.shot_rate_hz
    ty = track.y_start + track.ground_speed * t
    for bx in track.beam_x:
        if not (x0 <= bx <= x1) or ty.min() < y0 or ty.max() > y1:
            raise ValueError("track outside scene")
    cloud = points if points is not None else scene.load_points()
    jit = jitter.evaluate(t)
    footprints, truth, true_pos = [], {}, {}
    for beam, bx in enumerate(track.beam_x):
        for i in range(track.n_shots):
            px, py = float(bx), float(ty[i])
            try:
                sim = simulate_waveform(cloud, px, py, params)
            except SimulationError:
                continue
            shot = shot_number(beam, i)
            rh95 = sim.rh.rh95
            modes = count_modes(sim.waveform, params)
            if rh95 >= 5.0:
                modes = max(modes, 2)
            footprints.append(Footprint(
                shot_number=shot,
                beam_id=beam,
                delta_time=float(i / track.shot_rate_hz),
                x=px + float(jit[i, 0]),
                y=py + float(jit[i, 1]),
                elev_lowestmode=sim.ground_elevation,
                rh=sim.rh,
                waveform=sim.waveform,
                sensitivity=0.95,
                quality_flag=1,
                degrade_flag=0,
                solar_elevation=-10.0,
                num_detected_modes=max(modes, 1),
                dem_elevation=float(scene.spec.terrain.elevation(px, py)),
            ))
            truth[shot] = (-float(jit[i, 0]), -float(jit[i, 1]))
            true_pos[shot] = (px, py)
    footprints.sort(key=lambda f: f.shot_number)
    if out_file is not None:
        write_footprint_file(out_file, footprints)
    if truth_file is not None:
        write_truth_offsets(truth_file, truth)
    return Orbit(footprints, truth, true_pos)
