"""Command-line entry points: ``wavecorrect`` (correction) and ``wavecorrect-synth``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .engine import EXIT_CONFIG, RunConfig, run_pipeline
from .model import CorrectionMode
from .quality import QualityCriteria
from .scoring import METRIC_NAMES


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wavecorrect",
        description="Correct horizontal geolocation of large-footprint lidar shots by waveform matching.",
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--granules_dir", help="directory of footprint .jsonl files")
    src.add_argument("--input_file", help="single footprint .jsonl file")
    p.add_argument("--las_dir", "--tile_dir", dest="tile_dir", required=True, help="point cloud tile directory")
    p.add_argument("--out_dir", required=True)
    p.add_argument("--save_sim_points", action="store_true", help="write every simulated candidate")
    p.add_argument("--save_origin_location", action="store_true", help="also simulate at the reported position")
    p.add_argument("--mode", default="orbit", choices=[m.value for m in CorrectionMode])
    p.add_argument(
        "--criteria", nargs="+", default=["wave_pearson"],
        help=f"space-separated metric names from: {' '.join(METRIC_NAMES)}",
    )
    p.add_argument("--grid_size", type=float, default=30.0, help="candidate grid span in metres")
    p.add_argument("--grid_step", type=float, default=1.0, help="candidate grid step in metres")
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--n_processes", type=int, default=8)
    p.add_argument("--time_window", type=float, default=0.04, help="footprint-mode cluster window, seconds")
    p.add_argument("--als_crs", default=None, help="tile CRS code (recorded only, no reprojection)")
    p.add_argument("--als_algorithm", default="convex", choices=["simple", "convex"])
    p.add_argument("--rh95_threshold", type=float, default=10.0)
    p.add_argument("--geoid", default=None, help="ESRI ASCII grid of datum differences")
    p.add_argument("--scratch_dir", default=None, help="root for per-run temporary directories")

    q = p.add_argument_group("quality filters")
    q.add_argument("--no_quality_filters", action="store_true", help="disable every quality check")
    q.add_argument("--no_degrade_check", action="store_true")
    q.add_argument("--no_quality_flag_check", action="store_true")
    q.add_argument("--allow_daytime", action="store_true")
    q.add_argument("--no_forest_mode_check", action="store_true")
    q.add_argument("--min_sensitivity", type=float, default=0.9)
    q.add_argument("--max_rh95", type=float, default=30.0)
    q.add_argument("--max_dem_diff", type=float, default=50.0)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.no_quality_filters:
        quality = QualityCriteria.disabled()
    else:
        quality = QualityCriteria(
            require_degrade_zero=not args.no_degrade_check,
            require_quality_one=not args.no_quality_flag_check,
            require_night=not args.allow_daytime,
            min_sensitivity=args.min_sensitivity,
            forest_mode_check=not args.no_forest_mode_check,
            max_rh95_m=args.max_rh95,
            max_dem_diff_m=args.max_dem_diff,
        )
    return RunConfig(
        tile_dir=args.tile_dir,
        out_dir=args.out_dir,
        input_file=args.input_file,
        granules_dir=args.granules_dir,
        mode=args.mode,
        criteria=tuple(args.criteria),
        grid_size=args.grid_size,
        grid_step=args.grid_step,
        parallel=args.parallel,
        n_workers=args.n_processes,
        time_window_s=args.time_window,
        boundary_mode=args.als_algorithm,
        rh95_threshold_m=args.rh95_threshold,
        quality=quality,
        geoid_path=args.geoid,
        save_sim_points=args.save_sim_points,
        save_origin_location=args.save_origin_location,
        tile_crs=args.als_crs,
        scratch_root=args.scratch_dir,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except ValueError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    summary = run_pipeline(cfg)
    for f in summary.files:
        state = "ok" if f.ok else f"FAILED: {f.error}"
        print(f"{f.input_file}: {state} {f.counts if f.ok else ''}".rstrip())
    return summary.exit_code


# ------------------------------------------------------------------ synthgen


def build_synth_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavecorrect-synth", description="Generate a synthetic scene and orbit.")
    p.add_argument("--out_dir", required=True)
    p.add_argument("--width", type=float, default=200.0)
    p.add_argument("--length", type=float, default=3000.0)
    p.add_argument("--trees", type=int, default=150)
    p.add_argument("--terrain_amplitude", type=float, default=5.0)
    p.add_argument("--terrain_wavelength", type=float, default=120.0)
    p.add_argument("--ground_density", type=float, default=1.0)
    p.add_argument("--beams", type=int, default=3)
    p.add_argument("--shots", type=int, default=100, help="shots per beam")
    p.add_argument("--jitter", type=float, nargs=2, default=(0.0, 0.0), metavar=("DX", "DY"))
    p.add_argument("--sine_amplitude", type=float, nargs=2, default=(0.0, 0.0), metavar=("AX", "AY"))
    p.add_argument("--sine_frequency", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    return p


def synth_main(argv: Optional[List[str]] = None) -> int:
    from pathlib import Path

    from .synthgen import JitterSpec, SceneSpec, Terrain, TrackSpec, generate_orbit, generate_scene, random_trees

    args = build_synth_parser().parse_args(argv)
    out = Path(args.out_dir)
    extent = (0.0, 0.0, args.width, args.length)
    spec = SceneSpec(
        extent,
        Terrain("sine", z0=100.0, amplitude=args.terrain_amplitude, wavelength=args.terrain_wavelength),
        random_trees(extent, args.trees, args.seed),
        args.ground_density,
        args.seed,
    )
    scene = generate_scene(spec, out / "tiles")
    margin = 50.0
    xs = [margin + (args.width - 2 * margin) * (i + 0.5) / args.beams for i in range(args.beams)]
    track = TrackSpec(tuple(xs), margin, args.shots)
    jitter = JitterSpec(tuple(args.jitter), tuple(args.sine_amplitude), args.sine_frequency, seed=args.seed)
    orbit = generate_orbit(scene, track, jitter, out_file=out / "orbit.jsonl", truth_file=out / "truth_offsets.csv")
    print(f"{len(scene.tiles)} tiles, {len(orbit.footprints)} footprints written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
