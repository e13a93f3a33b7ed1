"""Pipeline orchestration: input screening, parallel scoring, selection, output.

One coordinator process reads inputs, fans footprints out to a worker pool
in contiguous chunks, sorts the compact results by shot number and does all
aggregation and writing itself. Per-file outputs therefore depend only on
the configuration and inputs, never on worker count or scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
import os
import shutil
import tempfile
import time
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .correction import (
    ClusterWindow,
    FootprintOutcome,
    generate_offset_grid,
    process_footprint,
    resimulate_and_emit,
    select_offsets,
    uncorrected_result,
)
from .evaluation import build_report, write_report, write_scatter
from .formats import FormatError, read_footprint_file, write_correction_output
from .model import CorrectionMode, CorrectionResult, Footprint, OffsetGrid, ScoredFootprint, canonical_offset_index
from .pointcloud import (
    PointCloud,
    TileBoundary,
    build_boundary_index,
    convex_intersects_rect,
    read_point_cloud,
    select_tiles,
)
from .quality import QualityCriteria, apply_quality_filters, geoid_adjust, read_geoid_raster
from .scoring import MetricError, parse_metric_set
from .simulator import SimParams

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ALL_FAILED, EXIT_CONFIG = 0, 1, 2
SELECTION_BUFFER_M = 50.0
SCRATCH_PREFIX = "wavecorrect-run-"
SIM_POINT_COLUMNS = (
    "shot_number", "candidate", "dx", "dy", "x", "y", "ground_elevation", "rh95", "score",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    tile_dir: str
    out_dir: str
    input_file: Optional[str] = None
    granules_dir: Optional[str] = None
    mode: str = "orbit"
    criteria: Tuple[str, ...] = ("wave_pearson",)
    grid_size: float = 30.0
    grid_step: float = 1.0
    parallel: bool = False
    n_workers: int = 8
    time_window_s: float = 0.04
    boundary_mode: str = "convex"
    rh95_threshold_m: float = 10.0
    quality: QualityCriteria = field(default_factory=QualityCriteria)
    geoid_path: Optional[str] = None
    save_sim_points: bool = False
    save_origin_location: bool = False
    tile_crs: Optional[str] = None
    scratch_root: Optional[str] = None
    sim_params: SimParams = field(default_factory=SimParams)

    def validate(self) -> None:
        if (self.input_file is None) == (self.granules_dir is None):
            raise ConfigError("give exactly one of input_file or granules_dir")
        if not Path(self.tile_dir).is_dir():
            raise ConfigError(f"tile directory not found: {self.tile_dir}")
        if self.granules_dir is not None and not Path(self.granules_dir).is_dir():
            raise ConfigError(f"granules directory not found: {self.granules_dir}")
        try:
            CorrectionMode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}") from None
        try:
            self.criteria = parse_metric_set(self.criteria)
            generate_offset_grid(self.grid_size, self.grid_step)
        except (MetricError, ValueError) as err:
            raise ConfigError(str(err)) from None
        if not (isinstance(self.n_workers, int) and self.n_workers >= 1):
            raise ConfigError("n_workers must be an integer >= 1")
        if not self.time_window_s >= 0:
            raise ConfigError("time window must be >= 0")
        if self.boundary_mode not in ("simple", "convex"):
            raise ConfigError("boundary mode must be simple or convex")
        if not self.rh95_threshold_m >= 0:
            raise ConfigError("rh95 threshold must be >= 0")
        if self.geoid_path is not None and not Path(self.geoid_path).is_file():
            raise ConfigError(f"geoid raster not found: {self.geoid_path}")

    def input_files(self) -> List[Path]:
        if self.input_file is not None:
            return [Path(self.input_file)]
        return sorted(p for p in Path(self.granules_dir).iterdir() if p.suffix == ".jsonl")

    def echo(self) -> dict:
        d = asdict(self)
        d["criteria"] = list(self.criteria)
        return d


# ------------------------------------------------------------------- scratch


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def purge_stale_scratch(root) -> List[Path]:
    """Remove run directories whose owning process is gone."""
    removed = []
    root = Path(root)
    if not root.is_dir():
        return removed
    for d in sorted(root.glob(SCRATCH_PREFIX + "*")):
        lock = d / "owner.pid"
        try:
            pid = int(lock.read_text().strip())
        except (OSError, ValueError):
            pid = -1
        if pid > 0 and _pid_alive(pid):
            continue
        shutil.rmtree(d, ignore_errors=True)
        removed.append(d)
    return removed


class ScratchArea:
    """Per-run temp directory holding one isolated sub-directory per worker."""

    def __init__(self, root=None, run_id: Optional[str] = None):
        root = Path(root or tempfile.gettempdir())
        try:
            root.mkdir(parents=True, exist_ok=True)
            purge_stale_scratch(root)
            self.run_id = run_id or uuid.uuid4().hex[:12]
            self.path = root / f"{SCRATCH_PREFIX}{self.run_id}"
            self.path.mkdir()
            (self.path / "owner.pid").write_text(str(os.getpid()))
        except OSError as err:
            raise ConfigError(f"scratch root not writable: {err}") from None

    def cleanup(self) -> None:
        shutil.rmtree(self.path, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.cleanup()


@dataclass(frozen=True)
class ScratchDir:
    path: Path
    prefix: str

    def file(self, name: str) -> Path:
        return self.path / f"{self.prefix}_{name}"


def allocate_scratch(run_dir, worker_id: int) -> ScratchDir:
    """Isolated directory for one worker; file names carry ``w<id>_<pid>``."""
    prefix = f"w{worker_id}_{os.getpid()}"
    path = Path(run_dir) / prefix
    path.mkdir(parents=True, exist_ok=True)
    return ScratchDir(path, prefix)


# -------------------------------------------------------------- worker side


@dataclass(frozen=True)
class WorkerContext:
    boundaries: Tuple[TileBoundary, ...]
    grid: OffsetGrid
    params: SimParams
    metrics: Tuple[str, ...]
    threshold_m: float
    save_sim_points: bool = False
    scratch_run_dir: Optional[str] = None
    # Fault injection for tests: a worker process hard-exits on these shots;
    # "raise" shots fail everywhere, including the coordinator retry.
    fault_exit_shots: FrozenSet[int] = frozenset()
    fault_raise_shots: FrozenSet[int] = frozenset()


_CTX: Optional[WorkerContext] = None
_SCRATCH: Optional[ScratchDir] = None
_IN_WORKER = False


def _init_worker(ctx: WorkerContext, counter) -> None:
    global _CTX, _SCRATCH, _IN_WORKER
    _CTX = ctx
    _IN_WORKER = True
    with counter.get_lock():
        counter.value += 1
        wid = counter.value
    _SCRATCH = allocate_scratch(ctx.scratch_run_dir, wid) if ctx.scratch_run_dir else None
    _tile_points.cache_clear()


@lru_cache(maxsize=16)
def _tile_points(path: str) -> PointCloud:
    return read_point_cloud(path)


@lru_cache(maxsize=4)
def _merged_points(paths: Tuple[str, ...]) -> PointCloud:
    return PointCloud.concatenate([_tile_points(p) for p in paths])


def local_points(boundaries: Sequence[TileBoundary], x: float, y: float, half: float) -> PointCloud:
    """Points of every tile meeting the square ``(x, y) +- half``, cropped to it."""
    box = (x - half, y - half, x + half, y + half)
    paths = tuple(sorted(b.path for b in boundaries if b.valid and convex_intersects_rect(b.polygon, *box)))
    if not paths:
        return PointCloud.empty()
    return _merged_points(paths).crop(*box)


def _search_half_width(grid: OffsetGrid, params: SimParams) -> float:
    return grid.half_count * grid.step_s + params.radius + 1.0


def _score_one(fp: Footprint, ctx: WorkerContext) -> FootprintOutcome:
    if fp.shot_number in ctx.fault_raise_shots:
        raise RuntimeError(f"injected failure on shot {fp.shot_number}")
    if _IN_WORKER and fp.shot_number in ctx.fault_exit_shots:
        os._exit(13)
    pts = local_points(ctx.boundaries, fp.x, fp.y, _search_half_width(ctx.grid, ctx.params))
    return process_footprint(
        fp, pts, ctx.grid, ctx.params, ctx.metrics, ctx.threshold_m, keep_candidates=ctx.save_sim_points
    )


def _write_rows(scratch: ScratchDir, chunk_id: int, rows: List[tuple]) -> str:
    final = scratch.file(f"chunk{chunk_id:06d}_simpoints.csv")
    tmp = final.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow(r)
    os.replace(tmp, final)
    return str(final)


def _run_chunk(chunk_id: int, footprints: Sequence[Footprint], ctx=None, scratch=None):
    ctx = ctx or _CTX
    scratch = scratch or _SCRATCH
    scored, rows = [], []
    for fp in footprints:
        out = _score_one(fp, ctx)
        scored.append(out.scored)
        if out.candidates:
            rows.extend(out.candidates)
    rows_path = _write_rows(scratch, chunk_id, rows) if ctx.save_sim_points and scratch else None
    return scored, rows_path


def _chunks(items: Sequence, n_workers: int) -> List[Sequence]:
    if not items:
        return []
    size = max(1, math.ceil(len(items) / (4 * n_workers)))
    return [items[i : i + size] for i in range(0, len(items), size)]


@dataclass
class PoolResult:
    scored: List[ScoredFootprint]
    sim_point_files: List[str]
    retried: int = 0


def worker_pool_map(footprints: Sequence[Footprint], n_workers: int, ctx: WorkerContext) -> PoolResult:
    """Score every footprint exactly once; results sorted by shot number.

    ``n_workers == 1`` runs in-process. A chunk whose worker dies or raises is
    retried once on the coordinator; footprints failing again are marked
    invalid with reason "worker failure".
    """
    if n_workers < 1:
        raise ConfigError("worker count must be >= 1")
    footprints = sorted(footprints, key=lambda f: f.shot_number)
    chunks = _chunks(footprints, n_workers)
    coord_scratch = allocate_scratch(ctx.scratch_run_dir, 0) if ctx.scratch_run_dir else None
    outcomes: Dict[int, tuple] = {}
    failed: List[int] = []

    if n_workers == 1:
        for i, chunk in enumerate(chunks):
            try:
                outcomes[i] = _run_chunk(i, chunk, ctx, coord_scratch)
            except Exception as err:  # noqa: BLE001 - any data failure becomes a record
                log.warning("chunk %d failed: %s", i, err)
                failed.append(i)
    else:
        counter = multiprocessing.Value("i", 0)
        with ProcessPoolExecutor(
            max_workers=n_workers, initializer=_init_worker, initargs=(ctx, counter)
        ) as pool:
            futures = {i: pool.submit(_run_chunk, i, chunk) for i, chunk in enumerate(chunks)}
            for i, fut in futures.items():
                try:
                    outcomes[i] = fut.result()
                except Exception as err:  # noqa: BLE001 - includes BrokenProcessPool
                    log.warning("chunk %d failed in worker: %s", i, err)
                    failed.append(i)

    retried = 0
    for i in failed:
        retried += len(chunks[i])
        scored, rows = [], []
        for fp in chunks[i]:
            try:
                out = _score_one(fp, ctx)
            except Exception as err:  # noqa: BLE001
                log.warning("shot %d failed twice: %s", fp.shot_number, err)
                scored.append(ScoredFootprint(fp.shot_number, fp.beam_id, fp.delta_time, None, False, "worker failure"))
                continue
            scored.append(out.scored)
            rows.extend(out.candidates or [])
        path = _write_rows(coord_scratch, i, rows) if ctx.save_sim_points and coord_scratch else None
        outcomes[i] = (scored, path)

    scored_all: List[ScoredFootprint] = []
    files = []
    for i in sorted(outcomes):
        s, p = outcomes[i]
        scored_all.extend(s)
        if p:
            files.append(p)
    scored_all.sort(key=lambda s: s.shot_number)
    return PoolResult(scored_all, files, retried)


# ------------------------------------------------------------- coordinator


@dataclass
class FileOutcome:
    input_file: str
    ok: bool
    error: str = ""
    outputs: List[str] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)
    seconds: float = 0.0


def _pipeline_context(cfg: RunConfig, boundaries, grid, scratch: ScratchArea, **faults) -> WorkerContext:
    return WorkerContext(
        tuple(boundaries), grid, cfg.sim_params, tuple(cfg.criteria), cfg.rh95_threshold_m,
        cfg.save_sim_points, str(scratch.path), **faults,
    )


def correct_file(
    path: Path, cfg: RunConfig, boundaries, scratch: ScratchArea, faults: Optional[dict] = None
) -> FileOutcome:
    started = time.perf_counter()
    out_dir = Path(cfg.out_dir)
    try:
        footprints = read_footprint_file(path)
    except (OSError, FormatError, ValueError) as err:
        return FileOutcome(str(path), False, str(err))

    mode = CorrectionMode(cfg.mode)
    grid = generate_offset_grid(cfg.grid_size, cfg.grid_step)
    params = cfg.sim_params
    results: Dict[int, CorrectionResult] = {}

    def reject(fp: Footprint, status: str, reason: str) -> None:
        results[fp.shot_number] = uncorrected_result(fp, mode, status, reason)

    work = footprints
    if cfg.geoid_path:
        work, no_datum = geoid_adjust(work, read_geoid_raster(cfg.geoid_path))
        for fp, reason in no_datum:
            reject(fp, "rejected", reason)
    work, rejected = apply_quality_filters(work, cfg.quality)
    for fp, reason in rejected:
        reject(fp, "rejected", reason)
    selected = []
    for fp in work:
        if select_tiles(boundaries, fp.x, fp.y, SELECTION_BUFFER_M):
            selected.append(fp)
        else:
            reject(fp, "out_of_coverage", "no point cloud coverage")

    ctx = _pipeline_context(cfg, boundaries, grid, scratch, **(faults or {}))
    n = cfg.n_workers if cfg.parallel else 1
    pool = worker_pool_map(selected, n, ctx)
    by_shot = {fp.shot_number: fp for fp in selected}
    selection = select_offsets(pool.scored, grid, mode, ClusterWindow(cfg.time_window_s))
    half = _search_half_width(grid, params)

    for s in pool.scored:
        fp = by_shot[s.shot_number]
        chosen = selection.offsets.get(s.shot_number)
        if chosen is None:
            reason = selection.reasons.get(s.shot_number) or s.reason or "not corrected"
            pts = local_points(boundaries, fp.x, fp.y, half) if cfg.save_origin_location else None
            results[s.shot_number] = uncorrected_result(
                fp, mode, "uncorrected", reason, pts, params, cfg.save_origin_location
            )
            continue
        pts = local_points(boundaries, fp.x, fp.y, half)
        score = float(s.scores[canonical_offset_index(chosen[0], chosen[1], grid)])
        res = resimulate_and_emit(
            fp, chosen, pts, params, mode, score,
            selection.cluster_sizes.get(s.shot_number), cfg.save_origin_location,
        )
        results[s.shot_number] = res

    ordered = [results[k] for k in sorted(results)]
    stem = path.stem
    outputs = []
    corrected = out_dir / f"{stem}_corrected.jsonl"
    write_correction_output(corrected, ordered)
    outputs.append(corrected)

    reports = build_report(ordered, by_shot)
    counts = {}
    for r in ordered:
        counts[r.status] = counts.get(r.status, 0) + 1
    report_path = out_dir / f"{stem}_report.json"
    write_report(report_path, reports, {"counts": dict(sorted(counts.items())), "n_input": len(footprints)})
    scatter = out_dir / f"{stem}_scatter.csv"
    write_scatter(scatter, ordered, by_shot)
    outputs += [report_path, scatter]

    if cfg.save_sim_points:
        sim_path = out_dir / f"{stem}_sim_points.csv"
        _merge_sim_points(pool.sim_point_files, sim_path)
        outputs.append(sim_path)

    return FileOutcome(
        str(path), True, "", [str(p) for p in outputs], counts, time.perf_counter() - started
    )


def _merge_sim_points(files: Sequence[str], dest: Path) -> None:
    rows = []
    for f in files:
        with open(f, newline="") as fh:
            rows.extend(csv.reader(fh))
    rows.sort(key=lambda r: (int(r[0]), int(r[1])))
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIM_POINT_COLUMNS)
        w.writerows(rows)


@dataclass
class RunSummary:
    exit_code: int
    files: List[FileOutcome]
    manifest: Optional[str] = None


def run_pipeline(cfg: RunConfig, faults: Optional[dict] = None) -> RunSummary:
    """Correct every input file; returns the exit status and per-file outcomes."""
    try:
        cfg.validate()
    except ConfigError as err:
        log.error("configuration error: %s", err)
        return RunSummary(EXIT_CONFIG, [])
    files = cfg.input_files()
    if not files:
        log.error("no input footprint files found")
        return RunSummary(EXIT_CONFIG, [])
    try:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        scratch = ScratchArea(cfg.scratch_root)
    except (OSError, ConfigError) as err:
        log.error("startup failure: %s", err)
        return RunSummary(EXIT_CONFIG, [])
    if cfg.tile_crs:
        log.warning("tile CRS %s is recorded only; no reprojection is performed", cfg.tile_crs)

    started = time.perf_counter()
    with scratch:
        boundaries = build_boundary_index(cfg.tile_dir, cfg.boundary_mode)
        outcomes = []
        for path in files:
            log.info("correcting %s", path)
            outcome = correct_file(path, cfg, boundaries, scratch, faults)
            if not outcome.ok:
                log.error("%s: %s", path, outcome.error)
            outcomes.append(outcome)
    _tile_points.cache_clear()
    _merged_points.cache_clear()

    manifest = Path(cfg.out_dir) / "run_manifest.json"
    doc = {
        "config": cfg.echo(),
        "tile_crs_note": "recorded only; no reprojection performed",
        "files": [asdict(o) for o in outcomes],
        "seconds": time.perf_counter() - started,
    }
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    ok = any(o.ok for o in outcomes)
    return RunSummary(EXIT_OK if ok else EXIT_ALL_FAILED, outcomes, str(manifest))
