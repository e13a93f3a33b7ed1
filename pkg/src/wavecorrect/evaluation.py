"""Accuracy statistics between reported and simulated shot metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .model import CorrectionResult, Footprint, RHProfile, SimulatedMetrics

VARIABLES = ("RH95", "dRH95_50", "terrain")


class EvaluationError(ValueError):
    pass


def _pair(y, yhat, min_len: int):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise EvaluationError("inputs must be 1-D and equal in length")
    if y.size < min_len:
        raise EvaluationError("empty input" if min_len == 1 else f"need at least {min_len} values")
    return y, yhat


def r_squared(y, yhat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot`` (may be negative)."""
    y, yhat = _pair(y, yhat, 2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise EvaluationError("zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat, 1)
    return math.sqrt(float(np.mean((y - yhat) ** 2)))


def rrmse(y, yhat) -> float:
    """RMSE as a percentage of the mean reported value."""
    y, yhat = _pair(y, yhat, 1)
    mean = float(y.mean())
    if mean == 0.0:
        raise EvaluationError("undefined rRMSE")
    return rmse(y, yhat) / mean * 100.0


def delta_rh(item) -> float:
    """RH95 minus RH50 of a profile, footprint or simulation."""
    profile = item if isinstance(item, RHProfile) else item.rh
    return profile.rh95 - profile.rh50


@dataclass
class AccuracyReport:
    variable: str
    n: int
    r_squared: Optional[float]
    rmse_m: Optional[float]
    rrmse_pct: Optional[float]
    mean_offset_magnitude_m: Optional[float]
    per_mode: Dict[str, dict] = field(default_factory=dict)
    gaps: List[str] = field(default_factory=list)


def _stats(y: np.ndarray, yhat: np.ndarray):
    gaps = []
    out = {"n": int(y.size), "r_squared": None, "rmse_m": None, "rrmse_pct": None}
    for key, fn in (("r_squared", r_squared), ("rmse_m", rmse), ("rrmse_pct", rrmse)):
        try:
            out[key] = fn(y, yhat)
        except EvaluationError as err:
            gaps.append(f"{key}: {err}")
    return out, gaps


def scatter_rows(results: Sequence[CorrectionResult], originals: Mapping[int, Footprint]) -> Dict[str, list]:
    """Per variable, ``(shot_number, reported, simulated, mode)`` rows for usable results."""
    rows = {v: [] for v in VARIABLES}
    for res in sorted(results, key=lambda r: r.shot_number):
        sim = res.simulated
        fp = originals.get(res.shot_number)
        if res.discarded or sim is None or fp is None:
            continue
        mode = res.mode.value
        rows["RH95"].append((res.shot_number, fp.rh.rh95, sim.rh.rh95, mode))
        rows["dRH95_50"].append((res.shot_number, delta_rh(fp), delta_rh(sim), mode))
        rows["terrain"].append((res.shot_number, fp.elev_lowestmode, sim.ground_elevation, mode))
    return rows


def build_report(results: Sequence[CorrectionResult], originals) -> Dict[str, AccuracyReport]:
    """RH95, RH95-RH50 and terrain statistics over non-discarded results.

    ``originals`` maps shot number to the reported footprint (a sequence of
    footprints is accepted too). Too little data yields ``None`` entries and
    an explanation in ``gaps`` rather than an exception.
    """
    if not isinstance(originals, Mapping):
        originals = {fp.shot_number: fp for fp in originals}
    rows = scatter_rows(results, originals)
    mags = [r.offset_magnitude for r in results if not r.discarded and r.chosen_offset is not None]
    mean_mag = float(np.mean(mags)) if mags else None
    reports = {}
    for var in VARIABLES:
        data = rows[var]
        y = np.array([d[1] for d in data], dtype=float)
        yhat = np.array([d[2] for d in data], dtype=float)
        stats, gaps = _stats(y, yhat)
        per_mode = {}
        for mode in sorted({d[3] for d in data}):
            sel = np.array([d[3] == mode for d in data])
            per_mode[mode], _ = _stats(y[sel], yhat[sel])
        reports[var] = AccuracyReport(
            var, stats["n"], stats["r_squared"], stats["rmse_m"], stats["rrmse_pct"],
            mean_mag, per_mode, gaps,
        )
    return reports


def write_report(path, reports: Mapping[str, AccuracyReport], extra: Optional[dict] = None) -> None:
    doc = {"variables": {k: asdict(v) for k, v in reports.items()}}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_scatter(path, results, originals) -> None:
    if not isinstance(originals, Mapping):
        originals = {fp.shot_number: fp for fp in originals}
    rows = scatter_rows(results, originals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "shot_number", "reported", "simulated", "mode"])
        for var in VARIABLES:
            for shot, rep, sim, mode in rows[var]:
                w.writerow([var, shot, repr(float(rep)), repr(float(sim)), mode])
