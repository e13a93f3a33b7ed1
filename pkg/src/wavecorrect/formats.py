"""JSON Lines interchange for footprints and correction results.

Floats are written with ``repr`` precision, so a write/read cycle returns
equal records.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, List, Optional

from .model import CorrectionMode, CorrectionResult, Footprint, RHProfile, SimulatedMetrics, Waveform


class FormatError(ValueError):
    pass


_REQUIRED = ("shot_number", "beam_id", "delta_time", "x", "y", "elev_lowestmode", "rh", "waveform")
_OPTIONAL_FLOAT = ("sensitivity", "solar_elevation", "dem_elevation")
_OPTIONAL_INT = ("quality_flag", "degrade_flag", "num_detected_modes")


def _num(v):
    # JSON has no NaN/inf; encode them as null.
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return None
    return v


def waveform_to_dict(w: Waveform) -> dict:
    return {
        "top_elevation": float(w.top_elevation),
        "bin_size": float(w.bin_size),
        "amplitudes": [float(a) for a in w.amplitudes],
    }


def waveform_from_dict(d: dict) -> Waveform:
    return Waveform(float(d["top_elevation"]), float(d["bin_size"]), d["amplitudes"])


def rh_to_dict(rh: RHProfile) -> dict:
    return {"percentiles": list(rh.percentiles), "heights": [float(h) for h in rh.heights]}


def rh_from_dict(d: dict) -> RHProfile:
    return RHProfile(tuple(d["percentiles"]), tuple(d["heights"]))


def footprint_to_dict(fp: Footprint) -> dict:
    d = {
        "shot_number": int(fp.shot_number),
        "beam_id": int(fp.beam_id),
        "delta_time": float(fp.delta_time),
        "x": float(fp.x),
        "y": float(fp.y),
        "elev_lowestmode": float(fp.elev_lowestmode),
        "rh": rh_to_dict(fp.rh),
        "waveform": waveform_to_dict(fp.waveform),
    }
    for k in _OPTIONAL_FLOAT:
        v = getattr(fp, k)
        d[k] = None if v is None else float(v)
    for k in _OPTIONAL_INT:
        v = getattr(fp, k)
        d[k] = None if v is None else int(v)
    if fp.datum_adjustment:
        d["datum_adjustment"] = float(fp.datum_adjustment)
    return d


def footprint_from_dict(d: dict) -> Footprint:
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise FormatError(f"field {missing[0]}: missing")
    kwargs = {}
    for k in ("shot_number", "beam_id"):
        kwargs[k] = _typed(d, k, int)
    for k in ("delta_time", "x", "y", "elev_lowestmode"):
        kwargs[k] = _typed(d, k, float)
    try:
        kwargs["rh"] = rh_from_dict(d["rh"])
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"field rh: {err}") from None
    try:
        kwargs["waveform"] = waveform_from_dict(d["waveform"])
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"field waveform: {err}") from None
    for k in _OPTIONAL_FLOAT:
        kwargs[k] = None if d.get(k) is None else _typed(d, k, float)
    for k in _OPTIONAL_INT:
        kwargs[k] = None if d.get(k) is None else _typed(d, k, int)
    kwargs["datum_adjustment"] = float(d.get("datum_adjustment", 0.0))
    return Footprint(**kwargs)


def _typed(d: dict, key: str, kind):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"field {key}: expected a number, got {type(v).__name__}")
    if kind is int:
        if float(v) != int(v):
            raise FormatError(f"field {key}: expected an integer")
        return int(v)
    return float(v)


def read_footprint_file(path) -> List[Footprint]:
    out = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({err.msg})") from None
            if not isinstance(doc, dict):
                raise FormatError(f"{path}: line {lineno}: expected an object")
            try:
                fp = footprint_from_dict(doc)
            except FormatError as err:
                raise FormatError(f"{path}: line {lineno}: {err}") from None
            if fp.shot_number in seen:
                raise FormatError(f"{path}: line {lineno}: duplicate shot_number {fp.shot_number}")
            seen.add(fp.shot_number)
            out.append(fp)
    return out


def write_footprint_file(path, footprints: Iterable[Footprint]) -> None:
    with open(path, "w") as fh:
        for fp in footprints:
            fh.write(json.dumps(footprint_to_dict(fp), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------- results


def _sim_to_dict(sim: Optional[SimulatedMetrics]):
    if sim is None:
        return None
    return {
        "offset": [float(sim.offset[0]), float(sim.offset[1])],
        "ground_elevation": float(sim.ground_elevation),
        "rh": rh_to_dict(sim.rh),
        "waveform": waveform_to_dict(sim.waveform),
    }


def _sim_from_dict(d) -> Optional[SimulatedMetrics]:
    if d is None:
        return None
    return SimulatedMetrics(
        waveform_from_dict(d["waveform"]),
        float(d["ground_elevation"]),
        rh_from_dict(d["rh"]),
        (float(d["offset"][0]), float(d["offset"][1])),
    )


def result_to_dict(r: CorrectionResult) -> dict:
    return {
        "shot_number": int(r.shot_number),
        "beam_id": int(r.beam_id),
        "mode": r.mode.value,
        "status": r.status,
        "discarded": bool(r.discarded),
        "reason": r.reason,
        "original_x": float(r.original_x),
        "original_y": float(r.original_y),
        "chosen_offset": None if r.chosen_offset is None else [float(v) for v in r.chosen_offset],
        "corrected_x": _num(r.corrected_x),
        "corrected_y": _num(r.corrected_y),
        "final_score": _num(r.final_score),
        "cluster_size": r.cluster_size,
        "simulated": _sim_to_dict(r.simulated),
        "origin_simulated": _sim_to_dict(r.origin_simulated),
    }


def result_from_dict(d: dict) -> CorrectionResult:
    off = d.get("chosen_offset")
    return CorrectionResult(
        shot_number=int(d["shot_number"]),
        beam_id=int(d["beam_id"]),
        mode=CorrectionMode(d["mode"]),
        status=d["status"],
        original_x=float(d["original_x"]),
        original_y=float(d["original_y"]),
        chosen_offset=None if off is None else (float(off[0]), float(off[1])),
        corrected_x=d.get("corrected_x"),
        corrected_y=d.get("corrected_y"),
        final_score=d.get("final_score"),
        cluster_size=d.get("cluster_size"),
        simulated=_sim_from_dict(d.get("simulated")),
        discarded=bool(d.get("discarded", False)),
        reason=d.get("reason", ""),
        origin_simulated=_sim_from_dict(d.get("origin_simulated")),
    )


def write_correction_output(path, results: Iterable[CorrectionResult]) -> None:
    with open(path, "w") as fh:
        for r in sorted(results, key=lambda r: r.shot_number):
            fh.write(json.dumps(result_to_dict(r), separators=(",", ":")) + "\n")


def read_correction_output(path) -> List[CorrectionResult]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(result_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise FormatError(f"{path}: line {lineno}: {err}") from None
    return out


def read_truth_offsets(path) -> dict:
    with open(path, newline="") as fh:
        return {int(r["shot_number"]): (float(r["dx"]), float(r["dy"])) for r in csv.DictReader(fh)}


def write_truth_offsets(path, truth: dict) -> None:
    lines = ["shot_number,dx,dy"]
    lines += [f"{shot},{dx!r},{dy!r}" for shot, (dx, dy) in sorted(truth.items())]
    Path(path).write_text("\n".join(lines) + "\n")
