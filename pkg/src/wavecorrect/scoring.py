"""Waveform similarity metrics and per-footprint candidate scoring.

Every metric accepts 1-D inputs, or 2-D inputs where each row is one
candidate (the last axis is the waveform / profile axis).
"""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .model import Footprint, RHProfile, ScoredFootprint, Waveform
from .simulator import CandidateSet, candidate_set_from_metrics, resample_candidates

EPSILON = 1e-12
METRIC_NAMES: Tuple[str, ...] = (
    "wave_pearson", "wave_spearman", "kl", "wave_distance", "terrain", "rh_distance",
)
SMALLER_IS_BETTER = frozenset({"kl", "wave_distance", "terrain", "rh_distance"})
RH_DISTANCE_PERCENTILES: Tuple[int, ...] = tuple(range(25, 101, 5))


class MetricError(ValueError):
    pass


def parse_metric_set(spec) -> Tuple[str, ...]:
    """Validate a metric selection given as a string or an iterable of names."""
    names = spec.split() if isinstance(spec, str) else [n for s in spec for n in str(s).split()]
    if not names:
        raise MetricError("metric set must not be empty")
    unknown = [n for n in names if n not in METRIC_NAMES]
    if unknown:
        raise MetricError(f"unknown metric(s): {', '.join(unknown)}")
    if len(set(names)) != len(names):
        raise MetricError("duplicate metric in selection")
    return tuple(names)


def normalize_to_distribution(w, eps: float = EPSILON) -> np.ndarray:
    """Clamp negatives, add ``eps`` to every bin and rescale to unit sum."""
    a = w.amplitudes if isinstance(w, Waveform) else np.asarray(w, dtype=float)
    a = np.clip(a, 0.0, None)
    if np.any(a.sum(axis=-1) <= 0):
        raise MetricError("degenerate waveform")
    a = a + eps
    return a / a.sum(axis=-1, keepdims=True)


def pearson(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1] or a.shape[-1] < 2:
        raise MetricError("pearson needs equal lengths >= 2")
    da = a - a.mean(axis=-1, keepdims=True)
    db = b - b.mean(axis=-1, keepdims=True)
    sa = np.sqrt((da * da).sum(axis=-1))
    sb = np.sqrt((db * db).sum(axis=-1))
    if np.ndim(sa) == 0 and np.ndim(sb) == 0 and (sa == 0 or sb == 0):
        raise MetricError("constant input")
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (da * db).sum(axis=-1) / (sa * sb)
    r = np.where((sa == 0) | (sb == 0), np.nan, np.clip(r, -1.0, 1.0))
    return r if r.ndim else float(r)


def spearman(a, b):
    """Pearson correlation of fractional (tie-averaged) ranks."""
    return pearson(rankdata(a, axis=-1), rankdata(b, axis=-1))


def crssda(r, s):
    """Root of the summed squared differences between two sampled curves."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if r.shape[-1] != s.shape[-1]:
        raise MetricError("crssda inputs differ in length")
    d = r - s
    out = np.sqrt((d * d).sum(axis=-1))
    return out if np.ndim(out) else float(out)


def kl_divergence(r, s):
    """``sum r * ln(r / s)`` for strictly positive, unit-sum inputs."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if r.shape[-1] != s.shape[-1]:
        raise MetricError("kl inputs differ in length")
    for v in (r, s):
        if np.any(np.abs(v.sum(axis=-1) - 1.0) > 1e-6) or np.any(v <= 0):
            raise MetricError("not a distribution")
    out = (r * np.log(r / s)).sum(axis=-1)
    out = np.maximum(out, 0.0)
    return out if np.ndim(out) else float(out)


def aged(zg_r, zg_s):
    """Absolute ground elevation distance."""
    out = np.abs(np.asarray(zg_r, dtype=float) - np.asarray(zg_s, dtype=float))
    return out if np.ndim(out) else float(out)


def _rh_vector(profile) -> np.ndarray:
    if isinstance(profile, RHProfile):
        return np.array([profile.height(p) for p in RH_DISTANCE_PERCENTILES])
    return np.asarray(profile, dtype=float)


def rh_distance(r_rh, s_rh):
    """CRSSDA over RH25..RH100 in steps of 5 (16 terms).

    Accepts :class:`RHProfile` objects or arrays already restricted to those
    16 percentiles (last axis).
    """
    r = _rh_vector(r_rh)
    s = _rh_vector(s_rh)
    if r.shape[-1] != len(RH_DISTANCE_PERCENTILES) or s.shape[-1] != len(RH_DISTANCE_PERCENTILES):
        raise MetricError("rh_distance needs percentiles 25..100 step 5")
    return crssda(r, s)


def minmax_scores(raw: np.ndarray, smaller_is_better: bool) -> np.ndarray:
    """Map raw metric values onto [0, 1] over one candidate grid.

    NaN marks a failed candidate and scores 0. Correlations are first
    mapped with ``(r + 1) / 2``; both directions are then stretched so the
    best candidate gets 1 and the worst 0. A flat grid scores 1 everywhere.
    """
    raw = np.asarray(raw, dtype=float)
    out = np.zeros_like(raw)
    ok = np.isfinite(raw)
    if not ok.any():
        return out
    v = raw if smaller_is_better else (raw + 1.0) / 2.0
    lo = v[ok].min()
    hi = v[ok].max()
    if hi == lo:
        out[ok] = 1.0
        return out
    scaled = (v[ok] - lo) / (hi - lo)
    out[ok] = 1.0 - scaled if smaller_is_better else scaled
    return out


def raw_metric_values(fp: Footprint, cand: CandidateSet, metrics: Sequence[str]) -> dict:
    """Raw metric value per candidate (NaN for failed candidates)."""
    n = len(cand)
    valid = cand.valid
    out = {}
    wave_metrics = [m for m in metrics if m in ("wave_pearson", "wave_spearman", "kl", "wave_distance")]
    if wave_metrics:
        sim, disjoint = resample_candidates(fp.waveform, cand)
        ok = valid & ~disjoint & (np.clip(sim, 0.0, None).sum(axis=1) > 0)
        rep = fp.waveform.amplitudes
        for name in wave_metrics:
            vals = np.full(n, np.nan)
            if ok.any():
                s = sim[ok]
                if name == "wave_pearson":
                    vals[ok] = pearson(np.broadcast_to(rep, s.shape), s)
                elif name == "wave_spearman":
                    vals[ok] = spearman(np.broadcast_to(rep, s.shape), s)
                elif name == "kl":
                    vals[ok] = kl_divergence(
                        np.broadcast_to(normalize_to_distribution(rep), s.shape),
                        normalize_to_distribution(s),
                    )
                else:
                    r_unit = np.clip(rep, 0.0, None)
                    r_unit = r_unit / r_unit.sum()
                    s_unit = np.clip(s, 0.0, None)
                    s_unit = s_unit / s_unit.sum(axis=1, keepdims=True)
                    vals[ok] = crssda(np.broadcast_to(r_unit, s.shape), s_unit)
            out[name] = vals
    if "terrain" in metrics:
        out["terrain"] = np.where(valid, aged(fp.elev_lowestmode, np.nan_to_num(cand.ground)), np.nan)
    if "rh_distance" in metrics:
        idx = [cand.percentiles.index(p) for p in RH_DISTANCE_PERCENTILES]
        sim_rh = cand.rh[idx].T
        rep_rh = _rh_vector(fp.rh)
        vals = crssda(np.broadcast_to(rep_rh, sim_rh.shape), np.nan_to_num(sim_rh))
        out["rh_distance"] = np.where(valid, vals, np.nan)
    return out


def metric_scores(fp: Footprint, cand: CandidateSet, metrics: Sequence[str]) -> dict:
    raw = raw_metric_values(fp, cand, metrics)
    return {m: minmax_scores(raw[m], m in SMALLER_IS_BETTER) for m in metrics}


def score_candidates(fp: Footprint, cand: CandidateSet, metrics: Sequence[str]) -> ScoredFootprint:
    """Average of per-metric [0, 1] scores over the candidate grid."""
    metrics = parse_metric_set(metrics)
    if not isinstance(cand, CandidateSet):
        cand = candidate_set_from_metrics(list(cand))
    if not cand.valid.any():
        return ScoredFootprint(fp.shot_number, fp.beam_id, fp.delta_time, None, False, "empty footprint")
    per_metric = metric_scores(fp, cand, metrics)
    # Sum in canonical metric order so the result ignores selection order.
    total = np.zeros(len(cand))
    for name in METRIC_NAMES:
        if name in per_metric:
            total = total + per_metric[name]
    final = total / len(metrics)
    return ScoredFootprint(fp.shot_number, fp.beam_id, fp.delta_time, final, True)


def rh95_change_filter(fp: Footprint, candidates, threshold_m: float = 10.0) -> bool:
    """True to keep the shot; False when reported RH95 departs from the
    candidates' mean simulated RH95 by more than ``threshold_m``.

    ``candidates`` is a :class:`CandidateSet` or a sequence of
    ``SimulatedMetrics`` with ``None`` for failed candidates.
    """
    if isinstance(candidates, CandidateSet):
        sims = candidates.rh_height(95)[candidates.valid]
    else:
        sims = np.array([c.rh.rh95 for c in candidates if c is not None])
    if sims.size == 0:
        return False
    return not abs(fp.rh.rh95 - float(np.mean(sims))) > threshold_m
