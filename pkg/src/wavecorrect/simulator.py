"""Large-footprint waveform simulation and waveform metric extraction.

Simulated waveforms live on a global elevation lattice: bin centres sit at
integer multiples of ``bin_size``. Waveforms simulated at different
positions, including the synthetic "reported" waveforms, therefore share bin
centres and compare without interpolation error.

A batch of candidate positions is simulated into one ``(bins, candidates)``
frame. Every column is computed with the same operation order whatever the
frame size, so a position simulated alone is bit-identical to the same
position simulated inside a 961-candidate batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import numba

from .model import RH_PERCENTILES, RHProfile, SimulatedMetrics, Waveform
from .pointcloud import PointCloud


class SimulationError(ValueError):
    """Raised when a waveform cannot be simulated or measured."""


@dataclass(frozen=True)
class SimParams:
    footprint_sigma: float = 5.5
    footprint_truncation: float = 3.0
    pulse_sigma_z: float = 1.0
    bin_size: float = 0.15
    noise_floor: float = 0.01

    def __post_init__(self):
        for name in ("footprint_sigma", "footprint_truncation", "pulse_sigma_z", "bin_size", "noise_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.footprint_truncation < 1:
            raise ValueError("footprint_truncation must be >= 1")

    @property
    def radius(self) -> float:
        return self.footprint_sigma * self.footprint_truncation

    @property
    def kernel_half_width(self) -> int:
        return int(np.floor(4.0 * self.pulse_sigma_z / self.bin_size + 1e-9))

    def pulse_kernel(self) -> np.ndarray:
        k = self.kernel_half_width
        z = self.bin_size * np.arange(-k, k + 1)
        kern = np.exp(-0.5 * (z / self.pulse_sigma_z) ** 2)
        return kern / kern.sum()


def as_cloud(points) -> PointCloud:
    if isinstance(points, PointCloud):
        return points
    arr = np.asarray(
        [(p.x, p.y, p.z) if hasattr(p, "z") else tuple(p)[:3] for p in points], dtype=float
    )
    if arr.size == 0:
        return PointCloud.empty()
    return PointCloud(arr[:, 0], arr[:, 1], arr[:, 2])


@numba.njit(cache=True)
def _deposit(px, py, klo, rows, frac, cx, cy, r2, inv_two_var, width):
    """Beam-weighted elevation histograms, one column per beam centre.

    Each point's weight is split linearly between the lattice bins just
    below (``rows``) and above it, so the histogram keeps the exact
    weighted mean elevation. Points form the outer loop so each bin
    accumulates in point order.
    """
    n = cx.size
    hist = np.zeros((width, n))
    kmin = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    kmax = np.full(n, np.iinfo(np.int64).min, dtype=np.int64)
    for p in range(px.size):
        x = px[p]
        y = py[p]
        row = rows[p]
        k = klo[p]
        f = frac[p]
        for c in range(n):
            dx = x - cx[c]
            dy = y - cy[c]
            d2 = dx * dx + dy * dy
            if d2 <= r2:
                w = np.exp(-d2 * inv_two_var)
                hist[row, c] += w * (1.0 - f)
                hist[row - 1, c] += w * f
                if k < kmin[c]:
                    kmin[c] = k
                if k + 1 > kmax[c]:
                    kmax[c] = k + 1
    return hist, kmin, kmax


# ------------------------------------------------------- column-wise extraction


def _ground_rows(frame: np.ndarray, noise_floor: float):
    """Row of the lowest above-floor local maximum per column; -1 if none."""
    width, n = frame.shape
    peak = frame.max(axis=0) if width else np.zeros(n)
    ninf = np.full((1, n), -np.inf)
    padded = np.vstack([ninf, frame, ninf])
    mid = padded[1:-1]
    is_max = (mid >= padded[:-2]) & (mid >= padded[2:]) & (mid > noise_floor * peak)
    has = is_max.any(axis=0) & (peak > 0)
    last = width - 1 - np.argmax(is_max[::-1], axis=0)
    return np.where(has, last, -1)


def _vertex_offsets(frame: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sub-bin position of each peak (parabola through it and its neighbours).

    Positive values point down the frame (lower elevation). Clipped to half
    a bin; zero where ``rows`` is -1 or the peak touches the frame edge.
    """
    width, n = frame.shape
    out = np.zeros(n)
    ok = (rows > 0) & (rows < width - 1)
    if not ok.any():
        return out
    cols = np.flatnonzero(ok)
    r = rows[ok]
    a_up = frame[r - 1, cols]
    a_0 = frame[r, cols]
    a_dn = frame[r + 1, cols]
    denom = a_up - 2.0 * a_0 + a_dn
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(denom < 0, 0.5 * (a_up - a_dn) / denom, 0.0)
    out[ok] = np.clip(x, -0.5, 0.5)
    return out


def _rh_index_heights(frame: np.ndarray, ground_up: np.ndarray, below: np.ndarray, noise_floor: float, percentiles):
    """RH heights in bins, from a top-down ``(bins, columns)`` frame.

    The ground lies ``below`` bins under the centre of bin ``ground_up``
    (an integer count from the bottom row).
    """
    up = np.clip(frame[::-1], 0.0, None)
    width, n = up.shape
    cum = np.cumsum(up, axis=0)
    total = cum[-1].copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        cumn = cum / total
    cumn[-1] = 1.0
    cols = np.arange(n)
    peak = up.max(axis=0)
    floor = noise_floor * peak
    above = up > floor
    top_up = width - 1 - np.argmax(above[::-1], axis=0)
    # Upper edge: linear crossing of the noise floor between the highest
    # above-floor bin and the one over it.
    nxt = np.minimum(top_up + 1, width - 1)
    a_top = up[top_up, cols]
    a_next = up[nxt, cols]
    with np.errstate(invalid="ignore", divide="ignore"):
        edge = np.where(nxt > top_up, (a_top - floor) / (a_top - a_next), 0.0)

    out = np.empty((len(percentiles), n))
    for row, p in enumerate(percentiles):
        if p >= 100:
            out[row] = ((top_up - ground_up) + edge) + below
            continue
        f = p / 100.0
        k = np.argmax((cumn >= f) & (cumn > 0), axis=0)
        km1 = np.maximum(k - 1, 0)
        c0 = cumn[km1, cols]
        c1 = cumn[k, cols]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(c1 > c0, (f - c0) / (c1 - c0), 0.0)
        # Integer part first so the result does not depend on frame size.
        interp = (k > 0) & (c0 < f)
        out[row] = np.where(interp, ((km1 - ground_up) + frac) + below, (k - ground_up) + below)
    return np.maximum.accumulate(out, axis=0), total


@dataclass(frozen=True)
class CandidateSet:
    """Waveforms and metrics simulated at a batch of offsets around ``(x, y)``.

    ``frame`` holds one column per candidate, rows running down from lattice
    index ``k_top``. Failed candidates carry a non-empty ``reasons`` entry.
    """

    x: float
    y: float
    offsets: np.ndarray
    params: SimParams
    k_top: int
    frame: np.ndarray
    row_first: np.ndarray
    row_last: np.ndarray
    ground: np.ndarray
    rh: np.ndarray
    reasons: List[str]
    percentiles: tuple = RH_PERCENTILES

    def __len__(self) -> int:
        return int(self.offsets.shape[0])

    @property
    def valid(self) -> np.ndarray:
        return np.array([r == "" for r in self.reasons], dtype=bool)

    def rh_height(self, percentile: int) -> np.ndarray:
        return self.rh[self.percentiles.index(percentile)]

    def waveform(self, i: int) -> Waveform:
        if self.row_first[i] < 0:
            raise SimulationError(self.reasons[i] or "empty footprint")
        a, b = int(self.row_first[i]), int(self.row_last[i])
        return Waveform((self.k_top - a) * self.params.bin_size, self.params.bin_size, self.frame[a : b + 1, i])

    def metrics(self, i: int) -> SimulatedMetrics:
        if self.reasons[i]:
            raise SimulationError(self.reasons[i])
        rh = RHProfile(self.percentiles, tuple(float(h) for h in self.rh[:, i]))
        off = (float(self.offsets[i, 0]), float(self.offsets[i, 1]))
        return SimulatedMetrics(self.waveform(i), float(self.ground[i]), rh, off)


def simulate_candidates(
    points, x: float, y: float, offsets, params: Optional[SimParams] = None
) -> CandidateSet:
    """Simulate waveforms, ground and RH metrics at ``(x+dx, y+dy)`` for each offset.

    Waveform construction: every point within ``radius`` of the beam centre
    deposits a Gaussian weight ``exp(-d^2 / 2 sigma_f^2)``, split linearly
    between the two lattice bins around its elevation; the binned profile is
    then convolved with the normalised discrete pulse (truncated at 4 sigma_z).
    """
    params = params or SimParams()
    cloud = as_cloud(points)
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float)).reshape(-1, 2)
    n = offsets.shape[0]
    b = params.bin_size
    kk = params.kernel_half_width
    cx = x + offsets[:, 0]
    cy = y + offsets[:, 1]
    r = params.radius

    def _empty():
        return CandidateSet(
            x, y, offsets, params, 0, np.zeros((0, n)), np.full(n, -1), np.full(n, -1),
            np.full(n, np.nan), np.full((len(RH_PERCENTILES), n), np.nan), ["empty footprint"] * n,
        )

    if not len(cloud) or n == 0:
        return _empty()
    near = (
        (cloud.x >= cx.min() - r) & (cloud.x <= cx.max() + r)
        & (cloud.y >= cy.min() - r) & (cloud.y <= cy.max() + r)
    )
    px, py, pz = cloud.x[near], cloud.y[near], cloud.z[near]
    if px.size == 0:
        return _empty()
    u = pz / b
    klo = np.floor(u).astype(np.int64)
    frac = u - klo
    k_top = int(klo.max()) + 1 + kk
    width = k_top - (int(klo.min()) - kk) + 1
    hist, kmin, kmax = _deposit(
        px, py, klo, k_top - klo, frac, cx, cy, r * r, 1.0 / (2.0 * params.footprint_sigma ** 2), width
    )
    contrib = kmax >= kmin
    if not contrib.any():
        return _empty()

    kernel = params.pulse_kernel()
    padded = np.zeros((width + 2 * kk, n))
    padded[kk : kk + width] = hist
    frame = np.zeros((width, n))
    for t in range(2 * kk + 1):
        frame += kernel[t] * padded[t : t + width]

    row_first = np.where(contrib, k_top - (kmax + kk), -1)
    row_last = np.where(contrib, k_top - (kmin - kk), -1)

    ground_row = _ground_rows(frame, params.noise_floor)
    reasons = []
    for j in range(n):
        if not contrib[j]:
            reasons.append("empty footprint")
        elif ground_row[j] < 0:
            reasons.append("no detectable mode")
        else:
            reasons.append("")
    below = _vertex_offsets(frame, ground_row)
    ground_up = width - 1 - ground_row
    rh_bins, _ = _rh_index_heights(frame, ground_up, below, params.noise_floor, RH_PERCENTILES)
    ok = np.array([not s for s in reasons])
    rh = np.where(ok[None, :], rh_bins * b, np.nan)
    ground = np.where(ok, ((k_top - ground_row) - below) * b, np.nan)
    return CandidateSet(
        float(x), float(y), offsets, params, k_top, frame, row_first, row_last, ground, rh, reasons
    )


def candidate_set_from_metrics(
    items: Sequence[Optional[SimulatedMetrics]], params: Optional[SimParams] = None, x: float = 0.0, y: float = 0.0
) -> CandidateSet:
    """Pack already-simulated candidates (``None`` for failures) into a batch.

    Waveforms must sit on the simulation lattice of ``params``.
    """
    params = params or SimParams()
    b = params.bin_size
    n = len(items)
    offsets = np.array([m.offset if m is not None else (np.nan, np.nan) for m in items], dtype=float).reshape(n, 2)
    live = [m for m in items if m is not None]
    for m in live:
        if not lattice_aligned(m.waveform, params):
            raise SimulationError("candidate waveform is not on the simulation lattice")
    ground = np.full(n, np.nan)
    rh = np.full((len(RH_PERCENTILES), n), np.nan)
    row_first = np.full(n, -1)
    row_last = np.full(n, -1)
    reasons = ["empty footprint"] * n
    if not live:
        return CandidateSet(x, y, offsets, params, 0, np.zeros((0, n)), row_first, row_last, ground, rh, reasons)
    tops = [int(round(m.waveform.top_elevation / b)) for m in live]
    k_top = max(tops)
    k_bot = min(t - len(m.waveform) + 1 for t, m in zip(tops, live))
    frame = np.zeros((k_top - k_bot + 1, n))
    for i, m in enumerate(items):
        if m is None:
            continue
        first = k_top - int(round(m.waveform.top_elevation / b))
        frame[first : first + len(m.waveform), i] = m.waveform.amplitudes
        row_first[i], row_last[i] = first, first + len(m.waveform) - 1
        ground[i] = m.ground_elevation
        rh[:, i] = [m.rh.height(p) for p in RH_PERCENTILES]
        reasons[i] = ""
    return CandidateSet(x, y, offsets, params, k_top, frame, row_first, row_last, ground, rh, reasons)


def simulate_waveform(points, x: float, y: float, params: Optional[SimParams] = None) -> SimulatedMetrics:
    """Simulate the waveform (with ground and RH profile) of a beam centred on ``(x, y)``."""
    cand = simulate_candidates(points, x, y, np.zeros((1, 2)), params)
    if cand.reasons[0]:
        raise SimulationError(cand.reasons[0])
    return cand.metrics(0)


def deposited_energy(points, x: float, y: float, params: Optional[SimParams] = None) -> float:
    params = params or SimParams()
    cloud = as_cloud(points)
    d2 = (cloud.x - x) ** 2 + (cloud.y - y) ** 2
    m = d2 <= params.radius ** 2
    return float(np.exp(-d2[m] / (2.0 * params.footprint_sigma ** 2)).sum())


# ------------------------------------------------------------- single waveform


def count_modes(waveform: Waveform, params: Optional[SimParams] = None) -> int:
    """Number of distinct above-floor local maxima; a plateau counts once."""
    params = params or SimParams()
    a = waveform.amplitudes
    ninf = np.array([-np.inf])
    padded = np.concatenate([ninf, a, ninf])
    mid = padded[1:-1]
    idx = np.flatnonzero((mid >= padded[:-2]) & (mid >= padded[2:]) & (mid > params.noise_floor * a.max()))
    if idx.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(idx) > 1))


def _ground_position(waveform: Waveform, params: SimParams):
    """``(row, below)``: ground bin (top-down) and its sub-bin offset."""
    amps = waveform.amplitudes[:, None]
    row = _ground_rows(amps, params.noise_floor)
    if row[0] < 0:
        raise SimulationError("no detectable mode")
    return int(row[0]), float(_vertex_offsets(amps, row)[0])


def extract_ground_elevation(waveform: Waveform, params: Optional[SimParams] = None) -> float:
    """Elevation of the lowest local maximum above ``noise_floor * peak``,
    refined to sub-bin precision by a parabola through the peak."""
    params = params or SimParams()
    row, below = _ground_position(waveform, params)
    k_top = waveform.top_elevation / waveform.bin_size
    if abs(k_top - round(k_top)) < 1e-6:
        # Lattice waveform: same arithmetic as the batch simulator.
        return float(((round(k_top) - row) - below) * waveform.bin_size)
    return float(waveform.top_elevation - (row + below) * waveform.bin_size)


def _profile(waveform: Waveform, ground_up: int, below: float, params: SimParams, percentiles) -> RHProfile:
    a = np.asarray(waveform.amplitudes, dtype=float)
    if not np.clip(a, 0.0, None).sum() > 0:
        raise SimulationError("empty waveform")
    heights, _ = _rh_index_heights(
        a[:, None], np.array([ground_up]), np.array([below]), params.noise_floor, tuple(percentiles)
    )
    return RHProfile(tuple(percentiles), tuple(float(h) for h in heights[:, 0] * waveform.bin_size))


def extract_rh_profile(
    waveform: Waveform,
    ground: float,
    params: Optional[SimParams] = None,
    percentiles: Sequence[int] = RH_PERCENTILES,
) -> RHProfile:
    """Heights above ``ground`` below which each percentile of energy returns.

    Energy is treated as concentrated at bin centres with the cumulative
    curve linear between neighbouring centres; RH100 is where the upper
    edge of the waveform crosses the noise floor.
    """
    params = params or SimParams()
    g = (ground - waveform.bottom_elevation) / waveform.bin_size
    gi = int(round(g))
    below = gi - g
    if abs(below) < 1e-9:
        below = 0.0
    return _profile(waveform, gi, below, params, percentiles)


def metrics_from_waveform(waveform: Waveform, params: Optional[SimParams] = None, offset=(0.0, 0.0)) -> SimulatedMetrics:
    params = params or SimParams()
    row, below = _ground_position(waveform, params)
    ground = extract_ground_elevation(waveform, params)
    rh = _profile(waveform, len(waveform) - 1 - row, below, params, RH_PERCENTILES)
    return SimulatedMetrics(waveform, ground, rh, (float(offset[0]), float(offset[1])))


def resample_to_common_grid(reported: Waveform, simulated: Waveform):
    """Simulated amplitudes linearly interpolated onto the reported bin centres.

    Returns ``(amplitudes_r, amplitudes_s)``, both as long as ``reported``;
    reported bins outside the simulated range get zero.
    """
    er = reported.elevations
    lo, hi = simulated.bottom_elevation, simulated.top_elevation
    if er.min() > hi or er.max() < lo:
        raise SimulationError("disjoint waveforms")
    es = simulated.elevations[::-1]
    vs = simulated.amplitudes[::-1]
    s = np.interp(er, es, vs, left=0.0, right=0.0)
    return reported.amplitudes.copy(), s


def lattice_aligned(waveform: Waveform, params: SimParams) -> bool:
    """True when the waveform's bins coincide with the simulation lattice."""
    if abs(waveform.bin_size - params.bin_size) > 1e-12:
        return False
    k = waveform.top_elevation / params.bin_size
    return abs(k - round(k)) < 1e-6


def resample_candidates(reported: Waveform, cand: CandidateSet) -> tuple:
    """All candidate waveforms on the reported bin centres.

    Returns ``(matrix, disjoint)`` with ``matrix`` shaped
    ``(candidates, len(reported))``. Lattice-aligned inputs are sliced
    directly (interpolation at knots); others go through
    :func:`resample_to_common_grid` per candidate.
    """
    n = len(cand)
    m = len(reported)
    out = np.zeros((n, m))
    disjoint = np.zeros(n, dtype=bool)
    if lattice_aligned(reported, cand.params):
        k_r_top = int(round(reported.top_elevation / cand.params.bin_size))
        rows = cand.k_top - (k_r_top - np.arange(m))
        ok = (rows >= 0) & (rows < cand.frame.shape[0])
        if ok.any():
            out[:, ok] = cand.frame[rows[ok]].T
        for i in range(n):
            if cand.row_first[i] < 0:
                disjoint[i] = True
                continue
            first, last = cand.row_first[i], cand.row_last[i]
            if rows[-1] < first or rows[0] > last:
                disjoint[i] = True
        return out, disjoint
    for i in range(n):
        if cand.row_first[i] < 0:
            disjoint[i] = True
            continue
        try:
            out[i] = resample_to_common_grid(reported, cand.waveform(i))[1]
        except SimulationError:
            disjoint[i] = True
    return out, disjoint
