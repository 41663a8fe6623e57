"""Joint realization of the physical and Markovized processes.

The Markovized process is legal physics until it either lands a fresh
scatterer inside the region its own trajectory already explored (a
shadowed scattering) or runs its trajectory through the location of a
scatterer it has forgotten (an ignored recollision).  Per flight segment j
the two defects are flagged as

    eta_hat_j   : some past trajectory point before the previous renewal
                  lies within eps of the new collision point Y_j,
    eta_tilde_j : some collision point Y_i, i < j-1, lies within eps of
                  the trajectory of segment j,

and the physical process is the Markovized one stopped at the renewal
preceding the first flag.  Up to that time the two processes are the same
object, so the coupled records are bit-identical by construction.

Proximity is measured to collision points, matching the defect definition
used throughout the statistics; the alternative that measures distance to
the actual scatterer centers (offset eps along the inward bisector) is
available as mode="center".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .randomness import RandomStream, TWO_PI
from .geometry import ArcSegment, min_distance_point_to_arc
from .markovized import (
    MarkovizedRecord,
    scatterer_center,
    segment_arcs,
    simulate_markovized,
)

RHO_UNSET = math.inf  # sentinel index when no mismatch occurred

MODE_COLLISION_POINT = "collision-point"
MODE_CENTER = "center"


@dataclass
class MismatchFlags:
    j: int
    eta_hat: bool
    eta_tilde: bool

    @property
    def eta(self) -> bool:
        return self.eta_hat or self.eta_tilde


class TrajectoryIndex:
    """Spatial hash over the arcs of a trajectory for radius-eps queries.

    Arcs are registered in every cell their bounding box (padded by the
    query radius) touches, so a point query only needs its own cell.
    """

    def __init__(self, eps: float, cell: Optional[float] = None):
        self.eps = eps
        self.cell = cell if cell is not None else 4.0 * eps
        self.buckets: Dict[Tuple[int, int], List[int]] = {}
        self.arcs: List[ArcSegment] = []
        self.times: List[float] = []

    def _span(self, arc: ArcSegment):
        pad = self.eps + 1e-12
        lo_x = arc.center.real - 1.0 - pad
        hi_x = arc.center.real + 1.0 + pad
        lo_y = arc.center.imag - 1.0 - pad
        hi_y = arc.center.imag + 1.0 + pad
        return (math.floor(lo_x / self.cell), math.floor(hi_x / self.cell),
                math.floor(lo_y / self.cell), math.floor(hi_y / self.cell))

    def add(self, arc: ArcSegment):
        idx = len(self.arcs)
        self.arcs.append(arc)
        self.times.append(arc.t0)
        i0, i1, j0, j1 = self._span(arc)
        for ci in range(i0, i1 + 1):
            for cj in range(j0, j1 + 1):
                self.buckets.setdefault((ci, cj), []).append(idx)

    def query_point(self, p: complex, t_before: float) -> float:
        """Min distance from p to all indexed arcs that start before t_before."""
        key = (math.floor(p.real / self.cell), math.floor(p.imag / self.cell))
        best = math.inf
        for idx in self.buckets.get(key, ()):
            if self.times[idx] < t_before:
                d = min_distance_point_to_arc(p, self.arcs[idx])
                if d < best:
                    best = d
        return best


def _collision_points(records: List[MarkovizedRecord], eps: float, mode: str):
    """Reference points of past scatterers: contact points or true centers.

    Anchored at the first record's starting position, so a slice of a longer
    run works as a standalone process (used by the within-leg statistics).
    """
    pts = [records[0].Y_prev] + [r.Y for r in records]
    if mode == MODE_COLLISION_POINT:
        return pts
    centers = []
    for j, p in enumerate(pts):
        if j < len(records):
            rec = records[j]              # the segment leaving collision j
            centers.append(scatterer_center(p, rec.phi_prev, rec.draw.alpha, eps))
        else:
            centers.append(p)             # final collision: no outgoing draw kept
    return centers


def detect_mismatches(records: List[MarkovizedRecord], eps: float,
                      mode: str = MODE_COLLISION_POINT,
                      use_index: Optional[bool] = None) -> List[MismatchFlags]:
    """Flag shadowed scatterings and ignored recollisions per segment.

    The spatial-hash path and the quadratic brute-force path compute the
    same exact arc distances; use_index=None picks by run length.  Passing
    a slice of a longer run restricts the history to that slice, which is
    how mismatches within a single leg are counted.
    """
    if mode not in (MODE_COLLISION_POINT, MODE_CENTER):
        raise ValueError(f"unknown mismatch mode {mode!r}")
    n = len(records)
    if n == 0:
        return []
    if use_index is None:
        use_index = n > 400
    points = _collision_points(records, eps, mode)
    arcs_per_seg = [segment_arcs(r, eps) for r in records]
    flags: List[MismatchFlags] = []
    index = TrajectoryIndex(eps) if use_index else None

    for j in range(1, n + 1):
        rec = records[j - 1]
        seg_arcs = arcs_per_seg[j - 1]
        # eta_hat: new collision point against the trajectory before tau_{j-1}
        eta_hat = False
        target = points[j]
        t_cut = rec.tau_prev
        if j > 1:
            if use_index:
                eta_hat = index.query_point(target, t_cut) < eps
            else:
                for i in range(j - 1):
                    for arc in arcs_per_seg[i]:
                        if min_distance_point_to_arc(target, arc) < eps:
                            eta_hat = True
                            break
                    if eta_hat:
                        break
        # eta_tilde: collision points before the current scatterer against
        # this segment's arcs
        eta_tilde = False
        for i in range(j - 1):
            p = points[i]
            for arc in seg_arcs:
                if min_distance_point_to_arc(p, arc) < eps:
                    eta_tilde = True
                    break
            if eta_tilde:
                break
        flags.append(MismatchFlags(j=j, eta_hat=eta_hat, eta_tilde=eta_tilde))
        if use_index:
            for arc in seg_arcs:
                index.add(arc)
    return flags


def stopping_time(flags: List[MismatchFlags]) -> float:
    """Index of the first flagged segment, or the infinity sentinel."""
    for f in flags:
        if f.eta:
            return f.j
    return RHO_UNSET


@dataclass
class CoupledRun:
    records: List[MarkovizedRecord]       # the Markovized process on [0, T]
    flags: List[MismatchFlags]
    rho_stop: float                       # first mismatched segment index
    tau_before_stop: float                # tau_{rho-1}; inf when no mismatch
    physical_records: List[MarkovizedRecord]  # identical records up to the stop


def coupled_run(eps: float, T: float, s: RandomStream,
                mode: str = MODE_COLLISION_POINT) -> CoupledRun:
    """Joint run: the physical process is the Markovized one stopped before
    the first mismatch; its records are the same objects, hence bit-equal."""
    records = simulate_markovized(T, eps, s)
    flags = detect_mismatches(records, eps, mode=mode)
    rho = stopping_time(flags)
    if rho is RHO_UNSET or math.isinf(rho):
        tau_cut = math.inf
        physical = list(records)
    else:
        tau_cut = records[int(rho) - 2].tau if rho >= 2 else 0.0
        physical = [r for r in records if r.tau < tau_cut]
    return CoupledRun(records=records, flags=flags, rho_stop=rho,
                      tau_before_stop=tau_cut, physical_records=physical)


@dataclass
class CensusRow:
    eps: float
    T: float
    n_runs: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    p_shadow: float
    p_recollide: float
    mode: str


def _wilson_ci(k: int, n: int, z: float = 1.959964):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def mismatch_census(eps_grid, T: float, n_runs: int, seed: int,
                    mode: str = MODE_COLLISION_POINT,
                    stream_offset: int = 0) -> List[CensusRow]:
    """Empirical P(tau_rho <= T) per eps, split by mismatch type.

    Streams are indexed by run number so the census is reproducible and
    independent of worker scheduling.  A run counts as shadow or recollision
    according to the flags of its first mismatched segment (both when both
    fire at once).
    """
    rows = []
    for gi, eps in enumerate(eps_grid):
        hit = shadow = recoll = 0
        for r in range(n_runs):
            s = RandomStream(seed, stream_offset + gi * n_runs + r)
            run = coupled_run(eps, T, s, mode=mode)
            rho = run.rho_stop
            if math.isfinite(rho) and run.records[int(rho) - 1].tau <= T:
                hit += 1
                f = run.flags[int(rho) - 1]
                shadow += f.eta_hat
                recoll += f.eta_tilde
        lo, hi = _wilson_ci(hit, n_runs)
        rows.append(CensusRow(eps=eps, T=T, n_runs=n_runs, p_hat=hit / n_runs,
                              ci_lo=lo, ci_hi=hi, p_shadow=shadow / n_runs,
                              p_recollide=recoll / n_runs, mode=mode))
    return rows


def scaling_fit(rows: List[CensusRow]):
    """Least-squares diagnostics of the census against eps |log eps|.

    Returns the linear fit of p against x = eps |log eps| (slope, intercept,
    R^2) and the log-log slope, the rate exponent.
    """
    x = np.array([r.eps * abs(math.log(r.eps)) for r in rows])
    p = np.array([r.p_hat for r in rows])
    if x.size < 2:
        return {"slope": float("nan"), "intercept": float("nan"),
                "r_squared": float("nan"), "loglog_slope": float("nan"),
                "x": x.tolist(), "p": p.tolist()}
    slope, intercept = np.polyfit(x, p, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((p - fitted) ** 2))
    ss_tot = float(np.sum((p - p.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    ok = (p > 0).all() and x.size > 2
    loglog_slope = float(np.polyfit(np.log(x), np.log(p), 1)[0]) if ok else float("nan")
    return {"slope": float(slope), "intercept": float(intercept), "r_squared": r2,
            "loglog_slope": loglog_slope,
            "x": x.tolist(), "p": p.tolist()}
