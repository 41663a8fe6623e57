"""Lazily generated, memoized Poisson field of disk-scatterer centers.

The plane is tiled by square cells; each cell's centers are drawn from an
independent Poisson law of mean rho * cell_area the first time any query
touches the cell, using a substream keyed by (seed, stream_index, cell).
Generation order therefore cannot influence the field: permuting queries
replays the identical environment.

Conditioning on a free starting point is exact restriction: a Poisson
process conditioned to avoid a set is the same process with the points in
that set deleted, so the conditioned field just filters generated centers
against the void ball.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Tuple

import numpy as np


class ScattererField:
    """Infinite Poisson environment of disk centers, generated on demand.

    One field per trajectory (annealed statistics); fields are not shared
    across workers.
    """

    def __init__(self, rho: float, eps: float, seed: int, stream_index: int = 0,
                 void_center: Optional[complex] = None, void_radius: float = 0.0):
        if rho < 0.0:
            raise ValueError("intensity rho must be >= 0")
        if eps <= 0.0:
            raise ValueError("disk radius eps must be > 0")
        self.rho = float(rho)
        self.eps = float(eps)
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        self.cell_size = max(1.0, 4.0 * eps)
        self.void_center = void_center
        self.void_radius = float(void_radius)
        self.cells: Dict[Tuple[int, int], np.ndarray] = {}

    # -- generation -------------------------------------------------------

    def _cell_rng(self, ci: int, cj: int) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_index, ci & 0xFFFFFFFF, cj & 0xFFFFFFFF))
        return np.random.Generator(np.random.Philox(seq))

    def _cell(self, ci: int, cj: int) -> np.ndarray:
        key = (ci, cj)
        got = self.cells.get(key)
        if got is not None:
            return got
        rng = self._cell_rng(ci, cj)
        h = self.cell_size
        n = rng.poisson(self.rho * h * h)
        pts = (ci * h + rng.random(n) * h) + 1j * (cj * h + rng.random(n) * h)
        if self.void_radius > 0.0 and self.void_center is not None:
            pts = pts[np.abs(pts - self.void_center) >= self.void_radius]
        self.cells[key] = pts
        return pts

    def cell_index(self, p: complex) -> Tuple[int, int]:
        return math.floor(p.real / self.cell_size), math.floor(p.imag / self.cell_size)

    # -- queries ----------------------------------------------------------

    def scatterers_near(self, p: complex, radius: float) -> np.ndarray:
        """All centers within ``radius`` of p (exactly filtered)."""
        if radius >= 1e3 * self.cell_size:
            raise ValueError("query radius too large for the cell structure")
        h = self.cell_size
        i_lo = math.floor((p.real - radius) / h)
        i_hi = math.floor((p.real + radius) / h)
        j_lo = math.floor((p.imag - radius) / h)
        j_hi = math.floor((p.imag + radius) / h)
        blocks = [self._cell(ci, cj)
                  for ci in range(i_lo, i_hi + 1) for cj in range(j_lo, j_hi + 1)]
        pts = np.concatenate(blocks) if blocks else np.empty(0, dtype=complex)
        if pts.size == 0:
            return pts
        return pts[np.abs(pts - p) <= radius]

    def is_free(self, p: complex) -> bool:
        """True when p is not covered by any scatterer disk."""
        return self.scatterers_near(p, self.eps).size == 0

    def generated_centers(self) -> List[Tuple[int, int, float, float]]:
        """(cell_i, cell_j, x, y) rows for every center generated so far."""
        rows = []
        for (ci, cj), pts in sorted(self.cells.items()):
            rows.extend((ci, cj, z.real, z.imag) for z in pts)
        return rows


def condition_start_free(field: ScattererField, origin: complex = 0j) -> ScattererField:
    """Field conditioned on the disk of radius eps at ``origin`` being empty.

    Returns a fresh field with the same key and a void ball installed;
    deleting the points inside the ball is the exact conditional law.
    """
    return ScattererField(field.rho, field.eps, field.seed, field.stream_index,
                          void_center=origin, void_radius=field.eps)


class FrozenField:
    """A finite, explicit scene with the query interface of ScattererField.

    Used by oracle tests and time-reversal checks, where the exact same
    centers (possibly transformed) must be replayed.
    """

    def __init__(self, centers, eps: float):
        self.centers = np.asarray(centers, dtype=complex)
        self.eps = float(eps)
        self.rho = float("nan")
        self.cell_size = 1.0

    def scatterers_near(self, p: complex, radius: float) -> np.ndarray:
        if self.centers.size == 0:
            return self.centers
        return self.centers[np.abs(self.centers - p) <= radius]

    def is_free(self, p: complex) -> bool:
        return self.scatterers_near(p, self.eps).size == 0
