"""Exact kinematics of unit-speed anticlockwise Larmor motion (radius 1).

Between collisions the particle moves on the circle of radius 1 whose
center sits 90 degrees to the left of the velocity: center = pos + i*vel.
With velocity e^{i*phi} the particle sits at angle phi - pi/2 on its orbit
and both angles advance at unit rate, so arc length equals swept angle
equals elapsed time.

The scattering geometry of a disk of radius eps splits the turning angle
alpha of a collision into

    beta(alpha, eps)  = 2*arctan( eps*sin(alpha/2) / (1 + eps*cos(alpha/2)) )
    gamma(alpha, eps) = 2*arctan( sin(alpha/2) / (cos(alpha/2) + eps) )

with beta + gamma = alpha.  After a collision the orbit re-enters the same
disk after sweeping exactly 2*pi - beta, and the contact point advances by
gamma around the disk; both facts are what the flight decomposition
nu = floor(xi / (2*pi - beta)), zeta = xi - nu*(2*pi - beta) encodes.

All functions are numpy-vectorized unless stated otherwise.  Planar vectors
are complex numbers (see package docstring).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi

#: planar points and unit velocities are complex numbers
PlanarVector = complex

#: discriminant tolerance below which circle-circle contact counts as grazing
GRAZING_TOL = 1e-12

_UNIT_NORM_TOL = 1e-9


def vec(x: float, y: float) -> complex:
    return complex(x, y)


def rotate90(v):
    """Rotate a planar vector by +pi/2 (multiply by i)."""
    return 1j * v


def larmor_center(pos, vel):
    """Center of the anticlockwise unit orbit through pos with velocity vel."""
    _require_unit(vel)
    return pos + 1j * vel


def _require_unit(v):
    n = abs(v)
    err = abs(n - 1.0) if np.isscalar(n) else np.max(np.abs(n - 1.0))
    if err > _UNIT_NORM_TOL:
        raise ValueError(f"expected a unit vector, |v| off by {err:.3e}")


# ---------------------------------------------------------------------------
# scattering-angle split

def beta(alpha, eps):
    """Sweep defect of one recollision loop around a disk of radius eps."""
    _check_eps(eps)
    a2 = 0.5 * np.asarray(alpha, dtype=float)
    return 2.0 * np.arctan2(eps * np.sin(a2), 1.0 + eps * np.cos(a2))


def gamma(alpha, eps):
    """Advance of the contact point around the disk per recollision.

    The arctan branch is fixed by atan2 so that gamma lies in [0, 2*pi]
    and beta + gamma = alpha holds identically.
    """
    _check_eps(eps)
    a2 = 0.5 * np.asarray(alpha, dtype=float)
    return 2.0 * np.arctan2(np.sin(a2), np.cos(a2) + eps)


def beta_prime(alpha, eps):
    """d(beta)/d(alpha) = eps (cos(alpha/2) + eps) / (1 + 2 eps cos(alpha/2) + eps^2)."""
    c = np.cos(0.5 * np.asarray(alpha, dtype=float))
    return eps * (c + eps) / (1.0 + 2.0 * eps * c + eps * eps)


def _check_eps(eps):
    e = np.asarray(eps)
    if np.any(e < 0.0) or np.any(e >= 1.0):
        raise ValueError(f"disk radius must satisfy 0 <= eps < 1, got {eps}")


def decompose_flight(xi, beta_value):
    """Split a flight time into full recollision loops and a residual sweep.

    Returns (nu, zeta) with xi = nu*(2*pi - beta) + zeta and
    0 <= zeta < 2*pi - beta.
    """
    loop = TWO_PI - np.asarray(beta_value, dtype=float)
    nu = np.floor(np.asarray(xi, dtype=float) / loop)
    zeta = np.asarray(xi, dtype=float) - nu * loop
    if np.isscalar(xi) or np.ndim(xi) == 0:
        return int(nu), float(zeta)
    return nu.astype(np.int64), zeta


def sign_eps(zeta):
    """+1 if the residual sweep is below pi, -1 otherwise (1 - 2*floor(zeta/pi))."""
    s = 1 - 2 * np.floor(np.asarray(zeta, dtype=float) / math.pi)
    if np.isscalar(zeta) or np.ndim(zeta) == 0:
        return int(s)
    return s.astype(np.int64)


def reflect(vel, normal):
    """Elastic reflection v - 2 (v.n) n; preserves the norm."""
    _require_unit(vel)
    _require_unit(normal)
    return vel - 2.0 * (vel.real * normal.real + vel.imag * normal.imag) * normal


# ---------------------------------------------------------------------------
# arcs and disks

@dataclass
class Disk:
    center: complex
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("disk radius must be positive")


@dataclass
class ArcSegment:
    """One anticlockwise arc of a unit-radius orbit.

    The particle sits at center + e^{i*(start_angle + s)} after sweeping
    s in [0, sweep]; unit speed makes s both arc length and elapsed time
    since t0.
    """

    center: complex
    start_angle: float
    sweep: float
    t0: float = 0.0

    def point_at(self, s):
        return self.center + np.exp(1j * (self.start_angle + s))

    def start_point(self):
        return self.point_at(0.0)

    def end_point(self):
        return self.point_at(self.sweep)

    def velocity_at(self, s):
        """Unit velocity after sweeping s (tangent, anticlockwise)."""
        return 1j * np.exp(1j * (self.start_angle + s))

    def t1(self):
        return self.t0 + self.sweep


def first_arc_disk_hit(arc_start_pos, vel, disk: Disk, max_sweep: float
                       ) -> Optional[Tuple[float, complex]]:
    """Earliest contact of the orbit through (pos, vel) with a disk boundary.

    Returns (sweep, hit_point) for the smallest anticlockwise sweep in
    (0, max_sweep] at which the particle is at distance disk.radius from
    disk.center, or None when the full orbit misses the disk.  Grazing
    contacts (circle-circle discriminant within GRAZING_TOL of zero) are
    ignored: they have measure zero and resolving them would only inject
    noise-level asymmetries.
    """
    c = larmor_center(arc_start_pos, vel)
    d = abs(disk.center - c)
    r = disk.radius
    if abs(arc_start_pos - disk.center) < r - GRAZING_TOL:
        raise ValueError("arc start position lies strictly inside the disk")
    if d >= 1.0 + r - GRAZING_TOL or d <= abs(1.0 - r) + GRAZING_TOL or d == 0.0:
        return None
    # circle-circle intersection: cos/sin of the half-aperture of the disk
    # as seen from the orbit center
    cos_half = (1.0 + d * d - r * r) / (2.0 * d)
    cos_half = min(1.0, max(-1.0, cos_half))
    half = math.atan2(math.sqrt(max(0.0, 1.0 - cos_half * cos_half)), cos_half)
    axis = math.atan2((disk.center - c).imag, (disk.center - c).real)
    a0 = math.atan2((arc_start_pos - c).imag, (arc_start_pos - c).real)
    best = None
    for ang in (axis - half, axis + half):
        s = (ang - a0) % TWO_PI
        if s <= GRAZING_TOL:            # the contact we are standing on
            continue
        if s <= max_sweep and (best is None or s < best):
            best = s
    if best is None:
        return None
    return best, c + np.exp(1j * (a0 + best))


def min_distance_point_to_arc(p: complex, arc: ArcSegment) -> float:
    """Exact Euclidean distance from a point to an arc.

    The distance to the full circle is | |p - center| - 1 |, attained at the
    radial foot; if that foot's angle falls outside the swept interval the
    minimum moves to one of the endpoints.
    """
    rel = p - arc.center
    d = abs(rel)
    if d == 0.0:
        return 1.0
    foot = (math.atan2(rel.imag, rel.real) - arc.start_angle) % TWO_PI
    if foot <= arc.sweep:
        return abs(d - 1.0)
    return min(abs(p - arc.start_point()), abs(p - arc.end_point()))


def min_distance_point_to_arcs(px, py, centers, start_angles, sweeps):
    """Vectorized min distance from one point to many arcs (arrays)."""
    rel_x = px - centers.real
    rel_y = py - centers.imag
    d = np.hypot(rel_x, rel_y)
    foot = (np.arctan2(rel_y, rel_x) - start_angles) % TWO_PI
    on_arc = foot <= sweeps
    ends0 = centers + np.exp(1j * start_angles)
    ends1 = centers + np.exp(1j * (start_angles + sweeps))
    d_end = np.minimum(np.hypot(px - ends0.real, py - ends0.imag),
                       np.hypot(px - ends1.real, py - ends1.imag))
    return np.where(on_arc, np.abs(d - 1.0), d_end)


def min_distance_points_to_arc_set(points, centers, start_angles, sweeps):
    """Min distance from each of many points to the nearest of many arcs.

    points: complex array (P,); arcs as arrays (A,).  Returns (P,) mins,
    computed on the (P, A) broadcast grid.
    """
    points = np.asarray(points, dtype=complex)
    rel_x = points.real[:, None] - centers.real[None, :]
    rel_y = points.imag[:, None] - centers.imag[None, :]
    d = np.hypot(rel_x, rel_y)
    foot = (np.arctan2(rel_y, rel_x) - start_angles[None, :]) % TWO_PI
    on_arc = foot <= sweeps[None, :]
    ends0 = centers + np.exp(1j * start_angles)
    ends1 = centers + np.exp(1j * (start_angles + sweeps))
    d0 = np.abs(points[:, None] - ends0[None, :])
    d1 = np.abs(points[:, None] - ends1[None, :])
    full = np.where(on_arc, np.abs(d - 1.0), np.minimum(d0, d1))
    return full.min(axis=1)


# ---------------------------------------------------------------------------
# occupation helpers

def _inside_time_cdf(x, a):
    """measure([0, x] intersect [a, 2*pi - a]) for x in [0, 4*pi], a in [0, pi]."""
    full = TWO_PI - 2.0 * a
    wraps = np.floor(x / TWO_PI)
    rem = x - TWO_PI * wraps
    return full * wraps + np.clip(rem - a, 0.0, full)


def arc_time_inside_radius(centers, start_angles, sweeps, radius):
    """Time each arc spends inside the disk {|x| <= radius} about the origin.

    Arcs are unit circles: |point|^2 = d^2 + 1 + 2 d cos(psi - arg(center))
    with d = |center|, so membership is an interval in the arc angle psi,
    symmetric about the direction pointing back at the origin.
    """
    d = np.abs(centers)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (radius * radius - d * d - 1.0) / (2.0 * d)
    u = np.where(d > 0.0, u, np.where(radius >= 1.0, 1.0, -1.0))
    u = np.clip(u, -1.0, 1.0)
    a = np.arccos(u)  # inside iff cos(psi - theta_c) <= u iff psi - theta_c in [a, 2pi - a]
    b0 = (start_angles - np.angle(centers_safe(centers))) % TWO_PI
    return _inside_time_cdf(b0 + sweeps, a) - _inside_time_cdf(b0, a)


def centers_safe(centers):
    """Replace exact zeros so np.angle is defined; the a-clamp makes the result exact."""
    c = np.asarray(centers, dtype=complex)
    return np.where(c == 0.0, 1.0 + 0.0j, c)


def arc_time_in_annulus(centers, start_angles, sweeps, r_lo, r_hi):
    """Time each arc spends in the annulus r_lo < |x| <= r_hi about the origin."""
    hi = arc_time_inside_radius(centers, start_angles, sweeps, r_hi)
    lo = arc_time_inside_radius(centers, start_angles, sweeps, r_lo)
    return hi - lo
