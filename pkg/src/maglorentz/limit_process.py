"""The low-density limit process: flight chain, displacements, trajectory.

In the low-density limit the scatterers degenerate to points and the motion
between fresh collisions consists of nu = floor(xi / 2*pi) full Larmor
loops (zero net displacement) followed by a residual arc of sweep
zeta = xi - 2*pi*nu.  Every collision, fresh or repeated, turns the
velocity by the same angle alpha, so the direction entering the next fresh
collision is

    phi' = phi + (nu + 1) * alpha + zeta.

The displacement between consecutive fresh collisions is the chord of the
residual arc,

    y = 2 sin(zeta/2) * exp(i * (phi + (nu + 1) alpha + zeta/2)),

so the pair (zeta_n, theta_n) with theta_n = arg(y_n) is an autonomous
Markov chain on [0, 2*pi) x [0, 2*pi):

    theta_{n+1} = theta_n + zeta_n/2 + (nu + 1) alpha + zeta_{n+1}/2  (mod 2*pi).

Its stationary law is TRUNCEXP(1, 2*pi) x UNI[0, 2*pi), and the chain
satisfies a Doeblin minorization whose constant is computed here by grid
evaluation of the mixing density of (nu + 1) * alpha mod 2*pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .randomness import (
    PrimitiveDraw,
    RandomStream,
    TWO_PI,
    alpha_density,
    truncexp_density,
)
from .geometry import ArcSegment, decompose_flight


@dataclass
class LimitChainState:
    """Residual sweep zeta in [0, 2*pi] and step direction theta in [0, 2*pi)."""

    zeta: float
    theta: float


@dataclass
class StepRecord:
    """One fresh-collision step: chain state, displacement, partial sum, time."""

    n: int
    state: LimitChainState
    draw: PrimitiveDraw
    nu: int
    y: complex
    Y: complex
    tau: float


@dataclass
class RenewalSchedule:
    """Fresh-collision times tau_n and the recollision grid tau_{n,k}.

    Segment n (running from tau_{n-1} to tau_n) recollides with the point
    scatterer met at tau_{n-1} at times tau_{n-1} + 2*pi*k, k = 1..nu_n.
    """

    tau: List[float]          # tau_0 = 0, tau_n = sum of the first n flight times
    nu: List[int]             # nu_n for segment n >= 1
    tau_nk: List[List[float]]  # per segment: [tau_{n-1} + 2*pi*k for k = 0..nu_n]


# ---------------------------------------------------------------------------
# chain mechanics

def step_chain(state: LimitChainState, draw: PrimitiveDraw) -> LimitChainState:
    """Advance the (zeta, theta) chain by one fresh collision."""
    nu, zeta_new = decompose_flight(draw.xi, 0.0)
    theta_new = (state.theta + 0.5 * state.zeta + (nu + 1) * draw.alpha
                 + 0.5 * zeta_new) % TWO_PI
    return LimitChainState(zeta=zeta_new, theta=theta_new)


def step_displacement(prev_state: LimitChainState, new_state: LimitChainState,
                      draw: PrimitiveDraw) -> complex:
    """Displacement between the fresh collisions joining the two states."""
    return 2.0 * math.sin(0.5 * new_state.zeta) * complex(math.cos(new_state.theta),
                                                          math.sin(new_state.theta))


def initial_state(phi0: float, draw: PrimitiveDraw) -> LimitChainState:
    """First chain state from the initial direction phi0 (the step at time 0)."""
    nu, zeta = decompose_flight(draw.xi, 0.0)
    theta = (phi0 + (nu + 1) * draw.alpha + 0.5 * zeta) % TWO_PI
    return LimitChainState(zeta=zeta, theta=theta)


def sample_stationary(s: RandomStream) -> LimitChainState:
    """Draw from the stationary law TRUNCEXP(1, 2*pi) x UNI[0, 2*pi)."""
    return LimitChainState(zeta=float(s.sample_truncexp(TWO_PI)),
                           theta=float(s.sample_uniform_angle()))


def simulate_discrete(n_steps: int, s: RandomStream,
                      init: LimitChainState | None = None) -> List[StepRecord]:
    """Run n_steps fresh collisions and return the step records.

    With init=None the run starts from a uniform initial direction phi0 and
    the asymmetric first step; otherwise from the supplied chain state.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    records: List[StepRecord] = []
    Y = 0j
    tau = 0.0
    if init is None:
        phi0 = float(s.sample_uniform_angle())
        draw = s.draw()
        state = initial_state(phi0, draw)
    else:
        draw = s.draw()
        state = step_chain(init, draw)
    prev = init
    for n in range(1, n_steps + 1):
        y = step_displacement(prev, state, draw)
        Y += y
        tau += draw.xi
        nu = int(draw.xi // TWO_PI)
        records.append(StepRecord(n=n, state=state, draw=draw, nu=nu, y=y, Y=Y, tau=tau))
        if n == n_steps:
            break
        draw = s.draw()
        prev = state
        state = step_chain(state, draw)
    return records


# ---------------------------------------------------------------------------
# continuous trajectory

class LimitTrajectory:
    """Piecewise-arc trajectory of the limit process for a finite draw list.

    phi(t) rises at unit rate between scattering times and jumps by alpha at
    each fresh collision and recollision; Y(t) integrates e^{i phi}.  Both
    are evaluated in closed form per arc piece.
    """

    def __init__(self, phi0: float, draws: Sequence[PrimitiveDraw]):
        self.phi0 = float(phi0)
        self.draws = list(draws)
        self.schedule = RenewalSchedule(tau=[0.0], nu=[0], tau_nk=[])
        self._seg_phi = []      # post-scattering angle at the start of each segment
        self._seg_Y = [0j]      # position at each fresh collision
        phi = phi0
        tau = 0.0
        for d in self.draws:
            nu, zeta = decompose_flight(d.xi, 0.0)
            self.schedule.nu.append(nu)
            self.schedule.tau_nk.append([tau + TWO_PI * k for k in range(nu + 1)])
            self._seg_phi.append(phi + d.alpha)
            y = 2.0 * math.sin(0.5 * zeta) * np.exp(1j * (phi + (nu + 1) * d.alpha + 0.5 * zeta))
            phi = phi + (nu + 1) * d.alpha + zeta
            tau += d.xi
            self.schedule.tau.append(tau)
            self._seg_Y.append(self._seg_Y[-1] + y)
        self.total_time = tau

    def _locate(self, t: float):
        if not 0.0 <= t <= self.total_time + 1e-12:
            raise ValueError(f"time {t} outside the schedule [0, {self.total_time}]")
        taus = self.schedule.tau
        n = int(np.searchsorted(taus, t, side="right")) - 1
        n = min(n, len(self.draws) - 1)
        return n, t - taus[n]

    def phi(self, t: float) -> float:
        """Direction angle, left-continuous, jumping by alpha at collisions."""
        n, u = self._locate(t)
        d = self.draws[n]
        if u == 0.0:  # left limit at the fresh collision
            return (self._seg_phi[n] - d.alpha) % TWO_PI
        k = min(int(u // TWO_PI), self.schedule.nu[n + 1])
        rem = u - TWO_PI * k
        if rem == 0.0:  # left limit at a recollision
            k -= 1
            rem = TWO_PI
        return (self._seg_phi[n] + k * d.alpha + rem) % TWO_PI

    def velocity(self, t: float) -> complex:
        return np.exp(1j * self.phi(t))

    def position(self, t: float) -> complex:
        """Y(t), exact: full loops close, the current partial loop adds a chord."""
        n, u = self._locate(t)
        d = self.draws[n]
        k = min(int(u // TWO_PI), self.schedule.nu[n + 1])
        rem = u - TWO_PI * k
        a = self._seg_phi[n] + k * d.alpha
        chord = 2.0 * math.sin(0.5 * rem) * np.exp(1j * (a + 0.5 * rem))
        return self._seg_Y[n] + chord

    def collision_positions(self) -> List[complex]:
        return list(self._seg_Y)

    def arcs(self) -> List[ArcSegment]:
        """The trajectory as explicit arcs (for plotting and spatial queries)."""
        out = []
        for n, d in enumerate(self.draws):
            nu, zeta = decompose_flight(d.xi, 0.0)
            t0 = self.schedule.tau[n]
            Y0 = self._seg_Y[n]
            for k in range(nu + 1):
                a = self._seg_phi[n] + k * d.alpha
                sweep = TWO_PI if k < nu else zeta
                center = Y0 + 1j * np.exp(1j * a)
                out.append(ArcSegment(center=center, start_angle=a - 0.5 * math.pi,
                                      sweep=sweep, t0=t0 + TWO_PI * k))
        return out


def build_continuous(draws: Sequence[PrimitiveDraw], phi0: float = 0.0) -> LimitTrajectory:
    return LimitTrajectory(phi0, draws)


# ---------------------------------------------------------------------------
# Doeblin minorization

def loop_count_pmf(n):
    """P(nu = n) = e^{-2*pi*n} (1 - e^{-2*pi}) for the limit flight law."""
    return math.exp(-TWO_PI * n) * (-math.expm1(-TWO_PI))


def turn_mixing_density(w, nu_max: int = 40):
    """Density at w of (nu + 1) * alpha mod 2*pi, the theta-mixing kernel.

    For each nu the pushforward of the alpha law under multiplication by
    nu + 1 folds into nu + 1 preimage branches of equal Jacobian.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    total = np.zeros_like(w)
    for n in range(nu_max + 1):
        k = np.arange(n + 1)[:, None]
        branches = alpha_density((w[None, :] + TWO_PI * k) / (n + 1)) / (n + 1)
        total += loop_count_pmf(n) * branches.sum(axis=0)
    return total


def doeblin_delta_limit(n_grid: int = 20001, nu_max: int = 40) -> float:
    """Minorization constant of the limit chain against its stationary law.

    Given the states, theta' is a deterministic offset plus the mixing
    variable (nu + 1) alpha mod 2*pi, and zeta' is an independent
    TRUNCEXP(1, 2*pi); the kernel-to-stationary density ratio is therefore
    2*pi times the mixing density, whose infimum sits at w = 0 where only
    the nu >= 1 folds contribute.
    """
    w = np.linspace(0.0, TWO_PI, n_grid)
    return TWO_PI * float(turn_mixing_density(w, nu_max=nu_max).min())


def kernel_density(zeta_new, w, nu_max: int = 40):
    """Transition density at (zeta', theta' = c + w) from any state, where c
    is the deterministic angle offset theta + zeta/2 + zeta'/2."""
    return truncexp_density(zeta_new, TWO_PI) * turn_mixing_density(w, nu_max=nu_max)


# ---------------------------------------------------------------------------
# batch engine (vectorized lanes, used by the statistics modules)

class LimitBatch:
    """n_lanes independent limit chains advanced in lockstep.

    All lanes share one stream (lane index = column); per-step arrays are
    exposed so callers can harvest displacements or probe crossing times.
    """

    def __init__(self, n_lanes: int, stream: RandomStream, stationary: bool = True):
        self.n = int(n_lanes)
        self.stream = stream
        if stationary:
            self.zeta = stream.sample_truncexp(TWO_PI, self.n)
            self.theta = stream.sample_uniform_angle(self.n)
        else:
            phi0 = stream.sample_uniform_angle(self.n)
            xi = stream.sample_exp(self.n)
            alpha = stream.sample_alpha(self.n)
            nu = np.floor(xi / TWO_PI)
            self.zeta = xi - TWO_PI * nu
            self.theta = (phi0 + (nu + 1) * alpha + 0.5 * self.zeta) % TWO_PI
        self.Y = np.zeros(self.n, dtype=complex)
        self.tau = np.zeros(self.n)
        self.phi = (self.theta + 0.5 * self.zeta) % TWO_PI

    def step(self):
        """Advance every lane one fresh collision; returns the step arrays."""
        xi = self.stream.sample_exp(self.n)
        alpha = self.stream.sample_alpha(self.n)
        nu = np.floor(xi / TWO_PI)
        zeta_new = xi - TWO_PI * nu
        theta_new = (self.theta + 0.5 * self.zeta + (nu + 1.0) * alpha
                     + 0.5 * zeta_new) % TWO_PI
        y = 2.0 * np.sin(0.5 * zeta_new) * np.exp(1j * theta_new)
        prev_phi = self.phi
        prev_Y = self.Y.copy()
        prev_tau = self.tau.copy()
        self.zeta = zeta_new
        self.theta = theta_new
        self.phi = (theta_new + 0.5 * zeta_new) % TWO_PI
        self.Y = prev_Y + y
        self.tau = prev_tau + xi
        return dict(xi=xi, alpha=alpha, nu=nu, zeta=zeta_new, y=y,
                    prev_phi=prev_phi, prev_Y=prev_Y, prev_tau=prev_tau)

    def positions_at(self, t, step_arrays):
        """Exact Y(t) for lanes whose current segment straddles t.

        Uses the closed form of the partial loop: u = t - tau_prev splits as
        k full loops plus a remainder arc whose chord is added to Y_prev.
        """
        u = t - step_arrays["prev_tau"]
        alpha = step_arrays["alpha"]
        k = np.minimum(np.floor(u / TWO_PI), step_arrays["nu"])
        rem = u - TWO_PI * k
        a = step_arrays["prev_phi"] + (k + 1.0) * alpha
        return step_arrays["prev_Y"] + 2.0 * np.sin(0.5 * rem) * np.exp(1j * (a + 0.5 * rem))
