"""Deterministic, splittable random streams and the primitive draw laws.

Every experiment consumes randomness through a ``RandomStream`` keyed by
``(seed, stream_index)``.  Streams are counter-based (Philox), so distinct
trajectories can be generated in parallel, in any order, and replayed
bit-identically from the seed recorded in the output header.

The primitive laws of the flight construction:

* flight time          xi    ~ EXP(1)
* scattering angle     alpha ~ 2*arccos(UNI[-1, 1]),  density (1/4) sin(x/2)
* residual flight      zeta  ~ TRUNCEXP(1, cutoff),   density e^-x / (1 - e^-cutoff)
* initial direction    phi0  ~ UNI[0, 2*pi)

All are implemented by inverse-CDF transforms of uniforms, exposed both as
pure functions (for oracle tests) and as stream methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# inverse-CDF transforms (pure, array-friendly)

def uniform_to_angle(u):
    """Map u in [0, 1) to a uniform angle in [0, 2*pi)."""
    return TWO_PI * np.asarray(u, dtype=float)


def uniform_to_exp(u):
    """Inverse CDF of EXP(1); u = 1 - e^-x, so x = -log(1 - u)."""
    return -np.log1p(-np.asarray(u, dtype=float))


def uniform_to_alpha(u):
    """Scattering angle with density (1/4) sin(x/2) on [0, 2*pi).

    Realized as 2*arccos(v) with v = 1 - 2u uniform on [-1, 1].  The
    boundary value 2*pi (v = -1) is folded to 0 so angles stay in [0, 2*pi).
    """
    x = 2.0 * np.arccos(1.0 - 2.0 * np.asarray(u, dtype=float))
    return np.where(x >= TWO_PI, x - TWO_PI, x)


def uniform_to_truncexp(u, cutoff):
    """Inverse CDF of the exponential law truncated to [0, cutoff]."""
    if cutoff <= 0.0:
        raise ValueError(f"truncexp cutoff must be positive, got {cutoff}")
    return -np.log1p(-np.asarray(u, dtype=float) * (-np.expm1(-cutoff)))


def alpha_density(x):
    """Density (1/4) sin(x/2) of the scattering angle on [0, 2*pi)."""
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0.0) & (x < TWO_PI), 0.25 * np.sin(0.5 * x), 0.0)


def truncexp_density(x, cutoff):
    """Density of TRUNCEXP(1, cutoff) at x."""
    x = np.asarray(x, dtype=float)
    norm = -np.expm1(-cutoff)
    return np.where((x >= 0.0) & (x <= cutoff), np.exp(-x) / norm, 0.0)


def truncexp_mean(cutoff):
    """Mean of TRUNCEXP(1, cutoff): (1 - (1 + c) e^-c) / (1 - e^-c)."""
    return (1.0 - (1.0 + cutoff) * math.exp(-cutoff)) / (-math.expm1(-cutoff))


# ---------------------------------------------------------------------------
# streams

@dataclass
class PrimitiveDraw:
    """One step of driving noise: flight time xi > 0 and angle alpha in [0, 2*pi)."""

    xi: float
    alpha: float


class RandomStream:
    """Counter-based random stream; (seed, stream_index) fixes the sequence.

    A stream is value-like: it is meant to be confined to one trajectory or
    one worker.  ``counter`` records how many uniforms have been consumed,
    which is bookkeeping only; determinism comes from the Philox key.
    """

    def __init__(self, seed: int, stream_index: int = 0):
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        self.counter = 0
        self._gen = np.random.Generator(
            np.random.Philox(
                np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_index,))
            )
        )

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_index={self.stream_index})"

    def uniform01(self, size=None):
        """Raw uniforms in [0, 1)."""
        self.counter += 1 if size is None else int(np.prod(size))
        return self._gen.random(size)

    def sample_uniform_angle(self, size=None):
        return uniform_to_angle(self.uniform01(size))

    def sample_exp(self, size=None):
        return uniform_to_exp(self.uniform01(size))

    def sample_alpha(self, size=None):
        return uniform_to_alpha(self.uniform01(size))

    def sample_truncexp(self, cutoff, size=None):
        return uniform_to_truncexp(self.uniform01(size), cutoff)

    def poisson(self, lam, size=None):
        self.counter += 1 if size is None else int(np.prod(size))
        return self._gen.poisson(lam, size)

    def draw(self) -> PrimitiveDraw:
        """One (xi, alpha) driving pair."""
        return PrimitiveDraw(xi=float(self.sample_exp()), alpha=float(self.sample_alpha()))

    def draws(self, n):
        """n driving pairs as arrays (xi, alpha)."""
        return self.sample_exp(n), self.sample_alpha(n)


def split_stream(seed: int, index: int) -> RandomStream:
    """Stream number ``index`` of the family keyed by ``seed``.

    Streams with distinct indices are statistically independent; the same
    (seed, index) always reproduces the same stream.
    """
    return RandomStream(seed, index)
