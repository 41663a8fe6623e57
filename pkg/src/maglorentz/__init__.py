"""Monte Carlo laboratory for the planar magnetic Lorentz gas.

A unit-speed charged particle moves on anticlockwise unit-radius Larmor
circles between elastic collisions with hard disks of radius eps whose
centers form a Poisson field of intensity rho.  The package simulates

* the physical process (event-driven, lazy infinite environment),
* its Markovized approximation that forgets all but the current scatterer,
* the low-density limit process driven by an explicit (zeta, theta) chain,

couples the Markovized and physical processes through mismatch detection,
and ships the regeneration / occupation-measure / invariance-principle
statistics used to check the quantitative behaviour of all three.

Positions and velocities live in the complex plane: a point x + i*y is the
planar vector (x, y), and unit-modulus complex numbers are directions.
"""

__version__ = "0.1.0"

TWO_PI = 6.283185307179586476925287

from . import (  # noqa: E402,F401
    coupling,
    environment,
    geometry,
    legs_green,
    limit_process,
    markovized,
    physical_mlp,
    randomness,
    stats,
)
