"""Numerical toolkit for framed bundles on hyperelliptic curves:
periods, theta functions, Cauchy kernels, meromorphic connections and
their monodromy, and the associated symplectic invariants."""

from .curve import (CurveContext, DifferentialValue, QuadConfig,
                    SurfacePoint, build_curve, INFINITY_W)
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
