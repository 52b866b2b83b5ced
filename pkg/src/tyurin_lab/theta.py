"""Riemann theta function with ellipsoidal lattice truncation.

theta(z | tau) = sum_{m in Z^g} exp(i pi m.tau.m + 2 pi i m.z)

The sum is recentred at the saddle lattice point and truncated on a box
containing the ellipsoid on which the Gaussian tail falls below the
target tolerance (bound controlled by the smallest eigenvalue of Im tau).
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import TruncationError


def _truncation_radius(lam_min, tol):
    # |term| <= exp(-pi lam_min r^2) for lattice offsets of norm r;
    # pad by 2 to absorb the polynomial number of lattice points.
    return float(np.sqrt(np.log(1.0 / tol) / (np.pi * lam_min))) + 2.0


def theta(z, tau, derivative_order=0, tol=1e-12, radius_cap=60.0):
    """Riemann theta value (and gradient for derivative_order=1).

    Returns value, or (value, gradient) with gradient[k] = d theta / d z_k.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    tau = np.asarray(tau, dtype=complex)
    g = len(z)
    Y = tau.imag
    lam = np.linalg.eigvalsh(Y)
    lam_min = lam[0]
    if lam_min <= 0:
        raise TruncationError("Im tau not positive definite")
    R = _truncation_radius(lam_min, tol)
    if R > radius_cap:
        raise TruncationError(
            f"truncation radius {R:.1f} exceeds cap {radius_cap}")
    # recentre so the dominant terms sit near the origin of the summation box
    center = np.round(np.linalg.solve(Y, -z.imag)).astype(int)
    half = int(np.ceil(R))
    rng = np.arange(-half, half + 1)
    grids = np.meshgrid(*([rng] * g), indexing="ij")
    m = np.stack([a.ravel() for a in grids], axis=-1) + center  # (N, g)
    # the box already bounds the sum; the ellipsoid filter is a mild economy
    off = m + z.imag @ np.linalg.inv(Y)
    m = m[np.einsum("ni,ij,nj->n", off, Y, off) <= R * R * np.max(lam) * 4]
    expo = 1j * np.pi * np.einsum("ni,ij,nj->n", m, tau, m) + 2j * np.pi * (m @ z)
    shift = expo.real.max()
    terms = np.exp(expo - shift)
    val = terms.sum() * np.exp(shift)
    if derivative_order == 0:
        return val
    grad = (2j * np.pi) * (terms[:, None] * m).sum(axis=0) * np.exp(shift)
    return val, grad
