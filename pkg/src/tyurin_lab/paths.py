"""Polyline paths in the x-plane.

All integration contours are represented as arrays of complex waypoints.
Routing inserts detours so that segments keep a prescribed clearance from
a set of points to avoid (branch points, poles).
"""

from __future__ import annotations

import numpy as np

from .errors import PathError


def refine(points, max_step):
    """Subdivide a polyline so that no step exceeds max_step."""
    pts = np.asarray(points, dtype=complex)
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        d = abs(b - a)
        n = max(1, int(np.ceil(d / max_step)))
        out.append(a + (b - a) * np.arange(1, n + 1) / n)
    return np.concatenate(out)


def circle(center, radius, theta0=0.0, turns=1.0, n=64):
    """Circular arc starting at angle theta0, counterclockwise for turns>0."""
    t = np.linspace(0.0, 2 * np.pi * turns, max(int(abs(turns) * n), 8) + 1)
    return center + radius * np.exp(1j * (theta0 + t))


def _push_out(seg_a, seg_b, obstacle, clearance):
    """Closest approach of segment [a,b] to obstacle; detour point or None."""
    d = seg_b - seg_a
    L2 = abs(d) ** 2
    if L2 == 0.0:
        return None
    t = np.real(np.conj(d) * (obstacle - seg_a)) / L2
    if not 0.0 < t < 1.0:
        return None
    near = seg_a + t * d
    off = near - obstacle
    if abs(off) >= clearance:
        return None
    if abs(off) < 1e-13:
        off = 1j * d / abs(d)
    return obstacle + off / abs(off) * clearance * 1.5


def route(a, b, avoid=(), clearance=0.0, max_rounds=16):
    """Polyline from a to b keeping `clearance` from the points in `avoid`.

    Endpoints are allowed to sit closer than the clearance (e.g. a lasso
    tail ending on the rim of a branch-point circle).
    """
    pts = [complex(a), complex(b)]
    avoid = [complex(p) for p in avoid]
    for _ in range(max_rounds):
        changed = False
        new = [pts[0]]
        for p, q in zip(pts[:-1], pts[1:]):
            for obs in avoid:
                det = _push_out(p, q, obs, clearance)
                if det is not None:
                    new.append(det)
                    changed = True
                    break
            new.append(q)
        pts = new
        if not changed:
            return np.asarray(pts, dtype=complex)
    raise PathError(
        f"could not route {a} -> {b} with clearance {clearance}")


def min_distance(points, targets):
    """Minimum distance from any polyline vertex to any target point."""
    pts = np.asarray(points, dtype=complex)
    targets = np.asarray(list(targets), dtype=complex)
    if len(targets) == 0 or len(pts) == 0:
        return np.inf
    return np.abs(pts[:, None] - targets[None, :]).min()
