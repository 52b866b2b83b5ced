import numpy as np
import pytest

from tyurin_lab import paths
from tyurin_lab.errors import PathError


def test_refine_step_bound():
    line = paths.refine([0, 1 + 1j], 0.1)
    steps = np.abs(np.diff(line))
    assert steps.max() <= 0.1 + 1e-12
    assert line[0] == 0 and line[-1] == 1 + 1j


def test_circle_closes():
    c = paths.circle(2j, 0.5, theta0=0.3)
    assert abs(c[0] - c[-1]) < 1e-14
    assert np.allclose(np.abs(c - 2j), 0.5)


def test_route_detours_around_obstacle():
    p = paths.route(-1, 1, avoid=[0.0], clearance=0.3)
    # refined polyline keeps clearance at interior vertices
    fine = paths.refine(p, 0.01)
    interior = fine[(np.abs(fine + 1) > 1e-9) & (np.abs(fine - 1) > 1e-9)]
    assert np.abs(interior).min() > 0.29


def test_route_endpoint_exempt():
    # an endpoint inside the clearance zone is allowed
    p = paths.route(0.1, 2.0, avoid=[0.0], clearance=0.3)
    assert abs(p[0] - 0.1) < 1e-14


def test_route_impossible_raises():
    ring = [np.exp(2j * np.pi * k / 12) for k in range(12)]
    with pytest.raises(PathError):
        # start is trapped inside a dense ring of obstacles
        paths.route(0, 10, avoid=ring, clearance=0.9)
