import numpy as np
import pytest

from tyurin_lab.theta import theta
from tyurin_lab.errors import TruncationError

TAU = (1 + np.sqrt(2) * 1j) / 3 * np.array([[2, -1], [-1, 2]])

RNG = np.random.default_rng(11)


def rand_z():
    return RNG.standard_normal(2) + 1j * RNG.standard_normal(2)


def test_even():
    for _ in range(5):
        z = rand_z()
        assert abs(theta(z, TAU) - theta(-z, TAU)) < 1e-12 * abs(theta(z, TAU))


def test_periodicity_integer():
    z = rand_z()
    assert abs(theta(z + np.array([1, 0]), TAU) - theta(z, TAU)) \
        < 1e-11 * abs(theta(z, TAU))


def test_quasi_periodicity():
    for k in range(2):
        z = rand_z()
        e = np.zeros(2)
        e[k] = 1
        lhs = theta(z + TAU @ e, TAU)
        rhs = np.exp(-1j * np.pi * TAU[k, k] - 2j * np.pi * z[k]) \
            * theta(z, TAU)
        assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


def test_gradient_matches_finite_differences():
    z = rand_z()
    val, grad = theta(z, TAU, derivative_order=1)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1
        fd = (theta(z + h * e, TAU) - theta(z - h * e, TAU)) / (2 * h)
        assert abs(fd - grad[k]) < 1e-6 * max(abs(grad[k]), 1.0)


def test_truncation_cap():
    tiny = 1e-6 * np.eye(2) * 1j + np.zeros((2, 2))
    with pytest.raises(TruncationError):
        theta(np.zeros(2), tiny, radius_cap=30.0)
