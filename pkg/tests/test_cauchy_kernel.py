import numpy as np
import pytest
from numpy.polynomial import polynomial as npoly

from tyurin_lab.cauchy_kernel import (build_kernel, eval_kernel,
                                      scalar_determinant_kernel,
                                      verify_kernel_axioms)
from tyurin_lab.curve import SurfacePoint
from tyurin_lab.errors import InvalidDisk, OnThetaDivisor
from tyurin_lab.normal_form import Disk, NormalForm
from tyurin_lab.tyurin import bnt_matrix

DISK = Disk(2.2 - 1.5j, 0.55)


def poly_with_roots(roots):
    q = np.array([1.0 + 0j])
    for r in roots:
        q = npoly.polymul(q, [-r, 1.0])
    return q


def rank2_data(ctx, seed=5):
    rng = np.random.default_rng(seed)
    diag = []
    for d in (2, 2):
        roots = DISK.center + 0.6 * DISK.radius \
            * np.exp(2j * np.pi * rng.random(d)) * rng.random(d) ** 0.5
        diag.append(poly_with_roots(roots))
    lower = {(1, 0): rng.standard_normal(2) + 1j * rng.standard_normal(2)}
    return bnt_matrix(NormalForm(2, DISK, diag, lower), ctx)


# -- guards --------------------------------------------------------------

def test_marked_point_in_disk_rejected(ctx):
    disk = Disk(3.0, 0.3)
    t1, t2 = disk.center + 0.1 + 0.1j, disk.center - 0.1j
    data = bnt_matrix(NormalForm(1, disk, [poly_with_roots([t1, t2])]), ctx)
    with pytest.raises(InvalidDisk):
        build_kernel(data)


def test_degenerate_pairing_rejected(ctx):
    data = rank2_data(ctx)
    U, s, Vh = np.linalg.svd(data.Tmat)
    s = s.copy()
    s[-1] = 1e-12 * s[0]
    data.Tmat = (U * s) @ Vh
    data.singular_values = s
    with pytest.raises(OnThetaDivisor) as e:
        build_kernel(data)
    assert e.value.corank == 1


# -- defining properties -------------------------------------------------

def test_kernel_axioms_rank2(ctx):
    K = build_kernel(rank2_data(ctx))
    rep = verify_kernel_axioms(K)
    assert rep["residue_at_p"] < 1e-8
    assert rep["residue_at_marked_point"] < 1e-8
    assert rep["vanishing_at_p_inf"] < 1e-2
    assert rep["P_inv_C_regular_at_T"] < 1e-8
    assert rep["C_P_analytic_in_p_at_T"] < 1e-6
    assert rep["tails_annihilate"] < 1e-8


def test_kernel_axioms_double_point(ctx):
    t = DISK.center + (0.1 - 0.15j)
    P = NormalForm(1, DISK, [poly_with_roots([t, t])])
    K = build_kernel(bnt_matrix(P, ctx))
    rep = verify_kernel_axioms(K)
    assert rep["residue_at_p"] < 1e-8
    assert rep["residue_at_marked_point"] < 1e-8
    assert rep["P_inv_C_regular_at_T"] < 1e-8
    assert rep["C_P_analytic_in_p_at_T"] < 1e-6


# -- scalar oracle -------------------------------------------------------

def test_scalar_kernel_matches_bordered_determinant(ctx):
    t1 = DISK.center + (-0.12 + 0.2j)
    t2 = DISK.center + (0.18 - 0.1j)
    P = NormalForm(1, DISK, [poly_with_roots([t1, t2])])
    K = build_kernel(bnt_matrix(P, ctx))
    pts = [ctx.point(t1, DISK.sheet), ctx.point(t2, DISK.sheet)]
    qs = [ctx.point(1.9 + 0.8j, 1), ctx.point(-0.5 - 1.6j, -1)]
    ps = [ctx.point(DISK.center + 0.2j, DISK.sheet),      # inside the disk
          ctx.point(-1.8 + 0.6j, -1)]                     # outside
    for q in qs:
        for p in ps:
            val = eval_kernel(K, q, p)[0, 0]
            ref = scalar_determinant_kernel(ctx, pts, q, p)
            assert abs(val - ref) < 1e-9 * max(1.0, abs(ref))


def test_scalar_kernel_vanishes_on_divisor(ctx):
    t1 = DISK.center + (-0.12 + 0.2j)
    t2 = DISK.center + (0.18 - 0.1j)
    P = NormalForm(1, DISK, [poly_with_roots([t1, t2])])
    K = build_kernel(bnt_matrix(P, ctx))
    p = ctx.point(0.4 + 1.9j, 1)
    far = abs(eval_kernel(K, ctx.point(DISK.center - 0.3, DISK.sheet),
                          p)[0, 0])
    for t in (t1, t2):
        near = abs(eval_kernel(K, ctx.point(t + 1e-7, DISK.sheet), p)[0, 0])
        assert near < 1e-5 * max(far, 1e-30)


# -- single-valuedness in p ----------------------------------------------

def test_kernel_single_valued_in_p(ctx):
    """Continuing the third-kind differential in its pole p around a
    b-cycle shifts its a-normalization constant by 2 pi i times a unit
    vector.  The counterterm built from the pairing conditions must
    cancel that shift exactly, leaving the assembled kernel unchanged,
    which makes it a single-valued function of p on the curve."""
    K = build_kernel(rank2_data(ctx))
    qs = [ctx.point(2.4 + 1.7j, 1), ctx.point(-1.1 - 1.3j, -1)]
    ps = [ctx.point(0.4 + 1.9j, 1),
          ctx.point(DISK.center - 0.2 * DISK.radius, DISK.sheet)]
    rng = np.random.default_rng(11)
    for p in ps:
        key = (complex(p.x), p.sheet, p.branch, p.at_infinity)
        base = [eval_kernel(K, q, p) for q in qs]
        shifts = [np.eye(ctx.g, dtype=complex)[ell] * sign * 2j * np.pi
                  for ell in range(ctx.g) for sign in (1, -1)]
        # arbitrary holomorphic shifts cancel too, not only lattice ones
        shifts.append(rng.standard_normal(ctx.g)
                      + 1j * rng.standard_normal(ctx.g))
        for shift in shifts:
            K._norm_cache[key] = shift
            for q, ref in zip(qs, base):
                val = eval_kernel(K, q, p)
                assert np.abs(val - ref).max() < 1e-10 \
                    * max(1.0, np.abs(ref).max())
        K._norm_cache.pop(key)
