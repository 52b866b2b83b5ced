import numpy as np
import pytest
from numpy.polynomial import polynomial as npoly

from tyurin_lab.normal_form import Disk, NormalForm
from tyurin_lab.tyurin import (bn_matrix_points, bnt_matrix, cauchy_minus,
                               corank_of_matrix, coranks, tyurin_basis,
                               tyurin_divisor)
from tyurin_lab.errors import InvalidDisk

DISK = Disk(2.2 - 1.5j, 0.55)


def rand_nf_disk(rng, n, degs, disk=DISK):
    diag = []
    for d in degs:
        roots = disk.center + 0.7 * disk.radius \
            * np.exp(2j * np.pi * rng.random(d)) * rng.random(d) ** 0.5
        q = np.array([1.0 + 0j])
        for r in roots:
            q = npoly.polymul(q, [-r, 1.0])
        diag.append(q)
    lower = {(j, k): rng.standard_normal(degs[j])
             + 1j * rng.standard_normal(degs[j])
             for j in range(n) for k in range(j) if degs[j] > 0}
    return NormalForm(n, disk, diag, lower)


# -- cauchy_minus --------------------------------------------------------

def test_cauchy_minus_analytic():
    tail = cauchy_minus(lambda z: (z ** 2 + 1)[:, None], [], DISK)
    assert tail.parts == []


def test_cauchy_minus_simple_pole():
    a = DISK.center + (0.1 + 0.1j)
    tail = cauchy_minus(lambda z: (1 / (z - a) + z ** 2)[:, None],
                        [(a, 1)], DISK)
    assert len(tail.parts) == 1
    assert np.abs(tail.parts[0].coeffs - [[1.0]]).max() < 1e-10


def test_cauchy_minus_pole_on_boundary():
    a = DISK.center + DISK.radius
    with pytest.raises(InvalidDisk):
        cauchy_minus(lambda z: (1 / (z - a))[:, None], [(a, 1)], DISK)


def test_cauchy_minus_matches_adjugate_residue():
    rng = np.random.default_rng(21)
    P = rand_nf_disk(rng, 2, [1, 1])
    div = tyurin_divisor(P)
    detp = P.det_poly()
    ddetp = npoly.polyder(detp)
    for j in range(2):
        def f(z, j=j):
            Pz = P(z)
            rhs = np.zeros((len(z), 2), dtype=complex)
            rhs[:, j] = 1.0
            return np.linalg.solve(np.swapaxes(Pz, -1, -2),
                                   rhs[..., None])[..., 0]
        tail = cauchy_minus(f, div, DISK)
        for part in tail.parts:
            t = part.point.x
            M = P(np.array([t]))[0]
            adj = np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]])
            expect = adj[j, :] / npoly.polyval(t, ddetp)
            assert np.abs(part.coeffs[0] - expect).max() < 1e-9


# -- tyurin_basis --------------------------------------------------------

def test_basis_left_kernel_property():
    rng = np.random.default_rng(4)
    P = rand_nf_disk(rng, 2, [2, 2])
    tails = tyurin_basis(P)
    assert len(tails) == 4
    for tail in tails:
        for part in tail.parts:
            h = part.coeffs[0]
            defect = np.abs(h @ P(np.array([part.point.x]))[0]).max()
            assert defect < 1e-9


def test_basis_scalar_case_counts():
    t1, t2 = DISK.center + (-0.1 + 0.3j), DISK.center + (0.2 - 0.2j)
    p = npoly.polymul([-t1, 1], [-t2, 1])
    tails = tyurin_basis(NormalForm(1, DISK, [p]))
    assert len(tails) == 2
    pts = np.sort_complex(np.array([t.parts[0].point.x for t in tails]))
    assert np.abs(pts - np.sort_complex(np.array([t1, t2]))).max() < 1e-9


def test_basis_double_point_orders_and_z_closure():
    t = DISK.center + (-0.05 + 0.2j)
    p = npoly.polymul([-t, 1], [-t, 1])
    P = NormalForm(1, DISK, [p])
    tails = tyurin_basis(P)
    orders = sorted(tail.parts[0].order for tail in tails)
    assert orders == [1, 2]
    # closure under multiplication by z: C_minus[z * v] stays in the span
    span = np.array([[tail.parts[0].coeffs[l, 0] if l < tail.parts[0].order
                      else 0 for l in range(2)] for tail in tails])
    for tail in tails:
        def zf(z, tail=tail):
            return z[:, None] * tail.eval(z)
        zt = cauchy_minus(zf, [(t, 2)], DISK)
        vec = np.zeros(2, dtype=complex)
        for part in zt.parts:
            for l in range(part.order):
                vec[l] = part.coeffs[l, 0]
        sol, res, *_ = np.linalg.lstsq(span.T, vec, rcond=None)
        assert np.abs(span.T @ sol - vec).max() < 1e-9


def test_double_point_principal_part_series():
    # P = (z-t)^2: principal part of P^{-1} is exactly (z-t)^{-2}
    t = DISK.center + (-0.05 + 0.2j)
    p = npoly.polymul([-t, 1], [-t, 1])
    tail = cauchy_minus(lambda z: (1 / npoly.polyval(z, p))[:, None],
                        [(t, 2)], DISK)
    part = tail.parts[0]
    assert part.order == 2
    assert abs(part.coeffs[0, 0]) < 1e-10          # no simple-pole term
    assert abs(part.coeffs[1, 0] - 1) < 1e-10


# -- BNT matrix ----------------------------------------------------------

def test_bnt_scalar_equals_classical(ctx):
    t1, t2 = DISK.center + (-0.1 + 0.3j), DISK.center + (0.2 - 0.2j)
    p = npoly.polymul([-t1, 1], [-t2, 1])
    data = bnt_matrix(NormalForm(1, DISK, [p]), ctx)
    ref = bn_matrix_points(ctx, [ctx.point(t, DISK.sheet)
                                 for t in (t1, t2)])
    # column order may differ; match by point ordering
    order = np.argsort([part.point.x.real for tail in data.basis
                        for part in tail.parts])
    assert np.abs(data.Tmat[:, order]
                  - ref[:, np.argsort([t1.real, t2.real])]).max() < 1e-9


def test_bnt_generic_rank(ctx):
    rng = np.random.default_rng(8)
    P = rand_nf_disk(rng, 2, [1, 3])
    data = bnt_matrix(P, ctx)
    assert coranks(data) == (2, 0)


def test_bnt_block_structure(ctx):
    # a direct-sum bundle diag(p, p) decouples into two copies of the
    # scalar problem: after sorting rows/columns by component the matrix
    # is block diagonal with two identical blocks
    t1, t2 = DISK.center + (-0.1 + 0.3j), DISK.center + (0.2 - 0.2j)
    p = npoly.polymul([-t1, 1], [-t2, 1])
    dd = bnt_matrix(NormalForm(2, DISK, [p, p]), ctx)
    comp = []
    for tail in dd.basis:
        nz = {b for part in tail.parts
              for b in np.flatnonzero(np.abs(part.coeffs).max(axis=0)
                                      > 1e-12)}
        assert len(nz) == 1          # tails stay within one component
        comp.append(nz.pop())
    g, n = ctx.g, 2
    blocks = []
    for b in (0, 1):
        rows = [a * n + b for a in range(g)]
        cols = [i for i, c in enumerate(comp) if c == b]
        other = [i for i, c in enumerate(comp) if c != b]
        assert np.abs(dd.Tmat[np.ix_(rows, other)]).max() < 1e-12
        blocks.append(dd.Tmat[np.ix_(rows, cols)])
    s0 = np.linalg.svd(blocks[0], compute_uv=False)
    s1 = np.linalg.svd(blocks[1], compute_uv=False)
    assert np.abs(s0 - s1).max() < 1e-10
    assert np.abs(np.sort(dd.singular_values)
                  - np.sort(np.concatenate([s0, s1]))).max() < 1e-10


def test_bnt_holomorphic_in_moduli(ctx):
    # Cauchy-Riemann in a lower coefficient by finite differences
    rng = np.random.default_rng(17)
    base = rand_nf_disk(rng, 2, [1, 3])
    h = 1e-5

    def tmat(delta):
        nf = NormalForm(2, DISK, [c.copy() for c in base.diag],
                        {k: v.copy() for k, v in base.lower.items()})
        nf.lower[(1, 0)] = nf.lower[(1, 0)] + delta * np.array([1, 0, 0])
        return bnt_matrix(nf, ctx).Tmat

    d_real = (tmat(h) - tmat(-h)) / (2 * h)
    d_imag = (tmat(1j * h) - tmat(-1j * h)) / (2j * h)
    assert np.abs(d_real - d_imag).max() < 1e-5


# -- theta-divisor detection for point divisors --------------------------

def test_corank_agrees_with_theta_oracle(ctx):
    rng = np.random.default_rng(30)
    scale = abs(ctx.theta(ctx.riemann_constants() + 0.3))
    for _ in range(10):
        pts = [ctx.point(2.2 * (rng.standard_normal()
                                + 1j * rng.standard_normal()),
                         rng.choice([-1, 1])) for _ in range(ctx.g)]
        T = bn_matrix_points(ctx, pts)
        k = corank_of_matrix(T)
        th = abs(ctx.theta_with_divisor(pts))
        assert (k >= 1) == (th < 1e-8 * max(scale, 1.0))
    for _ in range(3):
        x0 = 1.5 * (rng.standard_normal() + 1j * rng.standard_normal())
        pair = [ctx.point(x0, 1), ctx.point(x0, -1)]
        assert corank_of_matrix(bn_matrix_points(ctx, pair)) == 1
        assert abs(ctx.theta_with_divisor(pair)) < 1e-8
