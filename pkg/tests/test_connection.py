import numpy as np
import pytest
from numpy.polynomial import polynomial as npoly

from tyurin_lab import connection as cn
from tyurin_lab.cauchy_kernel import build_kernel, eval_kernel
from tyurin_lab.curve import SurfacePoint
from tyurin_lab.errors import (ConnectionAxiomViolation, InvalidDivisor,
                               NumericalLimitFailure, SpecialDivisor)
from tyurin_lab.normal_form import Disk, NormalForm, reduce
from tyurin_lab.tyurin import bnt_matrix

DISK = Disk(2.2 - 1.5j, 0.55)
T1 = DISK.center + (-0.12 + 0.2j)
T2 = DISK.center + (0.18 - 0.1j)


def poly_with_roots(roots):
    q = np.array([1.0 + 0j])
    for r in roots:
        q = npoly.polymul(q, [-r, 1.0])
    return q


@pytest.fixture(scope="module")
def K1(ctx):
    P = NormalForm(1, DISK, [poly_with_roots([T1, T2])])
    return build_kernel(bnt_matrix(P, ctx))


def rank2_nf(seed=5):
    rng = np.random.default_rng(seed)
    diag = []
    for d in (2, 2):
        roots = DISK.center + 0.6 * DISK.radius \
            * np.exp(2j * np.pi * rng.random(d)) * rng.random(d) ** 0.5
        diag.append(poly_with_roots(roots))
    lower = {(1, 0): rng.standard_normal(2) + 1j * rng.standard_normal(2)}
    return NormalForm(2, DISK, diag, lower)


@pytest.fixture(scope="module")
def K2(ctx):
    return build_kernel(bnt_matrix(rank2_nf(), ctx))


@pytest.fixture(scope="module")
def D(ctx):
    return [ctx.point(-1.6 + 0.9j, 1), ctx.point(0.7 - 1.8j, -1)]


@pytest.fixture(scope="module")
def ref2(ctx, K2, D):
    return cn.reference_connection(K2, D)


# -- diagonal limit ------------------------------------------------------

def test_fay_limit_matches_analytic(ctx, K2):
    for w in (ctx.point(0.5 + 1.2j, 1), ctx.point(-1.3 - 0.7j, -1)):
        Fa = cn.fay_diagonal(K2, w)
        Fr, err = cn.fay_differential(K2, w)
        scale = max(1.0, np.abs(Fa).max())
        assert np.abs(Fa - Fr).max() < 1e-6 * scale
        assert err < 1e-5 * scale


def test_fay_limit_rejects_bad_step(ctx, K1):
    t = K1.data.divisor[0][0]
    w = ctx.point(t.x + 2e-3, DISK.sheet)
    with pytest.raises(NumericalLimitFailure):
        cn.fay_differential(K1, w, step=5e-2)


def test_fay_chart_change(ctx, K2):
    """Under a local chart change zeta(x) the regularized diagonal picks
    up -1/2 zeta''/zeta' relative to the x-chart coefficient."""
    w = ctx.point(0.5 + 1.2j, 1)
    yw = ctx.y_of(w)
    lam = 0.1
    a = w.x

    def E(h):
        # invert zeta(x) = (x - a) + lam (x - a)^2 = h near x = a
        xp = complex(a + (-1 + np.sqrt(1 + 4 * lam * h)) / (2 * lam))
        cands = [SurfacePoint(xp, s) for s in (w.sheet, -w.sheet)]
        p = min(cands, key=lambda c: abs(ctx.y_of(c) - yw))
        return eval_kernel(K2, w, p) + np.eye(K2.n) / h

    h0 = 1e-3
    e1, e2, e3 = E(h0), E(h0 / 2), E(h0 / 4)
    F_zeta = 2 * (2 * e3 - e2) - (2 * e2 - e1)
    F_x = cn.fay_diagonal(K2, w)
    # zeta'(a) = 1, zeta''(a) = 2 lam
    expect = F_x - lam * np.eye(K2.n)
    assert np.abs(F_zeta - expect).max() < 1e-5 * max(1.0,
                                                      np.abs(F_x).max())


# -- half-differential ---------------------------------------------------

def test_dlog_residue_bookkeeping(ctx, D):
    dl = cn.dlog_half_differential(ctx, D)
    for p in D:
        xs, ys, c = ctx.circle_nodes(p, 0.05)
        res = np.mean(dl(xs, ys) * (xs - c))
        assert abs(res - 1) < 1e-8
    xs, ys, c = ctx.circle_nodes(ctx.infinity, 0.05)
    res = np.mean(dl(xs, ys) * (xs - c))
    assert abs(res + 1) < 1e-8


def test_dlog_third_kind_part_has_imaginary_periods(ctx, D):
    dl = cn.dlog_half_differential(ctx, D)
    for kind in ("alpha", "beta"):
        for k in range(ctx.g):
            per = ctx.cycle_integral(kind, k, dl.tilde)
            assert abs(per.real) < 1e-8


def test_special_divisor_rejected(ctx):
    x0 = 1.1 + 0.4j
    with pytest.raises(SpecialDivisor):
        cn.dlog_half_differential(ctx, [ctx.point(x0, 1),
                                        ctx.point(x0, -1)])


def test_invalid_divisors_rejected(ctx):
    with pytest.raises(InvalidDivisor):
        cn.dlog_half_differential(ctx, [ctx.point(1.0 + 1.0j, 1)])
    with pytest.raises(InvalidDivisor):
        cn.dlog_half_differential(
            ctx, [ctx.point(1.0 + 1.0j, 1), ctx.infinity])


# -- reference connection ------------------------------------------------

def test_reference_connection_axioms(ref2):
    rep = ref2.defects
    assert max(rep["framing"]) < 1e-8
    assert max(rep["divisor"]) < 1e-8
    assert rep["marked"] < 1e-8


def test_reference_divisor_change_is_scalar_third_kind(ctx, K2, D, ref2):
    q_new = ctx.point(-0.4 + 2.0j, 1)
    D2 = [D[0], q_new]
    ref_b = cn.reference_connection(K2, D2)
    # the difference must be a scalar matrix built from a third-kind
    # differential with poles at the exchanged points only
    pts = [ctx.point(1.4 + 0.5j, -1), ctx.point(-2.0 - 0.8j, 1)]
    for p in pts:
        diff = ref_b.coefficient(p) - ref2.coefficient(p)
        off = diff - np.trace(diff) / K2.n * np.eye(K2.n)
        assert np.abs(off).max() < 1e-10
    scal = lambda xs, ys: (ref_b.dlog(xs, ys) - ref2.dlog(xs, ys)) * (-1)
    xs, ys, c = ctx.circle_nodes(D[1], 0.05)
    assert abs(np.mean(scal(xs, ys) * (xs - c)) - 1) < 1e-8
    xs, ys, c = ctx.circle_nodes(q_new, 0.05)
    assert abs(np.mean(scal(xs, ys) * (xs - c)) + 1) < 1e-8
    xs, ys, c = ctx.circle_nodes(ctx.infinity, 0.05)
    assert abs(np.mean(scal(xs, ys) * (xs - c))) < 1e-8
    for kind in ("alpha", "beta"):
        for k in range(ctx.g):
            assert abs(ctx.cycle_integral(kind, k, scal).real) < 1e-8


def test_reference_rank1_theta_closed_form(ctx, K1, D):
    """For a line bundle the reference connection built with a-normalized
    third-kind pieces is a ratio of theta gradients along the Abel map
    plus the constant gradient at the bundle point, up to i pi times an
    integer vector of basis coefficients (the half-characteristic
    ambiguity of the underlying square root)."""
    inf_w = SurfacePoint(at_infinity=True)
    parts = []
    for q in D:
        parts.append((1, ctx.third_kind_coeff(q, inf_w),
                      ctx.third_kind_normalization(q, inf_w)))
    parts.append((-1, ctx.third_kind_coeff(ctx.infinity, inf_w),
                  ctx.third_kind_normalization(ctx.infinity, inf_w)))
    dla = cn.DlogHalf(ctx, [(q, 1) for q in D], parts)

    T = [ctx.point(T1, DISK.sheet), ctx.point(T2, DISK.sheet)]
    Kv = ctx.riemann_constants()
    f = ctx.abel_of_divisor(T) + Kv
    aD = ctx.abel_of_divisor(D)

    def grad_log_theta(z):
        v, gr = ctx.theta(z, 1)
        return gr / v

    c0 = grad_log_theta(f)
    pts = [ctx.point(1.6 + 0.9j, 1), ctx.point(-0.9 - 1.4j, -1),
           ctx.point(0.2 + 2.1j, -1), ctx.point(-2.1 + 0.3j, 1),
           ctx.point(1.1 - 1.9j, -1), ctx.point(-0.3 + 1.5j, 1)]
    rows, diffs = [], []
    for p in pts:
        ap = ctx.abel_map(p)
        x1 = np.array([p.x])
        y1 = np.array([ctx.y_of(p)])
        w = ctx.omega_row(x1, y1)[0]
        F_D = cn.fay_diagonal(K1, p)[0, 0] - dla(x1, y1)[0]
        expect = w @ (grad_log_theta(ap - f)
                      - grad_log_theta(ap - aD - Kv) + c0)
        rows.append(w)
        diffs.append(F_D - expect)
    m = np.linalg.solve(np.array(rows[:2]), np.array(diffs[:2])) \
        / (1j * np.pi)
    assert np.abs(m - np.round(m.real)).max() < 1e-8
    shift = np.array(rows) @ (1j * np.pi * np.round(m.real))
    assert np.abs(np.array(diffs) - shift).max() < 1e-9


def test_pgl_equivariance(ctx, K2, D, ref2):
    """Changing the framing by a constant invertible C conjugates the
    reference connection and keeps the same underlying data."""
    C = np.array([[1.0, 0.4 - 0.2j], [0.3j, 1.2]])
    P = K2.P
    ents = [[np.array([0j])] * 2 for _ in range(2)]
    for a in range(2):
        for b in range(2):
            acc = np.array([0j])
            for c in range(2):
                acc = npoly.polyadd(acc, C[a, c] * P.entry(c, b))
            ents[a][b] = acc
    Pt, H = reduce(ents, DISK)
    Kt = build_kernel(bnt_matrix(Pt, ctx))
    zt = sorted([complex(t.x) for t, _ in K2.data.divisor],
                key=lambda z: (z.real, z.imag))
    zs = sorted([complex(t.x) for t, _ in Kt.data.divisor],
                key=lambda z: (z.real, z.imag))
    assert np.abs(np.array(zt) - np.array(zs)).max() < 1e-8
    ref_t = cn.reference_connection(Kt, D)
    Cinv = np.linalg.inv(C)
    for p in (ctx.point(1.4 + 0.5j, -1), ctx.point(-0.6 + 1.8j, 1)):
        lhs = ref_t.coefficient(p)
        rhs = C @ ref2.coefficient(p) @ Cinv
        assert np.abs(lhs - rhs).max() < 1e-8 * max(1.0,
                                                    np.abs(rhs).max())


# -- Higgs fields --------------------------------------------------------

def rand_germs(data, rng, orders=None):
    n = data.n
    out = {}
    for i, (t, m) in enumerate(data.divisor):
        k = m if orders is None else orders
        out[i] = rng.standard_normal((k, n, n)) \
            + 1j * rng.standard_normal((k, n, n))
    return out


def test_higgs_local_residues(ctx, K2):
    rng = np.random.default_rng(9)
    germs = rand_germs(K2.data, rng)
    phi = cn.build_higgs(K2, germs)
    for idx, (t, m) in enumerate(K2.data.divisor):
        xs0, _, c = K2.data.point_circle(t.x)
        r = 0.6 * abs(xs0[0] - c)
        xs, ys, _ = ctx.circle_nodes(SurfacePoint(c, DISK.sheet), r)
        res = np.mean(phi.eval_nodes(xs, ys) * (xs - c)[:, None, None],
                      axis=0)
        Mv = phi._germ_matrix(germs[idx], c, xs)
        expect = np.mean(Mv * (xs - c)[:, None, None], axis=0)
        assert np.abs(res - expect).max() < 1e-9 \
            * max(1.0, np.abs(expect).max())


def test_higgs_marked_residue_balances_framing(ctx, K2):
    rng = np.random.default_rng(10)
    phi = cn.build_higgs(K2, rand_germs(K2.data, rng))
    tot = np.zeros((2, 2), dtype=complex)
    for idx, (t, m) in enumerate(K2.data.divisor):
        xs, ys, c = K2.data.point_circle(t.x)
        Mv = phi._germ_matrix(phi.germs[idx], c, xs)
        tot += np.mean(Mv * (xs - c)[:, None, None], axis=0)
    assert np.abs(phi.residue_at_marked() + tot).max() < 1e-9


def test_higgs_divisible_germ_gives_zero_field(ctx, K2):
    rng = np.random.default_rng(11)
    z1 = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    phi = cn.build_higgs(K2, {0: np.stack([np.zeros((2, 2)), z1])})
    for p in (ctx.point(0.3 + 1.4j, 1), ctx.point(-1.0 + 0.4j, -1)):
        assert np.abs(phi(p)).max() < 1e-8


def test_higgs_germ_round_trip(ctx, K2):
    rng = np.random.default_rng(12)
    phi = cn.build_higgs(K2, rand_germs(K2.data, rng))
    back = cn.higgs_germs(K2, phi, orders=1)
    phi2 = cn.build_higgs(K2, back)
    for p in (ctx.point(0.3 + 1.4j, 1), ctx.point(-1.2 - 0.9j, -1)):
        a, b = phi(p), phi2(p)
        assert np.abs(a - b).max() < 1e-6 * max(1.0, np.abs(a).max())


def test_framed_assembly_warns(ctx, K2, ref2):
    rng = np.random.default_rng(13)
    phi = cn.build_higgs(K2, rand_germs(K2.data, rng))
    with pytest.warns(UserWarning):
        A = cn.assemble_connection(ref2, phi)
    assert A.defects["passed"]


def test_holomorphic_class_assembly(ctx, K2, ref2):
    rng = np.random.default_rng(14)
    germs = cn.holomorphic_class(K2, rand_germs(K2.data, rng))
    phi = cn.build_higgs(K2, germs)
    assert np.abs(phi.residue_at_marked()).max() < 1e-8
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        A = cn.assemble_connection(ref2, phi)
    assert A.defects["marked"] < 1e-8
    # the affine difference recovers the Higgs part
    p = ctx.point(1.5 + 0.7j, -1)
    assert np.abs(A.coefficient(p) - ref2.coefficient(p)
                  - phi(p)).max() < 1e-12


def test_zero_germs_give_reference(ctx, K2, ref2):
    phi = cn.build_higgs(K2, {})
    A = cn.assemble_connection(ref2, phi)
    p = ctx.point(-0.8 + 1.1j, 1)
    assert np.abs(A.coefficient(p) - ref2.coefficient(p)).max() < 1e-12


# -- variational formula -------------------------------------------------

def test_variational_residue_formula(ctx, D):
    """First variation of the regularized diagonal in a bundle modulus
    against central finite differences."""
    eps = 1e-5

    def nf(delta):
        base = rank2_nf()
        lower = {k: v.copy() for k, v in base.lower.items()}
        lower[(1, 0)] = lower[(1, 0)] + delta * np.array([1.0, 0.3j])
        return NormalForm(2, DISK, [c.copy() for c in base.diag], lower)

    K0 = build_kernel(bnt_matrix(nf(0.0), ctx))
    Kp = build_kernel(bnt_matrix(nf(eps), ctx))
    Km = build_kernel(bnt_matrix(nf(-eps), ctx))

    def delta_P(z):
        out = np.zeros((len(z), 2, 2), dtype=complex)
        out[:, 1, 0] = npoly.polyval(z, [1.0, 0.3j])
        return out

    for p in (ctx.point(1.6 + 0.9j, 1), ctx.point(-1.1 - 1.2j, -1)):
        fd = (cn.fay_diagonal(Kp, p) - cn.fay_diagonal(Km, p)) / (2 * eps)
        an = cn.variational_reference(K0, delta_P, p)
        assert np.abs(fd - an).max() < 1e-4 * max(1.0, np.abs(fd).max())
