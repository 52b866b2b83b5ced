"""Pairings and forms on the moduli of framed bundles with connections.

The tautological pairing between a Higgs field and a deformation of the
normal form is a sum of residues at the framing points.  Pulled back to
the affine space of connections it becomes a one-form whose exterior
derivative matches, up to the factor -4 pi i, a two-form built purely
from the jump matrices of the canonical dissection.  The same one-form
has a contour realization over the dissection boundary, and near the
locus of special framing data it develops a simple pole with integer
residue; the probe at the end of this module measures that residue.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import monodromy as md
from . import paths
from .cauchy_kernel import build_kernel, scalar_determinant_kernel
from .connection import (ConnectionForm, HiggsField, assemble_connection,
                         build_higgs, reference_connection)
from .curve import SurfacePoint
from .errors import (AdmissibilityError, ContourError, NonTransversalFamily,
                     OnThetaDivisor, StepSizeError)
from .normal_form import NormalForm
from .tyurin import bn_matrix_points, bnt_matrix


# -- tangent directions in the coefficient space -------------------------

@dataclass
class ModuliTangent:
    """Direction in the coefficient space of the normal form.

    dp[j]: ascending coefficients of the increment of the monic diagonal
    entry p_j, degree < deg p_j (the leading coefficient is never
    touched); df[(j, k)]: increment of the lower entry f_{jk},
    degree <= deg p_j - 1.
    """
    dp: list
    df: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dp = [np.atleast_1d(np.asarray(c, dtype=complex))
                   for c in self.dp]
        self.df = {k: np.atleast_1d(np.asarray(c, dtype=complex))
                   for k, c in self.df.items()}

    @property
    def n(self):
        return len(self.dp)

    def scaled(self, a):
        return ModuliTangent([a * c for c in self.dp],
                             {k: a * c for k, c in self.df.items()})

    def plus(self, other):
        dp = [npoly.polyadd(a, b) for a, b in zip(self.dp, other.dp)]
        df = dict(self.df)
        for k, c in other.df.items():
            df[k] = npoly.polyadd(df[k], c) if k in df else c
        return ModuliTangent(dp, df)

    def delta_P(self, z):
        """Matrix increment evaluated at points z; (..., n, n)."""
        z = np.asarray(z, dtype=complex)
        n = self.n
        out = np.zeros(z.shape + (n, n), dtype=complex)
        for j, c in enumerate(self.dp):
            out[..., j, j] = npoly.polyval(z, c)
        for (j, k), c in self.df.items():
            out[..., j, k] = npoly.polyval(z, c)
        return out

    def apply(self, P: NormalForm, eps) -> NormalForm:
        """The normal form displaced by eps times this direction."""
        if P.n != self.n:
            raise ValueError("tangent rank does not match the normal form")
        diag = []
        for j, base in enumerate(P.diag):
            base = np.asarray(base, dtype=complex)
            if len(self.dp[j]) >= len(base):
                raise ValueError(
                    f"diagonal increment {j} must keep degree below "
                    f"{len(base) - 1}")
            diag.append(npoly.polyadd(base, eps * self.dp[j]))
        lower = {k: np.asarray(c, dtype=complex).copy()
                 for k, c in P.lower.items()}
        for (j, k), c in self.df.items():
            dj = len(np.asarray(P.diag[j])) - 1
            if len(c) > max(dj, 1):
                raise ValueError(
                    f"lower increment {(j, k)} exceeds degree {dj - 1}")
            base = lower.get((j, k), np.zeros(1, dtype=complex))
            lower[(j, k)] = npoly.polyadd(base, eps * c)
        return NormalForm(P.n, P.disk, diag, lower)


def random_tangent(P: NormalForm, seed, scale=1.0):
    """Generic shape-preserving direction (for tests and probes)."""
    rng = np.random.default_rng(seed)

    def rand(m):
        return scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m))

    dp = [rand(max(len(np.asarray(d)) - 1, 1)) for d in P.diag]
    df = {k: rand(len(np.asarray(P.diag[k[0]])) - 1)
          for k in P.lower}
    return ModuliTangent(dp, df)


@dataclass
class FormValue:
    """Evaluation of a one- or two-form on tangent directions."""
    value: complex
    method: str               # residue | contour | graph | finite-difference
    error: float = 0.0


# -- tautological pairing ------------------------------------------------

def liouville_pairing(phi: HiggsField, v: ModuliTangent,
                      radius_factor=0.55) -> FormValue:
    """Sum over the framing points of res tr(Phi deltaP P^-1), by circle
    quadrature; the reported error is the change under shrinking the
    circles."""
    if phi is None:
        return FormValue(0.0, "residue", 0.0)
    K = phi.K
    data = K.data
    ctx = K.ctx

    def total(rf):
        acc = 0.0 + 0.0j
        seen = set()
        for t, _ in data.divisor:
            xs0, _, c0 = data.point_circle(t.x)
            key = complex(c0)
            if key in seen:
                continue
            seen.add(key)
            r = rf * abs(xs0[0] - c0)
            for s, _ in data.divisor:
                cs = data.point_circle(s.x)[2]
                if abs(cs - c0) > 1e-12 and abs(cs - c0) < 1.1 * r:
                    raise ContourError(
                        f"residue circle at {c0} hits the framing point "
                        f"{cs}")
            xs, ys, _ = ctx.circle_nodes(
                SurfacePoint(c0, K.P.disk.sheet), r)
            vals = phi.eval_nodes(xs, ys)
            mid = v.delta_P(xs) @ np.linalg.inv(K.P(xs))
            integrand = np.einsum("mij,mji->m", vals, mid)
            acc += np.mean(integrand * (xs - c0))
        return acc

    v1 = total(radius_factor)
    v2 = total(0.72 * radius_factor)
    return FormValue(v1, "residue", float(abs(v1 - v2)))


def xi_residue(A: ConnectionForm, v: ModuliTangent,
               radius_factor=0.55) -> FormValue:
    """The affine pullback of the tautological one-form, paired with a
    bundle deformation: the pairing of the Higgs part of A with v."""
    if A.K.data.corank() != 0:
        raise OnThetaDivisor("framing data is special; pullback undefined")
    phi = A.higgs_part()
    if phi is None:
        return FormValue(0.0, "residue", 0.0)
    fv = liouville_pairing(phi, v, radius_factor)
    return FormValue(fv.value, "residue", fv.error)


# -- moduli families of connections --------------------------------------

def connection_section(A: ConnectionForm, tol=1e-6):
    """Family P -> connection over nearby normal forms, holding the
    reference divisor, the Higgs germ coefficients (carried to the
    nearest framing point) and the holomorphic Higgs part fixed.
    Residue warnings for framed Higgs parts are suppressed inside the
    family, the base connection already carries that information."""
    ctx, divisor = A.ctx, A.divisor
    phi = A.higgs_part()
    germs, hol, base_centers = {}, None, []
    if phi is not None:
        germs = {k: np.asarray(c, dtype=complex).copy()
                 for k, c in phi.germs.items()}
        if phi._RX is not None:
            built = build_higgs(A.K, germs)._RX
            hol = phi._RX - built
            if np.abs(hol).max() < 1e-14:
                hol = None
        base_centers = [complex(t.x) for t, _ in A.K.data.divisor]

    def build(P: NormalForm) -> ConnectionForm:
        K = build_kernel(bnt_matrix(P, ctx))
        ref = reference_connection(K, divisor, tol)
        if phi is None:
            return ref
        gm = germs
        if germs:
            centers = [complex(t.x) for t, _ in K.data.divisor]
            gm = {}
            for i, c in germs.items():
                j = int(np.argmin([abs(base_centers[i] - z)
                                   for z in centers]))
                gm[j] = c
            if len(gm) != len(germs):
                raise ContourError("framing points collided under the "
                                   "deformation; germ transport ambiguous")
        phi2 = build_higgs(K, gm)
        if hol is not None:
            phi2._RX = phi2._RX + hol
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return assemble_connection(ref, phi2, tol)

    return build


def holomorphic_higgs(K, c):
    """Higgs field sum_l c_l omega_l (normalized holomorphic basis) with
    matrix coefficients c of shape (g,) for n = 1 or (g, n, n)."""
    phi = build_higgs(K, {})
    c = np.asarray(c, dtype=complex)
    phi._RX = phi._RX + c.reshape(phi._RX.shape)
    return phi


# -- contour realization over the dissection boundary --------------------

def xi_contour(A: ConnectionForm, v: ModuliTangent, resolution=0.05,
               fd_step=1e-4, rep=None, loops=None, rebuild=None,
               rtol=1e-10) -> FormValue:
    """Boundary realization (1/2 pi i) sum over dissection arcs of
    int tr(Psi_-^{-1} Phi Psi_- dJ J^{-1}), with dJ the jump variation
    along v obtained from two nearby monodromy computations.

    The constant-jump bookkeeping along the default lasso arcs is exact
    for n = 1 and for traces; at n >= 2 self-intersections of the arcs
    contaminate the value, so prefer xi_residue there."""
    ctx = A.ctx
    g, n = ctx.g, A.n
    inv = np.linalg.inv
    phi = A.higgs_part()
    if phi is None:
        return FormValue(0.0, "contour", 0.0)
    if loops is None:
        loops = {(kind, k): md.generator_loop(A, kind, k)
                 for kind in ("alpha", "beta") for k in range(g)}
    if rep is None:
        rep = md.monodromy_rep(A, loops=loops, rtol=rtol)
    if rebuild is None:
        rebuild = connection_section(A)
    P0 = A.K.P
    repp = md.monodromy_rep(rebuild(v.apply(P0, +fd_step)),
                            loops=loops, rtol=rtol)
    repm = md.monodromy_rep(rebuild(v.apply(P0, -fd_step)),
                            loops=loops, rtol=rtol)
    arcs = md.dissection_arcs(A, rep, loops=loops)
    idx = []
    for ell in range(g, 0, -1):
        m = 4 * (g - ell)
        idx += [m, m + 3]
    total = 0.0 + 0.0j
    coarse = 0.0 + 0.0j
    for arc, j in zip(arcs, idx):
        dJ = (repp.J[j] - repm.J[j]) / (2 * fd_step)
        xs = paths.refine(np.asarray(arc.path, dtype=complex),
                          resolution * ctx.scale)
        core = dJ @ inv(arc.J)
        if n == 1:
            ys = ctx.continue_y(
                xs, ctx.y_of(ctx.point(xs[0], ctx.infinity.sheet)))
            pv = phi.eval_nodes(xs, ys)
            f = pv[:, 0, 0] * core[0, 0]
        else:
            ys, vals = md.arc_values(A, arc, xs, rtol)
            pv = phi.eval_nodes(xs, ys)
            S = inv(vals) @ pv @ vals @ core
            f = np.einsum("mii->m", S)
        total += np.trapezoid(f, xs)
        coarse += np.trapezoid(f[::2], xs[::2])
    value = total / (2j * np.pi)
    return FormValue(value, "contour",
                     float(abs(total - coarse)) / (3 * 2 * np.pi))


# -- graph two-form ------------------------------------------------------

def graph_two_form(stars, d1, d2, pairs=None, tol=1e-7) -> FormValue:
    """Two-form of a jump graph evaluated on two tangent directions.

    stars: per vertex, the jump matrices of the outgoing half-edges in
    counterclockwise order; d1 and d2: matching nested lists of jump
    variations along the two directions.  pairs optionally lists
    ((v, i), (w, j)) of opposite half-edges for the inverse-consistency
    check.  Value: sum over vertices and half-edges of
    tr(K_l^{-1} dK_l ^ J_l^{-1} dJ_l) with K_l the left partial products.
    """
    inv = np.linalg.inv
    stars = [[np.asarray(Jm, dtype=complex) for Jm in star]
             for star in stars]
    for star in stars:
        n = star[0].shape[0]
        prod = np.eye(n, dtype=complex)
        for Jm in star:
            prod = prod @ Jm
        if np.abs(prod - np.eye(n)).max() > tol:
            raise AdmissibilityError(
                f"vertex product defect "
                f"{np.abs(prod - np.eye(n)).max():.3e} exceeds {tol}")
    if pairs is not None:
        for (vi, ei), (wj, ej) in pairs:
            n = stars[vi][ei].shape[0]
            gap = np.abs(stars[vi][ei] @ stars[wj][ej]
                         - np.eye(n)).max()
            if gap > tol:
                raise AdmissibilityError(
                    f"opposite half-edges ({vi},{ei})/({wj},{ej}) are not "
                    f"inverse: defect {gap:.3e}")
    val = 0.0 + 0.0j
    for star, s1, s2 in zip(stars, d1, d2):
        n = star[0].shape[0]
        Kl = np.eye(n, dtype=complex)
        dK1 = np.zeros((n, n), dtype=complex)
        dK2 = np.zeros((n, n), dtype=complex)
        for Jl, dJ1, dJ2 in zip(star, s1, s2):
            dK1 = dK1 @ Jl + Kl @ dJ1
            dK2 = dK2 @ Jl + Kl @ dJ2
            Kl = Kl @ Jl
            Ki = inv(Kl)
            Ji = inv(Jl)
            val += np.trace(Ki @ dK1 @ Ji @ dJ2) \
                - np.trace(Ki @ dK2 @ Ji @ dJ1)
    return FormValue(val, "graph", 0.0)


def krichever_star(rep):
    """One-vertex jump star in the generator word a b a^-1 b^-1 per
    handle, assembled from the representation matrices; the product is
    the surface relation, so admissibility holds to the accuracy of the
    representation."""
    inv = np.linalg.inv
    word = []
    for k in range(rep.g):
        A = rep.M_alpha[k]
        B = rep.M_beta[k]
        word += [A, B, inv(A), inv(B)]
    return word


def krichever_star_variations(rep, drep_list):
    """First-order variations of krichever_star for each representation
    variation in drep_list (pairs of lists (dM_alpha, dM_beta))."""
    inv = np.linalg.inv
    out = []
    for dMa, dMb in drep_list:
        var = []
        for k in range(rep.g):
            Ai = inv(rep.M_alpha[k])
            Bi = inv(rep.M_beta[k])
            var += [dMa[k], dMb[k],
                    -Ai @ dMa[k] @ Ai, -Bi @ dMb[k] @ Bi]
        out.append(var)
    return out


# -- exterior-derivative verification ------------------------------------

def check_dXi_equals_Omega(A: ConnectionForm, v1: ModuliTangent,
                           v2: ModuliTangent, fd_step=1e-4, loops=None,
                           rebuild=None, rtol=1e-10, richardson=True):
    """Central-difference exterior derivative of the residue one-form
    against the dissection graph two-form with finite-difference jump
    variations; the identity under test is -4 pi i dXi = Omega.

    Returns a report with both sides, the relative defect, and the
    step-halving gaps used for the Richardson extrapolation."""
    ctx = A.ctx
    g = ctx.g
    P0 = A.K.P
    if rebuild is None:
        rebuild = connection_section(A)
    if loops is None:
        loops = {(kind, k): md.generator_loop(A, kind, k)
                 for kind in ("alpha", "beta") for k in range(g)}

    def xi_at(e1, e2, w):
        P = v2.apply(v1.apply(P0, e1), e2)
        return xi_residue(rebuild(P), w).value

    def dxi(h):
        a = (xi_at(+h, 0.0, v2) - xi_at(-h, 0.0, v2)) / (2 * h)
        b = (xi_at(0.0, +h, v1) - xi_at(0.0, -h, v1)) / (2 * h)
        return a - b

    rep0 = md.monodromy_rep(A, loops=loops, rtol=rtol)

    def jump_variations(h):
        out = []
        for v in (v1, v2):
            rp = md.monodromy_rep(rebuild(v.apply(P0, +h)),
                                  loops=loops, rtol=rtol)
            rm = md.monodromy_rep(rebuild(v.apply(P0, -h)),
                                  loops=loops, rtol=rtol)
            out.append([(a - b) / (2 * h) for a, b in zip(rp.J, rm.J)])
        return out

    def omega(h):
        dJ1, dJ2 = jump_variations(h)
        return graph_two_form([rep0.J], [dJ1], [dJ2]).value

    d_h = dxi(fd_step)
    o_h = omega(fd_step)
    if richardson:
        d_2h = dxi(2 * fd_step)
        o_2h = omega(2 * fd_step)
        for a, b in ((d_h, d_2h), (o_h, o_2h)):
            if not (np.isfinite(a) and np.isfinite(b)):
                raise StepSizeError("finite differences overflow; reduce "
                                    "the step")
            if abs(a - b) > 0.5 * max(abs(a), abs(b)):
                raise StepSizeError(
                    f"finite differences unstable at step {fd_step:g}: "
                    f"{a:.6e} vs {b:.6e} at the doubled step")
        dXi = (4 * d_h - d_2h) / 3
        Om = (4 * o_h - o_2h) / 3
        gaps = (float(abs(d_h - d_2h)), float(abs(o_h - o_2h)))
    else:
        dXi, Om, gaps = d_h, o_h, (np.nan, np.nan)
    lhs = -4j * np.pi * dXi
    scale = max(abs(lhs), abs(Om))
    rel = abs(lhs - Om) / scale if scale > 0 else 0.0
    return {"dXi": dXi, "omega": Om, "lhs": lhs,
            "rel_defect": float(rel), "fd_step": fd_step,
            "richardson_gaps": gaps,
            "dXi_raw": d_h, "omega_raw": o_h}


# -- residue of the one-form along the special locus ---------------------

def special_pair_family(ctx, x0, direction=1.0):
    """Transversal line-bundle family through the special divisor made
    of the two points over x0: the first point moves with eps, the
    second stays put."""
    p2 = ctx.point(x0, -1)

    def family(eps):
        return [ctx.point(x0 + direction * eps, 1), p2]

    return family


def _ring(rho=0.1, count=24):
    return rho * np.exp(2j * np.pi * np.arange(count) / count)


def theta_divisor_probe(ctx, family, ring=None, section_c=None,
                        eps_small=1e-4, fd_step=None, sample_points=None):
    """Residue diagnostics for a one-parameter family crossing the
    special locus at eps = 0.

    family maps eps either to a degree-g list of surface points (the
    line-bundle chart-free case) or to a NormalForm.  Reports:
    (a) the winding of the framing determinant around the ring, which
    measures res d log det of the pairing matrix; (b) the loop integral
    (1/2 pi i) oint Xi_eps of the pulled-back one-form along the theta
    section; (c) the rank of the small-eps kernel blow-up by singular
    value gap, with the vanishing-differential cross-check; (d) the
    residue pairing matrix between the section and differential
    null-space representatives, whose nondegeneracy certifies
    transversality."""
    if ring is None:
        ring = _ring()
    ring = np.asarray(ring, dtype=complex)
    count = len(ring)
    sample = family(ring[0])
    g = ctx.g
    if isinstance(sample, NormalForm):
        dets = np.array([np.linalg.det(bnt_matrix(family(e), ctx).Tmat)
                         for e in ring])
        res_T = np.sum(np.log(dets[np.arange(1, count + 1) % count]
                              / dets)) / (2j * np.pi)
        k = int(np.round(res_T.real))
        if abs(res_T - k) > 1e-3 or k < 1:
            raise NonTransversalFamily(
                f"det winding {res_T:.6f} is not a positive integer; the "
                "family does not cross the special locus transversally")
        return {"mode": "chart", "k_det": res_T, "k": k}

    # -- point-divisor (n = 1) branch ------------------------------------
    dets = np.array([np.linalg.det(bn_matrix_points(ctx, family(e)))
                     for e in ring])
    res_T = np.sum(np.log(dets[np.arange(1, count + 1) % count]
                          / dets)) / (2j * np.pi)
    k = int(np.round(res_T.real))
    if abs(res_T - k) > 1e-3 or k < 1:
        raise NonTransversalFamily(
            f"det winding {res_T:.6f} is not a positive integer; the "
            "family does not cross the special locus transversally")

    Kc = ctx.riemann_constants()
    c = np.zeros(g, dtype=complex) if section_c is None \
        else np.asarray(section_c, dtype=complex)
    delta = fd_step if fd_step is not None else 1e-3 * np.abs(ring).min()

    def f_of(eps):
        return ctx.abel_of_divisor(family(eps)) + Kc

    xi_vals = np.empty(count, dtype=complex)
    for i, e in enumerate(ring):
        fp = (f_of(e + delta) - f_of(e - delta)) / (2 * delta)
        val, grad = ctx.theta(f_of(e), derivative_order=1)
        xi_vals[i] = (grad / val - c) @ fp
    de = (ring[np.arange(1, count + 1) % count]
          - ring[np.arange(-1, count - 1)]) / 2
    res_Xi = np.sum(xi_vals * de) / (2j * np.pi)

    # kernel blow-up at a small eps
    pts0 = family(0.0)
    if sample_points is None:
        qs = [ctx.point(ctx.homology_base + 0.45 * ctx.scale
                        * np.exp(2j * np.pi * j / 5), (-1) ** j)
              for j in range(4)]
        ps = [ctx.point(ctx.anchor + (1.1 + 0.25 * j) * ctx.scale
                        * np.exp(1j * (0.8 + 0.9 * j)), (-1) ** (j + 1))
              for j in range(4)]
    else:
        qs, ps = sample_points
    pts_eps = family(eps_small)
    M = np.array([[eps_small
                   * scalar_determinant_kernel(ctx, pts_eps, q, p)
                   for p in ps] for q in qs])
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > sv[0] / 1e3))
    gap = float(sv[rank - 1] / sv[rank]) if rank < len(sv) else np.inf

    # vanishing differential from the left null-space of the matrix
    T0 = bn_matrix_points(ctx, pts0)
    U, _, _ = np.linalg.svd(T0)
    w = np.conj(U[:, -1])

    def eta(p):
        y = ctx.y_of(p)
        return ctx.omega_row(np.array([p.x]), np.array([y]))[0] @ w

    eta_q = np.array([eta(q) for q in qs])
    # the columns of M should be proportional to eta at the q samples
    proj = np.outer(eta_q, eta_q.conj() @ M) / (eta_q.conj() @ eta_q)
    eta_residual = float(np.abs(M - proj).max() / np.abs(M).max())

    # residue pairing at eps = 0: the special divisor is a conjugate
    # pair over one base x, the section is 1/(x - xbar) vanishing at
    # the marked point
    xbar = complex(pts0[0].x)
    if abs(complex(pts0[1].x) - xbar) > 1e-8:
        raise NonTransversalFamily(
            "central divisor is not a conjugate pair over one x; no "
            "closed-form section available")
    d0 = delta
    pts_p, pts_m = family(+d0), family(-d0)
    xinf = ctx.infinity.x
    Q = 0.0 + 0.0j
    for j, t in enumerate(pts0):
        xdot = (complex(pts_p[j].x) - complex(pts_m[j].x)) / (2 * d0)
        xs, ys, cc = ctx.circle_nodes(t, 0.04 * ctx.scale)
        rv = 1.0 / (xs - xbar) - 1.0 / (xinf - xbar)
        ev = ctx.omega_row(xs, ys) @ w
        integrand = rv * (-xdot / (xs - xbar)) * ev
        Q += np.mean(integrand * (xs - cc))
    Qmat = np.array([[Q]])

    return {"mode": "points", "k_det": res_T, "k": k,
            "xi_loop": res_Xi, "xi_defect": float(abs(res_Xi - k)),
            "rank": rank, "singular_values": sv, "sv_gap": gap,
            "eta_residual": eta_residual, "Q": Qmat,
            "nondegenerate": bool(abs(Q) > 1e-8)}
