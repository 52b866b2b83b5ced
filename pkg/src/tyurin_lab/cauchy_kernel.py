"""Matrix Cauchy kernel of a framed bundle off the theta divisor.

C(q, p) = omega_{p,inf}(q) 1 + sum_l omega_l(q) b_l(p), the unique matrix
kernel (differential in q, function in p) whose rows annihilate the
Tyurin tails, with residue +1 at q = p and -1 at q = inf.

The residue pairings with the moving third-kind differential are
evaluated through the disk-boundary contour minus the local residue at p;
this form stays finite as p approaches the Tyurin divisor and makes the
regularized product C(q,p) P(p) numerically stable there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curve import CurveContext, SurfacePoint
from .errors import InvalidDisk, OnThetaDivisor, SingularEvaluation
from .normal_form import NormalForm
from .tyurin import TyurinData

BOUNDARY_SAMPLES = 512


@dataclass
class KernelEvaluator:
    data: TyurinData
    boundary_x: np.ndarray       # x on the disk boundary (curve points)
    boundary_y: np.ndarray
    tails_on_boundary: np.ndarray  # (ng, M, n)
    lu: tuple                    # LU of Tmat^T
    _norm_cache: dict = field(default_factory=dict)

    @property
    def ctx(self) -> CurveContext:
        return self.data.ctx

    @property
    def P(self) -> NormalForm:
        return self.data.P

    @property
    def n(self):
        return self.data.n

    # -- moving third-kind differential ----------------------------------

    def omega_p(self, p: SurfacePoint):
        """Coefficient function of a third-kind differential with residue
        +1 at p and -1 at the marked point.

        Any representative works: adding a holomorphic differential to the
        scalar part shifts the residue pairings linearly and the solved
        counterterm cancels the shift identically, so the assembled kernel
        does not depend on the choice.  The elementary (un-normalized)
        representative is used because it needs no cycle quadrature.  The
        cache allows tests to install a shifted representative."""
        ctx = self.ctx
        key = (complex(p.x), p.sheet, p.branch, p.at_infinity)
        c = self._norm_cache.get(key)
        f = ctx.third_kind_coeff(p, ctx.infinity)
        if c is None:
            return f

        def full(x, y):
            return f(x, y) - ctx.omega_row(x, y) @ c
        return full

    def _p_in_disk(self, p: SurfacePoint):
        disk = self.P.disk
        if p.at_infinity or p.branch:
            return False
        return bool(disk.contains(p.x)) and p.sheet == disk.sheet

    def residue_vector(self, p: SurfacePoint):
        """R[i, :] = sum_t res_t tail_i omega_{p,inf} via the boundary
        contour; subtracts the residue at p when p lies in the disk."""
        disk = self.P.disk
        if abs(abs(complex(p.x) - disk.center) - disk.radius) \
                < 1e-6 * disk.radius and not (p.branch or p.at_infinity):
            raise SingularEvaluation("p on the disk boundary")
        f = self.omega_p(p)
        fv = f(self.boundary_x, self.boundary_y)
        fac = self.boundary_x - disk.center
        R = np.mean(self.tails_on_boundary * (fv * fac)[None, :, None],
                    axis=1)
        if self._p_in_disk(p):
            zp = np.array([complex(p.x)])
            R = R - np.stack([t.eval(zp)[0] for t in self.data.basis])
        return R

    def coefficient_matrix(self, p: SurfacePoint):
        """X with rows indexed by (l, b): the kernel is
        C = omega_{p,inf}(q) 1 + Omega(q) X, Omega[r,(l,b)] = w_l(q) d_rb."""
        from scipy.linalg import lu_solve
        return -lu_solve(self.lu, self.residue_vector(p))

    # -- evaluation ------------------------------------------------------

    def __call__(self, q: SurfacePoint, p: SurfacePoint):
        return eval_kernel(self, q, p)

    def eval_with_factor(self, q: SurfacePoint, p: SurfacePoint):
        """Regularized product C(q, p) P(p), finite for p near (or on)
        the Tyurin divisor inside the disk."""
        if not self._p_in_disk(p):
            raise SingularEvaluation(
                "regularized evaluation requires p in the disk")
        from scipy.linalg import lu_solve
        ctx = self.ctx
        n, g = self.n, ctx.g
        f = self.omega_p(p)
        yq = ctx.y_of(q)
        xq = np.array([q.x])
        yv = np.array([yq])
        zp = complex(p.x)
        Pp = self.P(np.array([zp]))[0]
        wpq = f(xq, yv)[0]
        wq = ctx.omega_row(xq, yv)[0]
        disk = self.P.disk
        fv = f(self.boundary_x, self.boundary_y)
        fac = self.boundary_x - disk.center
        # boundary part of R(p), analytic in p inside the disk
        Rb = np.mean(self.tails_on_boundary * (fv * fac)[None, :, None],
                     axis=1)
        # the local subtraction tail_i(p) P(p) is analytic at the Tyurin
        # points; evaluate it by a Cauchy integral of tail_i(z) P(z) over
        # the boundary to dodge the pole/zero cancellation
        Pb = self.P(self.boundary_x)                # (M, n, n)
        vPp = np.empty((n * g, n), dtype=complex)
        for i in range(n * g):
            prod = np.einsum("mb,mbc->mc", self.tails_on_boundary[i], Pb)
            vPp[i] = np.mean(prod * (fac / (self.boundary_x - zp))[:, None],
                             axis=0)
        X = -lu_solve(self.lu, Rb @ Pp - vPp)
        Omega = np.zeros((n, n * g), dtype=complex)
        for l in range(g):
            for b in range(n):
                Omega[b, l * n + b] = wq[l]
        return wpq * Pp + Omega @ X


def build_kernel(data: TyurinData, threshold=None) -> KernelEvaluator:
    from scipy.linalg import lu_factor
    kw = {} if threshold is None else {"threshold": threshold}
    k = data.corank(**kw)
    if k > 0:
        raise OnThetaDivisor(k)
    ctx, P = data.ctx, data.P
    disk = P.disk
    if disk.contains(ctx.infinity.x) and ctx.infinity.sheet == disk.sheet:
        raise InvalidDisk("marked point inside the disk is unsupported")
    center = SurfacePoint(disk.center, disk.sheet)
    xs, ys, _ = ctx.circle_nodes(center, disk.radius, BOUNDARY_SAMPLES)
    tails = np.stack([t.eval(xs) for t in data.basis])
    lu = lu_factor(data.Tmat.T)
    return KernelEvaluator(data, xs, ys, tails, lu)


def eval_kernel(K: KernelEvaluator, q: SurfacePoint, p: SurfacePoint):
    """n x n matrix of 1-form coefficients (in the x chart at q)."""
    ctx = K.ctx
    if q.branch or q.at_infinity:
        raise SingularEvaluation("q must be a regular point in the x chart")
    if p.at_infinity:
        raise SingularEvaluation("p at the branch point over x=inf")
    same = (not p.branch and abs(complex(q.x) - complex(p.x)) < 1e-12
            and q.sheet == p.sheet)
    if same or abs(complex(q.x) - ctx.infinity.x) < 1e-12 \
            and q.sheet == ctx.infinity.sheet:
        raise SingularEvaluation("kernel pole at q")
    n, g = K.n, ctx.g
    f = K.omega_p(p)
    yq = ctx.y_of(q)
    xq = np.array([q.x])
    yv = np.array([yq])
    wpq = f(xq, yv)[0]
    wq = ctx.omega_row(xq, yv)[0]
    X = K.coefficient_matrix(p)
    Omega = np.zeros((n, n * g), dtype=complex)
    for l in range(g):
        for b in range(n):
            Omega[b, l * n + b] = wq[l]
    return wpq * np.eye(n) + Omega @ X


def scalar_determinant_kernel(ctx: CurveContext, points, q, p):
    """Classical n=1 kernel as a bordered determinant over a degree-g
    divisor: vanishes at q in the divisor, residue +1 at q = p."""
    g = ctx.g
    M = np.zeros((g + 1, g + 1), dtype=complex)
    f = ctx.third_kind_coeff(p, ctx.infinity)
    c = ctx.third_kind_normalization(p, ctx.infinity)

    def omega_p_at(s):
        y = ctx.y_of(s)
        x = np.array([s.x])
        yv = np.array([y])
        return f(x, yv)[0] - ctx.omega_row(x, yv)[0] @ c

    for col, s in enumerate([q] + list(points)):
        y = ctx.y_of(s)
        M[0, col] = omega_p_at(s)
        M[1:, col] = ctx.omega_row(np.array([s.x]), np.array([y]))[0]
    T0 = M[1:, 1:]
    return np.linalg.det(M) / np.linalg.det(T0)


def verify_kernel_axioms(K: KernelEvaluator, p=None, samples=128):
    """Quadrature verification of the defining properties; returns a
    report dict of measured defects.

    Two evaluation points are used: an in-disk p for the residue checks
    and an out-of-disk p for the checks on circles around the Tyurin
    points, so that the kernel pole at q = p never sits inside a
    verification contour."""
    ctx = K.ctx
    disk = K.P.disk
    if p is None:
        p = SurfacePoint(disk.center + 0.31 * disk.radius * np.exp(0.7j),
                         disk.sheet)
    p_out = SurfacePoint(disk.center + 2.4 * disk.radius * np.exp(-0.5j),
                         disk.sheet)
    report = {}

    n = K.n
    # residue at q = p
    r = disk.radius * 0.04
    xs, ys, c = ctx.circle_nodes(p, r, samples)
    vals = np.stack([eval_matrix_on_nodes(K, xs, ys, p)])[0]
    res_p = np.mean(vals * (xs - c)[:, None, None], axis=0)
    report["residue_at_p"] = float(np.abs(res_p - np.eye(n)).max())

    # residue at q = marked point
    inf = ctx.infinity
    r = 0.05 * ctx.scale
    xs, ys, c = ctx.circle_nodes(inf, r, samples)
    vals = eval_matrix_on_nodes(K, xs, ys, p)
    res_inf = np.mean(vals * (xs - c)[:, None, None], axis=0)
    report["residue_at_marked_point"] = float(
        np.abs(res_inf + np.eye(n)).max())

    # vanishing of C(q, .) as p approaches the marked point
    q0 = SurfacePoint(disk.center + 2.0 * disk.radius, disk.sheet)
    base = np.abs(eval_kernel(K, q0, p)).max()
    p_eps = ctx.point(inf.x + 1e-4, inf.sheet)
    v = np.abs(eval_kernel(K, q0, p_eps)).max()
    report["vanishing_at_p_inf"] = float(v / max(base, 1e-30))

    # P^{-1}(q) C(q,p) regular across the Tyurin points (q circles)
    worst = 0.0
    for t, mult in K.data.divisor:
        xs, ys, c = K.data.point_circle(t.x)
        vals = eval_matrix_on_nodes(K, xs, ys, p_out)
        Pinv = np.linalg.inv(K.P(xs))
        prod = Pinv @ vals
        circ = np.abs(np.mean(prod * (xs - c)[:, None, None], axis=0)).max()
        scalemax = np.abs(prod).max() * np.abs(xs - c).max()
        worst = max(worst, circ / max(scalemax, 1e-30))
    report["P_inv_C_regular_at_T"] = float(worst)

    # C(q,p) P(p) analytic in p near the Tyurin points (p circles)
    worst = 0.0
    for t, mult in K.data.divisor:
        xs, ys, c = K.data.point_circle(t.x)
        vals = []
        for x_p, y_p in zip(xs[::8], ys[::8]):
            sp = SurfacePoint(complex(x_p), disk.sheet)
            vals.append(K.eval_with_factor(q0, sp))
        vals = np.stack(vals)
        circ = np.abs(np.mean(vals * (xs[::8] - c)[:, None, None],
                              axis=0)).max()
        worst = max(worst, circ / max(np.abs(vals).max()
                                      * np.abs(xs - c).max(), 1e-30))
    report["C_P_analytic_in_p_at_T"] = float(worst)

    # rows annihilate the Tyurin tails (simple points)
    worst = 0.0
    for tail in K.data.basis:
        if len(tail.parts) == 1 and tail.parts[0].order == 1:
            t = tail.parts[0].point
            h = tail.parts[0].coeffs[0]
            val = eval_kernel(K, t, p_out)
            worst = max(worst, float(np.abs(h @ val).max()
                                     / max(np.abs(val).max(), 1e-30)))
    report["tails_annihilate"] = worst
    return report


def eval_matrix_on_nodes(K: KernelEvaluator, xs, ys, p: SurfacePoint):
    """Kernel values at many q nodes (given as x, y arrays on the curve)
    for a fixed p.  Returns (M, n, n)."""
    ctx = K.ctx
    n, g = K.n, ctx.g
    f = K.omega_p(p)
    wp = f(xs, ys)
    wrow = ctx.omega_row(xs, ys)
    X = K.coefficient_matrix(p)
    out = wp[:, None, None] * np.eye(n)[None, :, :]
    for l in range(g):
        for b in range(n):
            out[:, b, :] += wrow[:, l, None] * X[l * n + b][None, :]
    return out
