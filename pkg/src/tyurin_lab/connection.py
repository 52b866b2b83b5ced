"""Reference connection from the kernel diagonal.

The diagonal regularization of the matrix Cauchy kernel gives a matrix
differential F with double poles at the framing divisor and a simple pole
at the marked point; subtracting the logarithmic derivative of the
half-differential pinned to a degree-g divisor D cancels the pole at the
marked point and yields the reference connection form.  Higgs fields are
reconstructed from germ data at the framing points through the kernel
residue formula, and connection forms are the affine sums of the two.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import lu_solve

from .cauchy_kernel import KernelEvaluator
from .curve import CurveContext, SurfacePoint
from .errors import (ConnectionAxiomViolation, InvalidDivisor,
                     NumericalLimitFailure, SpecialDivisor)

THETA_VANISH_REL = 1e-8


def _normalize_divisor(ctx, divisor):
    """Accept [(SurfacePoint, mult)] or [SurfacePoint]; check degree g."""
    out = []
    for item in divisor:
        if isinstance(item, tuple):
            p, m = item
        else:
            p, m = item, 1
        if p.at_infinity or p.branch:
            raise InvalidDivisor(
                "divisor points must be regular points in the x chart")
        if abs(complex(p.x) - ctx.infinity.x) < 1e-12 \
                and p.sheet == ctx.infinity.sheet:
            raise InvalidDivisor("marked point may not belong to D")
        out.append((p, int(m)))
    if sum(m for _, m in out) != ctx.g:
        raise InvalidDivisor(f"divisor degree must be {ctx.g}")
    return out


def _expand(divisor):
    return [p for p, m in divisor for _ in range(m)]


def _elementary(ctx, xq, yq, xp, yp):
    """Elementary third-kind coefficient with residue +1 at the pole
    (xp, yp) and -1 at the marked point, as a function of q = (xq, yq).
    Broadcasts q against p."""
    xinf = ctx.infinity.x
    yinf = ctx.y_of(ctx.infinity)
    return ((yq + yp) / (2 * (xq - xp))
            - (yq + yinf) / (2 * (xq - xinf))) / yq


def _batch_X(K: KernelEvaluator, xs, ys, in_disk):
    """Counterterm coefficient matrices X(p) for many regular points p
    given as curve arrays; returns (npts, ng, n)."""
    ctx = K.ctx
    disk = K.P.disk
    xs = np.asarray(xs, dtype=complex)
    ys = np.asarray(ys, dtype=complex)
    bx, by = K.boundary_x, K.boundary_y
    fac = bx - disk.center
    fv = _elementary(ctx, bx[None, :], by[None, :],
                     xs[:, None], ys[:, None])        # (npts, M)
    R = np.einsum("imb,pm->pib", K.tails_on_boundary, fv * fac[None, :]) \
        / len(bx)
    if in_disk:
        tv = np.stack([t.eval(xs) for t in K.data.basis])   # (ng, npts, n)
        R = R - np.moveaxis(tv, 0, 1)
    ng = R.shape[1]
    B = np.moveaxis(R, 1, 0).reshape(ng, -1)
    X = -lu_solve(K.lu, B)
    return np.moveaxis(X.reshape(ng, len(xs), -1), 0, 1)


def _omega_contract(ctx, xs, ys, X):
    """Omega(q) X assembled from omega_row and the (npts, ng, n) X."""
    n = X.shape[-1]
    w = ctx.omega_row(xs, ys)                          # (npts, g)
    Xr = X.reshape(len(np.atleast_1d(xs)), ctx.g, n, n)
    return np.einsum("pl,plrs->prs", w, Xr)


def fay_nodes(K: KernelEvaluator, xs, ys, in_disk):
    """Diagonal-regularized kernel (the F differential, x-chart
    coefficients) at many curve points; returns (npts, n, n)."""
    ctx = K.ctx
    xs = np.asarray(xs, dtype=complex)
    ys = np.asarray(ys, dtype=complex)
    yinf = ctx.y_of(ctx.infinity)
    Qp = npoly.polyval(xs, npoly.polyder(ctx.Q))
    Qv = ctx.q_eval(xs)
    scalar = -Qp / (4 * Qv) \
        - (ys + yinf) / (2 * (xs - ctx.infinity.x)) / ys
    X = _batch_X(K, xs, ys, in_disk)
    n = K.n
    out = scalar[:, None, None] * np.eye(n)[None, :, :]
    out += _omega_contract(ctx, xs, ys, X)
    return out


def fay_diagonal(K: KernelEvaluator, w: SurfacePoint):
    """Analytic diagonal limit of the kernel at a single point."""
    yw = K.ctx.y_of(w)
    return fay_nodes(K, np.array([w.x]), np.array([yw]),
                     K._p_in_disk(w))[0]


def fay_differential(K: KernelEvaluator, w: SurfacePoint, step=None):
    """Diagonal limit by two-point Richardson extrapolation in the pole
    offset; returns (matrix, error_estimate).  The analytic evaluation
    fay_diagonal is the production path; this realizes the limit
    definition directly and serves as its cross-check."""
    ctx = K.ctx
    h0 = step if step is not None else 1e-3 * ctx.scale
    yw = ctx.y_of(w)
    n = K.n

    def E(h):
        xp = complex(w.x + h)
        cands = [SurfacePoint(xp, s) for s in (w.sheet, -w.sheet)]
        p = min(cands, key=lambda c: abs(ctx.y_of(c) - yw))
        from .cauchy_kernel import eval_kernel
        return eval_kernel(K, w, p) + np.eye(n) / h

    e1, e2, e3 = E(h0), E(h0 / 2), E(h0 / 4)
    r1 = 2 * e2 - e1
    r2 = 2 * e3 - e2
    err = float(np.abs(r2 - r1).max())
    scale = max(float(np.abs(r2).max()), 1.0)
    if err > 1e-3 * scale:
        raise NumericalLimitFailure(
            f"diagonal limit not converging: defect {err:.3e}")
    return r2, err


# -- half-differential ---------------------------------------------------

@dataclass
class DlogHalf:
    """Logarithmic derivative of the half-differential with divisor
    >= D - (marked point): -Q'/(4Q) dx plus imaginary-period third-kind
    differentials moving the residues to D."""
    ctx: CurveContext
    divisor: list
    _parts: list            # [(weight, coeff_fn, c_vector)]

    def tilde(self, xs, ys):
        """The third-kind part only (purely imaginary periods)."""
        xs = np.asarray(xs, dtype=complex)
        ys = np.asarray(ys, dtype=complex)
        out = np.zeros(xs.shape, dtype=complex)
        w = self.ctx.omega_row(xs, ys)
        for weight, f, c in self._parts:
            out += weight * (f(xs, ys) - w @ c)
        return out

    def __call__(self, xs, ys):
        xs = np.asarray(xs, dtype=complex)
        Qp = npoly.polyval(xs, npoly.polyder(self.ctx.Q))
        return -Qp / (4 * self.ctx.q_eval(xs)) + self.tilde(xs, ys)


def dlog_half_differential(ctx: CurveContext, divisor) -> DlogHalf:
    div = _normalize_divisor(ctx, divisor)
    pts = _expand(div)
    ref = abs(ctx.theta(ctx.riemann_constants() + 0.3))
    if abs(ctx.theta_with_divisor(pts)) < THETA_VANISH_REL * max(ref, 1.0):
        raise SpecialDivisor("D is special; half-differential undefined")
    inf_w = SurfacePoint(at_infinity=True)
    parts = []
    for p, m in div:
        f = ctx.third_kind_coeff(p, inf_w)
        c = ctx.third_kind_normalization(p, inf_w, mode="imaginary-periods")
        parts.append((m, f, c))
    f = ctx.third_kind_coeff(ctx.infinity, inf_w)
    c = ctx.third_kind_normalization(ctx.infinity, inf_w,
                                     mode="imaginary-periods")
    parts.append((-1, f, c))
    return DlogHalf(ctx, div, parts)


# -- Higgs fields --------------------------------------------------------

@dataclass
class HiggsField:
    """Matrix differential with poles at the framing points (and at most
    a simple pole at the marked point) built from local germ data."""
    K: KernelEvaluator
    germs: dict
    _circles: list = field(default_factory=list)
    _RX: np.ndarray = None

    @property
    def n(self):
        return self.K.n

    def _germ_matrix(self, coeffs, c, xq):
        """P phi P^{-1} at points xq on the disk sheet, phi from the
        Taylor coefficients of the germ at z = c."""
        dz = xq - c
        gv = np.einsum("lrs,ml->mrs",
                       coeffs, dz[:, None] ** np.arange(len(coeffs)))
        Pv = self.K.P(xq)
        return Pv @ gv @ np.linalg.inv(Pv)

    def eval_nodes(self, xs, ys):
        ctx = self.K.ctx
        xs = np.asarray(xs, dtype=complex)
        ys = np.asarray(ys, dtype=complex)
        n = self.n
        out = np.zeros(xs.shape + (n, n), dtype=complex)
        for circ in self._circles:
            cxs, cys, Mfac = circ["xs"], circ["ys"], circ["Mfac"]
            fv = _elementary(ctx, xs[..., None], ys[..., None],
                             cxs, cys)                 # (..., M)
            out += np.einsum("...m,mrs->...rs", fv, Mfac) / len(cxs)
            # inside the residue circle the kernel's coincidence pole
            # adds back the full local singular matrix
            inside = (np.abs(xs - circ["c"]) < circ["r"]) \
                & (np.abs(ys - circ["y0"]) < np.abs(ys + circ["y0"]))
            if np.any(inside):
                out[inside] += self._germ_matrix(circ["coeffs"], circ["c"],
                                                 xs[inside])
        if self._RX is not None:
            w = ctx.omega_row(xs, ys)                  # (..., g)
            Xr = self._RX.reshape(ctx.g, n, n)
            out += np.einsum("...l,lrs->...rs", w, Xr)
        return out

    def __call__(self, q: SurfacePoint):
        yq = self.K.ctx.y_of(q)
        return self.eval_nodes(np.array([q.x]), np.array([yq]))[0]

    def residue_at_marked(self):
        ctx = self.K.ctx
        r = 0.05 * ctx.scale
        xs, ys, c = ctx.circle_nodes(ctx.infinity, r)
        vals = self.eval_nodes(xs, ys)
        return np.mean(vals * (xs - c)[:, None, None], axis=0)


def build_higgs(K: KernelEvaluator, germs: dict) -> HiggsField:
    """Higgs field from germs: germs maps an index into the framing
    divisor to Taylor coefficients (m, n, n) of the holomorphic matrix
    differential germ in (z - t)."""
    data = K.data
    n = K.n
    phi = HiggsField(K, germs)
    phi._RX = np.zeros((n * K.ctx.g, n), dtype=complex)
    for idx, coeffs in germs.items():
        t, mult = data.divisor[idx]
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim != 3 or coeffs.shape[1:] != (n, n):
            raise InvalidDivisor("germ coefficients must be (m, n, n)")
        if coeffs.shape[0] < mult:
            raise InvalidDivisor(
                f"germ at index {idx} needs at least {mult} orders")
        xs, ys, c = data.point_circle(t.x)
        dz = xs - c
        Mv = phi._germ_matrix(coeffs, c, xs)
        Mfac = Mv * dz[:, None, None]
        phi._circles.append({"xs": xs, "ys": ys, "Mfac": Mfac, "c": c,
                             "r": abs(dz[0]), "y0": np.mean(ys),
                             "coeffs": coeffs})
        Xn = _batch_X(K, xs, ys, in_disk=True)         # (M, ng, n)
        phi._RX += np.mean(np.einsum("mis,mst->mit", Xn, Mfac), axis=0)
    return phi


def holomorphic_class(K: KernelEvaluator, germs: dict) -> dict:
    """Least-squares shift of the germ coefficients killing the residue
    of the field at the marked point, so the resulting Higgs field is in
    the holomorphic (unframed) class."""
    data = K.data
    n = K.n
    res_of = {}
    for idx, coeffs in germs.items():
        t, mult = data.divisor[idx]
        xs, ys, c = data.point_circle(t.x)
        Pv = K.P(xs)
        Pinv = np.linalg.inv(Pv)
        res_of[idx] = (xs, c, Pv, Pinv)
    S = np.zeros((n, n), dtype=complex)
    cols, keys = [], []
    for idx, coeffs in germs.items():
        xs, c, Pv, Pinv = res_of[idx]
        dz = xs - c
        coeffs = np.asarray(coeffs, dtype=complex)
        gv = np.einsum("lrs,ml->mrs",
                       coeffs, dz[:, None] ** np.arange(len(coeffs)))
        S -= np.mean((Pv @ gv @ Pinv) * dz[:, None, None], axis=0)
        for l in range(len(coeffs)):
            for a in range(n):
                for b in range(n):
                    E = np.zeros((n, n), dtype=complex)
                    E[a, b] = 1.0
                    Mv = Pv @ ((dz ** l)[:, None, None] * E) @ Pinv
                    r = -np.mean(Mv * dz[:, None, None], axis=0)
                    cols.append(r.ravel())
                    keys.append((idx, l, a, b))
    L = np.array(cols).T
    delta, *_ = np.linalg.lstsq(L, -S.ravel(), rcond=None)
    out = {idx: np.asarray(c, dtype=complex).copy()
           for idx, c in germs.items()}
    for (idx, l, a, b), d in zip(keys, delta):
        out[idx][l, a, b] += d
    return out


def higgs_germs(K: KernelEvaluator, phi, orders=None, radius_factor=0.6):
    """Taylor germs of P^{-1} Phi P at the framing points (the inverse of
    build_higgs up to the effective orders)."""
    data = K.data
    out = {}
    for idx, (t, mult) in enumerate(data.divisor):
        m = mult if orders is None else orders
        xs0, ys0, c = data.point_circle(t.x)
        r = radius_factor * abs(xs0[0] - c)
        xs, ys, c = K.ctx.circle_nodes(SurfacePoint(c, K.P.disk.sheet), r)
        vals = phi.eval_nodes(xs, ys)
        Pv = K.P(xs)
        V = np.linalg.inv(Pv) @ vals @ Pv
        tay = np.stack([np.mean(V * ((xs - c) ** (-l))[:, None, None],
                                axis=0) for l in range(m)])
        out[idx] = tay
    return out


# -- connection forms ----------------------------------------------------

@dataclass
class ConnectionForm:
    """A = (diagonal kernel part) - 1 dlog h_D + Higgs part; x-chart
    coefficient evaluator with the local analyticity certificates."""
    K: KernelEvaluator
    divisor: list
    dlog: DlogHalf
    higgs: HiggsField = None
    defects: dict = None

    @property
    def ctx(self):
        return self.K.ctx

    @property
    def n(self):
        return self.K.n

    def eval_nodes(self, xs, ys, in_disk):
        out = fay_nodes(self.K, xs, ys, in_disk)
        n = self.n
        out -= self.dlog(xs, ys)[..., None, None] * np.eye(n)
        if self.higgs is not None:
            out += self.higgs.eval_nodes(xs, ys)
        return out

    def coefficient(self, q: SurfacePoint):
        yq = self.ctx.y_of(q)
        return self.eval_nodes(np.array([q.x]), np.array([yq]),
                               self.K._p_in_disk(q))[0]

    def higgs_part(self):
        """The image under the affine identification: reference minus
        this connection is minus the Higgs part."""
        return self.higgs


def _nf_derivative(P):
    diag = [npoly.polyder(np.asarray(d, dtype=complex)) for d in P.diag]
    lower = {k: npoly.polyder(np.asarray(v, dtype=complex))
             for k, v in P.lower.items()}

    def dP(z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape + (P.n, P.n), dtype=complex)
        for j in range(P.n):
            out[..., j, j] = npoly.polyval(z, diag[j]) if len(diag[j]) \
                else 0.0
        for (j, k), cs in lower.items():
            if len(cs):
                out[..., j, k] = npoly.polyval(z, cs)
        return out
    return dP


def validate_connection(form: ConnectionForm, tol=1e-6):
    """Quadrature certificates for the two local axioms plus the residue
    at the marked point; for a framed Higgs part the marked residue is
    checked against the field's own, otherwise against zero.  Returns
    the defect report."""
    K, ctx = form.K, form.ctx
    n = form.n
    dP = _nf_derivative(K.P)
    report = {"framing": [], "divisor": [], "marked": None}
    for t, mult in K.data.divisor:
        xs0, _, c = K.data.point_circle(t.x)
        r = 0.55 * abs(xs0[0] - c)
        xs, ys, _ = ctx.circle_nodes(SurfacePoint(c, K.P.disk.sheet), r)
        A = form.eval_nodes(xs, ys, in_disk=True)
        Pv = K.P(xs)
        Pinv = np.linalg.inv(Pv)
        W = Pinv @ A @ Pv - Pinv @ dP(xs)
        scale = max(float(np.abs(W).max()), 1.0)
        worst = 0.0
        for m in range(1, mult + 2):
            mom = np.mean(W * ((xs - c) ** m)[:, None, None], axis=0)
            worst = max(worst, float(np.abs(mom).max())
                        / (scale * abs(xs[0] - c) ** m))
        report["framing"].append(worst)
    for p, m in form.divisor:
        r = 0.35 * _clearance(ctx, form, p)
        xs, ys, c = ctx.circle_nodes(p, r)
        A = form.eval_nodes(xs, ys, _in_disk_point(K, p))
        res = np.mean(A * (xs - c)[:, None, None], axis=0)
        report["divisor"].append(
            float(np.abs(res + m * np.eye(n)).max()))
    r = 0.05 * ctx.scale
    xs, ys, c = ctx.circle_nodes(ctx.infinity, r)
    A = form.eval_nodes(xs, ys, in_disk=False)
    res = np.mean(A * (xs - c)[:, None, None], axis=0)
    expect = 0.0 if form.higgs is None else form.higgs.residue_at_marked()
    report["marked"] = float(np.abs(res - expect).max())
    report["marked_residue"] = res
    report["worst"] = max(report["framing"] + report["divisor"]
                          + [report["marked"]])
    report["passed"] = report["worst"] < tol
    return report


def _in_disk_point(K, p):
    return K._p_in_disk(p)


def _clearance(ctx, form, p):
    d = np.abs(ctx.branch_points - complex(p.x)).min()
    d = min(d, abs(complex(p.x) - ctx.infinity.x))
    for q, _ in form.divisor:
        if q is not p:
            d = min(d, abs(complex(p.x) - complex(q.x)))
    for t, _ in form.K.data.divisor:
        d = min(d, abs(complex(p.x) - complex(t.x)))
    return d


def reference_connection(K: KernelEvaluator, divisor, tol=1e-6):
    """The zero-section connection form (no Higgs part)."""
    div = _normalize_divisor(K.ctx, divisor)
    dlog = dlog_half_differential(K.ctx, div)
    form = ConnectionForm(K, div, dlog)
    form.defects = validate_connection(form, tol)
    if not form.defects["passed"]:
        raise ConnectionAxiomViolation(
            f"reference connection defect {form.defects['worst']:.3e}")
    return form


def assemble_connection(reference: ConnectionForm, higgs: HiggsField,
                        tol=1e-6):
    if higgs is not None:
        res = np.abs(higgs.residue_at_marked()).max()
        if res > 1e-8:
            warnings.warn(
                "Higgs part is framed (pole at the marked point, residue "
                f"{res:.3e}); cotangent identification needs the "
                "holomorphic class", stacklevel=2)
    form = ConnectionForm(reference.K, reference.divisor, reference.dlog,
                          higgs)
    form.defects = validate_connection(form, tol)
    if not form.defects["passed"]:
        raise ConnectionAxiomViolation(
            f"connection defect {form.defects['worst']:.3e}")
    return form


def variational_reference(K: KernelEvaluator, delta_P, p: SurfacePoint):
    """Residue formula for the first variation of the reference
    connection in a bundle modulus: sum over the framing points of
    res_s C(p, s) deltaP(s) P^{-1}(s) C(s, p)."""
    ctx = K.ctx
    n = K.n
    yp = ctx.y_of(p)
    xp1 = np.array([p.x])
    yp1 = np.array([yp])
    Xp = _batch_X(K, xp1, yp1, K._p_in_disk(p))        # (1, ng, n)
    out = np.zeros((n, n), dtype=complex)
    for t, mult in K.data.divisor:
        xs, ys, c = K.data.point_circle(t.x)
        # C(p, s): differential slot at p, pole slot on the circle
        f1 = _elementary(ctx, p.x, yp, xs, ys)          # (M,)
        Xs = _batch_X(K, xs, ys, in_disk=True)          # (M, ng, n)
        C1 = f1[:, None, None] * np.eye(n) \
            + np.einsum("l,mlrs->mrs", ctx.omega_row(xp1, yp1)[0],
                        Xs.reshape(len(xs), ctx.g, n, n))
        # C(s, p): differential slot on the circle, pole slot at p
        f2 = _elementary(ctx, xs, ys, p.x, yp)          # (M,)
        C2 = f2[:, None, None] * np.eye(n) \
            + _omega_contract(ctx, xs, ys,
                              np.broadcast_to(Xp, (len(xs),) + Xp.shape[1:]))
        Pinv = np.linalg.inv(K.P(xs))
        mid = delta_P(xs) @ Pinv
        integrand = C1 @ mid @ C2
        out += np.mean(integrand * (xs - c)[:, None, None], axis=0)
    return out
