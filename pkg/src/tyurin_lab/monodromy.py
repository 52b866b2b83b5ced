"""Parallel transport and monodromy of connection forms.

Flat sections solve dPsi = A Psi with Psi = 1 at the marked point.  The
monodromy convention is that continuation along a loop gamma multiplies
the fundamental solution on the right by the inverse representation
matrix, so M_gamma is the inverse of the raw transport matrix and the
word map is a homomorphism in traversal order.  Jump matrices on the
canonical dissection are conjugated words in the generators, labeled on
half edges counterclockwise around the single vertex at the marked
point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import solve_ivp

from . import paths
from .cauchy_kernel import eval_matrix_on_nodes
from .connection import ConnectionForm
from .errors import (ApparentSingularityViolation, CharacterMismatch,
                     IntegratorStall, PathTooClose)

DEFAULT_CLEARANCE = 1e-3
BASE_OFFSET = -1e-4


def base_point_x(ctx):
    """Transport base: the marked point nudged off the exact pole
    cancellation of the reference connection.  Monodromy data is
    conjugation invariant, so the offset drops out of relations, traces
    and scalar comparisons."""
    return ctx.anchor + BASE_OFFSET * ctx.scale


def _segment_distance(a, b, p):
    d = b - a
    L2 = abs(d) ** 2
    if L2 == 0.0:
        return abs(p - a)
    t = min(1.0, max(0.0, np.real(np.conj(d) * (p - a)) / L2))
    return abs(a + t * d - p)


def singular_x(A: ConnectionForm):
    """x-coordinates the transport paths must stay away from."""
    out = [complex(t.x) for t, _ in A.K.data.divisor]
    out += [complex(p.x) for p, _ in A.divisor]
    return out


def check_clearance(A, path, clearance):
    pts = np.asarray(path, dtype=complex)
    for p in singular_x(A):
        for a, b in zip(pts[:-1], pts[1:]):
            d = _segment_distance(a, b, p)
            if d < clearance:
                raise PathTooClose(
                    f"path within {d:.2e} of singular point {p}")


def _on_disk_sheet(K, x, y):
    ctx = K.ctx
    j = int(np.abs(K.boundary_x - x).argmin())
    line = paths.refine([K.boundary_x[j], x], 0.1 * K.P.disk.radius)
    yc = ctx.continue_y(line, K.boundary_y[j])[-1]
    return abs(yc - y) < abs(yc + y)


def transport(A: ConnectionForm, path, y0=None, clearance=None,
              rtol=1e-10, atol=1e-12):
    """Transport matrix along an x-plane polyline; the sheet is tracked
    by continuing y as part of the state.  Starts from the first
    waypoint with initial y value y0 (default: the marked-point sheet).
    """
    ctx = A.ctx
    n = A.n
    disk = A.K.P.disk
    clearance = DEFAULT_CLEARANCE * ctx.scale if clearance is None \
        else clearance
    pts = np.asarray(path, dtype=complex)
    check_clearance(A, pts, clearance)
    if y0 is None:
        if abs(pts[0] - ctx.anchor) > 1e-2 * ctx.scale:
            raise PathTooClose(
                "default initial sheet requires starting near the marked "
                "point")
        y0 = ctx.y_of(ctx.point(pts[0], ctx.infinity.sheet))
    Qp = npoly.polyder(ctx.Q)
    psi = np.eye(n, dtype=complex)
    y = complex(y0)
    nfev = 0
    for a, b in zip(pts[:-1], pts[1:]):
        if a == b:
            continue
        dx = b - a

        def rhs(t, s):
            x = a + t * dx
            yv = s[0]
            in_disk = bool(disk.contains(x)) \
                and _on_disk_sheet(A.K, x, yv)
            Av = A.eval_nodes(np.array([x]), np.array([yv]), in_disk)[0]
            # split off the scalar character: the trace part can grow or
            # shrink by dozens of orders along a loop and would amplify
            # interior integration errors; as a separate additive state
            # it stays benign
            sc = np.trace(Av) / n
            dlog = dx * sc
            dpsi = dx * ((Av - sc * np.eye(n)) @ s[2:].reshape(n, n))
            dy = dx * npoly.polyval(x, Qp) / (2 * yv)
            return np.concatenate([[dy, dlog], dpsi.ravel()])

        # integrate the segment factor from the identity so the error
        # control stays relative even when the accumulated solution
        # decays by many orders along the path
        s0 = np.concatenate([[y, 0.0],
                             np.eye(n, dtype=complex).ravel()])
        sol = solve_ivp(rhs, (0.0, 1.0), s0, method="DOP853",
                        rtol=rtol, atol=atol)
        nfev += sol.nfev
        if sol.status != 0:
            raise IntegratorStall(
                f"integrator failed on segment {a} -> {b}: {sol.message}")
        y = sol.y[0, -1]
        psi = np.exp(sol.y[1, -1]) * sol.y[2:, -1].reshape(n, n) @ psi
        # snap y back onto the curve
        yp = ctx.principal_y(np.array([b]))[0]
        y = yp if abs(yp - y) < abs(yp + y) else -yp
    transport.last_nfev = nfev
    transport.last_y = y
    return psi


def _route_multi(a, b, obstacles, max_rounds=24):
    """Polyline a -> b with a per-obstacle clearance list of pairs
    (point, clearance)."""
    pts = [complex(a), complex(b)]
    for _ in range(max_rounds):
        changed = False
        new = [pts[0]]
        for p, q in zip(pts[:-1], pts[1:]):
            for obs, cl in obstacles:
                det = paths._push_out(p, q, complex(obs), cl)
                if det is not None:
                    new.append(det)
                    changed = True
                    break
            new.append(q)
        pts = new
        if not changed:
            return np.asarray(pts, dtype=complex)
    raise PathTooClose(f"could not route {a} -> {b} around obstacles")


def generator_loop(A: ConnectionForm, kind, k, clearance=None):
    """Polyline for the generator loop based at the marked point: a
    connector to the homology base, the cycle word, and the connector
    reversed.  The connector is routed around the singular points and
    around the whole reduction disk."""
    ctx = A.ctx
    clearance = DEFAULT_CLEARANCE * ctx.scale if clearance is None \
        else clearance
    disk = A.K.P.disk
    obstacles = [(disk.center, disk.radius + 0.1 * ctx.scale)]
    obstacles += [(p, max(clearance, 0.12 * ctx.scale))
                  for p in singular_x(A)]
    sep = float(np.min(ctx._branch_sep))
    obstacles += [(p, 0.25 * sep) for p in ctx.branch_points]
    conn = _route_multi(base_point_x(ctx), ctx.homology_base, obstacles)
    cyc = ctx.cycle_path(kind, k)
    return np.concatenate([conn, cyc[1:], conn[::-1][1:]])


@dataclass
class MonodromyRep:
    M_alpha: list
    M_beta: list
    J: list                      # 4g half-edge jump matrices
    relation_defect: float
    vertex_defect: float
    nfev: int
    transports: dict = field(default_factory=dict)

    @property
    def g(self):
        return len(self.M_alpha)

    def M_commutator(self, k):
        a, b = self.M_alpha[k], self.M_beta[k]
        return a @ b @ np.linalg.inv(a) @ np.linalg.inv(b)


def jump_matrices(M_alpha, M_beta):
    """Half-edge jump matrices from the generator monodromies.

    The half edges at the base point are enumerated counterclockwise
    starting from the sector where the solution is normalized, the first
    edge being the outgoing last beta arc.  Writing V_l for the sector
    value just counterclockwise of edge l, each crossing multiplies on
    the right by the jump of that edge, and continuing the sector germ
    along a generator loop multiplies on the right by the inverse
    monodromy.  Solving the resulting recursion gives, with
    c_l = a_l b_l a_l^-1 b_l^-1 and G_l = c_{l+1} ... c_g,

        J_beta_l  = G_l^-1 b_l a_l^-1 b_l^-1 G_l
        J_alpha_l = G_l^-1 b_l a_l b_l a_l^-1 b_l^-1 G_l

    and the product of all 4g jumps collapses to c_1 ... c_g, the
    surface relation."""
    g = len(M_alpha)
    n = M_alpha[0].shape[0]
    inv = np.linalg.inv
    com = [M_alpha[k] @ M_beta[k] @ inv(M_alpha[k]) @ inv(M_beta[k])
           for k in range(g)]
    J = [None] * (4 * g)
    G = np.eye(n, dtype=complex)
    for ell in range(g, 0, -1):
        k = ell - 1
        a, b = M_alpha[k], M_beta[k]
        Gi = inv(G)
        J_b = Gi @ b @ inv(a) @ inv(b) @ G
        J_a = Gi @ b @ a @ b @ inv(a) @ inv(b) @ G
        base = 4 * (g - ell)
        J[base + 0] = J_b
        J[base + 1] = inv(J_a)
        J[base + 2] = inv(J_b)
        J[base + 3] = J_a
        G = com[k] @ G
    return J


def monodromy_rep(A: ConnectionForm, clearance=None, rtol=1e-10,
                  loops=None):
    """Representation matrices of the generators, derived jump matrices
    and the surface-relation defect.  Pass precomputed loops keyed by
    (kind, k) to keep paths fixed across perturbed connections."""
    ctx = A.ctx
    g = ctx.g
    n = A.n
    Ma, Mb = [], []
    nfev = 0
    tr = {}
    for kind, acc in (("alpha", Ma), ("beta", Mb)):
        for k in range(g):
            loop = loops[(kind, k)] if loops is not None \
                else generator_loop(A, kind, k, clearance)
            T = transport(A, loop, clearance=clearance, rtol=rtol)
            nfev += transport.last_nfev
            tr[(kind, k)] = T
            acc.append(np.linalg.inv(T))
    rel = np.eye(n, dtype=complex)
    for k in range(g):
        rel = rel @ Ma[k] @ Mb[k] @ np.linalg.inv(Ma[k]) \
            @ np.linalg.inv(Mb[k])
    J = jump_matrices(Ma, Mb)
    K = np.eye(n, dtype=complex)
    for Jl in J:
        K = K @ Jl
    return MonodromyRep(Ma, Mb, J,
                        float(np.abs(rel - np.eye(n)).max()),
                        float(np.abs(K - np.eye(n)).max()),
                        nfev, tr)


def small_loop_transport(A: ConnectionForm, point, radius, sheet_y,
                         rtol=1e-10):
    """Transport around a small x-circle, seeded with the given y at the
    rightmost point of the circle."""
    c = complex(point)
    xs = c + radius * np.exp(2j * np.pi * np.linspace(0, 1, 33))
    return transport(A, xs, y0=sheet_y, clearance=0.5 * radius, rtol=rtol)


def verify_apparent_singularities(A: ConnectionForm, tol=1e-6,
                                  rtol=1e-10):
    """Loop transports around the framing points and the reference
    divisor must be trivial: all finite singularities of the connection
    are apparent."""
    ctx = A.ctx
    n = A.n
    report = {"framing": [], "divisor": []}
    for t, mult in A.K.data.divisor:
        xs0, ys0, c = A.K.data.point_circle(t.x)
        r = 0.8 * abs(xs0[0] - c)
        start = c + r
        j = int(np.argmin(np.abs(xs0 - start)))
        line = paths.refine([xs0[j], start], 0.1 * r)
        y0 = ctx.continue_y(line, ys0[j])[-1]
        T = small_loop_transport(A, c, r, y0, rtol)
        report["framing"].append(float(np.abs(T - np.eye(n)).max()))
    for p, m in A.divisor:
        r = 0.04 * ctx.scale
        xs, ys, c = ctx.circle_nodes(p, r)
        j = int(np.argmin(np.abs(xs - (c + r))))
        T = small_loop_transport(A, c, r, ys[j], rtol)
        report["divisor"].append(float(np.abs(T - np.eye(n)).max()))
    report["worst"] = max(report["framing"] + report["divisor"])
    report["passed"] = report["worst"] < tol
    if not report["passed"]:
        raise ApparentSingularityViolation(
            f"local monodromy defect {report['worst']:.3e}")
    return report


def compare_characters(A1: ConnectionForm, A2: ConnectionForm,
                       rep1=None, rep2=None, tol=1e-6, rtol=1e-10):
    """The two monodromies for different reference divisors differ by a
    scalar unitary character given by the exponentiated periods of the
    connecting third-kind differential."""
    ctx = A1.ctx
    n = A1.n
    rep1 = rep1 or monodromy_rep(A1, rtol=rtol)
    rep2 = rep2 or monodromy_rep(A2, rtol=rtol)

    def omega(xs, ys):
        return A2.dlog(xs, ys) - A1.dlog(xs, ys)

    report = []
    for kind in ("alpha", "beta"):
        for k in range(ctx.g):
            M1 = (rep1.M_alpha if kind == "alpha" else rep1.M_beta)[k]
            M2 = (rep2.M_alpha if kind == "alpha" else rep2.M_beta)[k]
            R = M2 @ np.linalg.inv(M1)
            s = np.trace(R) / n
            if np.abs(R - s * np.eye(n)).max() > tol * max(1.0, abs(s)):
                raise CharacterMismatch(
                    f"ratio for {kind}_{k + 1} is not scalar")
            expected = np.exp(ctx.cycle_integral(kind, k, omega))
            report.append({
                "generator": f"{kind}_{k + 1}",
                "scalar": s,
                "modulus_defect": abs(abs(s) - 1.0),
                "period_defect": abs(s - expected),
            })
    worst = max(max(r["modulus_defect"], r["period_defect"])
                for r in report)
    if worst > tol:
        raise CharacterMismatch(
            f"character comparison defect {worst:.3e}")
    return report


# -- dissection boundary values ------------------------------------------

@dataclass
class DissectionArc:
    label: str                  # "alpha_2" / "beta_1"
    path: np.ndarray            # x polyline of the loop, own orientation
    J: np.ndarray               # jump matrix on the arc
    seed: np.ndarray            # minus boundary value of Psi at the start
    end: np.ndarray             # minus boundary value at the end


def dissection_arcs(A: ConnectionForm, rep: MonodromyRep,
                    clearance=None, loops=None):
    """The 2g arcs of the canonical dissection on the curve with their
    jump matrices and minus-side boundary seeds: along an arc the minus
    boundary value of Psi is the transport along the arc path seeded
    with the partial jump product of the sector where the arc leaves the
    base point.  Consistency requires T_arc seed = end for every arc."""
    ctx = A.ctx
    g = ctx.g
    n = A.n
    K = [np.eye(n, dtype=complex)]
    for Jl in rep.J:
        K.append(K[-1] @ Jl)
    if loops is None:
        loops = {(kind, k): generator_loop(A, kind, k, clearance)
                 for kind in ("alpha", "beta") for k in range(g)}
    arcs = []
    for ell in range(g, 0, -1):
        k = ell - 1
        m = 4 * (g - ell)
        arcs.append(DissectionArc(
            f"beta_{ell}", loops[("beta", k)],
            rep.J[m], K[m], K[m + 3]))
        arcs.append(DissectionArc(
            f"alpha_{ell}", loops[("alpha", k)],
            rep.J[m + 3], K[m + 3], K[m + 2]))
    return arcs


def graded_arc_nodes(path, step, scale=1.0, end_scale=2e-6, ratio=1.12):
    """Quadrature nodes along an arc polyline: uniform refinement at the
    given step plus geometric grading toward both endpoints.  The arcs
    start and end next to the marked point, where kernels in the
    boundary integrals have a nearby pole, so the first and last
    segments need nodes clustered down to the offset scale."""
    pts = paths.refine(np.asarray(path, dtype=complex), step * scale)

    def toward(a, b):
        length = abs(b - a)
        out = []
        t = end_scale * scale / length
        while t < 1.0:
            out.append(a + (b - a) * t)
            t *= ratio
        return out

    head = toward(pts[0], pts[1])
    tail = toward(pts[-1], pts[-2])[::-1]
    return np.concatenate([[pts[0]], head, pts[1:-1], tail, [pts[-1]]])


def arc_values(A: ConnectionForm, arc: DissectionArc, xs, rtol=1e-10):
    """Minus-side boundary values of the normalized flat solution at the
    given nodes along a dissection arc (the nodes must refine the arc
    polyline, endpoints included).  One integrator run per polyline
    segment with dense output at the interior nodes.  Returns (ys,
    values)."""
    ctx = A.ctx
    n = A.n
    disk = A.K.P.disk
    Qp = npoly.polyder(ctx.Q)
    xs = np.asarray(xs, dtype=complex)
    ys = np.empty(len(xs), dtype=complex)
    vals = np.empty((len(xs), n, n), dtype=complex)
    way = np.asarray(arc.path, dtype=complex)
    ys[0] = ctx.y_of(ctx.point(xs[0], ctx.infinity.sheet))
    vals[0] = arc.seed
    psi = arc.seed.astype(complex)
    y = complex(ys[0])
    # indices of the original waypoints inside the node array; the path
    # may revisit an x value, so match in traversal order
    way = way[np.concatenate([[True], np.abs(np.diff(way)) > 0])]
    marks = [0]
    for w in way[1:-1]:
        rest = np.abs(xs[marks[-1] + 1:] - w)
        hits = np.flatnonzero(rest < 1e-9 * (1.0 + abs(w)))
        j = hits[0] if len(hits) else int(np.argmin(rest))
        marks.append(marks[-1] + 1 + int(j))
    marks.append(len(xs) - 1)
    for a_i, b_i in zip(marks[:-1], marks[1:]):
        if b_i == a_i:
            continue
        a, b = xs[a_i], xs[b_i]
        dx = b - a
        t_eval = np.clip(np.real((xs[a_i:b_i + 1] - a) / dx), 0.0, 1.0)

        def rhs(t, s):
            x = a + t * dx
            yv = s[0]
            in_disk = bool(disk.contains(x)) \
                and _on_disk_sheet(A.K, x, yv)
            Av = A.eval_nodes(np.array([x]), np.array([yv]), in_disk)[0]
            sc = np.trace(Av) / n
            dpsi = dx * ((Av - sc * np.eye(n)) @ s[2:].reshape(n, n))
            return np.concatenate([[dx * npoly.polyval(x, Qp) / (2 * yv),
                                    dx * sc], dpsi.ravel()])

        s0 = np.concatenate([[y, 0.0], np.eye(n, dtype=complex).ravel()])
        sol = solve_ivp(rhs, (0.0, 1.0), s0, method="DOP853",
                        rtol=rtol, atol=1e-12, t_eval=t_eval)
        if sol.status != 0:
            raise IntegratorStall(
                f"integrator failed on segment {a} -> {b}: {sol.message}")
        seg = np.exp(sol.y[1]) * sol.y[2:].reshape(n, n, -1)
        for j in range(len(t_eval)):
            vals[a_i + j] = seg[:, :, j] @ psi
        ys[a_i:b_i + 1] = sol.y[0]
        psi = vals[b_i].copy()
        y = sol.y[0, -1]
        yp = ctx.principal_y(np.array([b]))[0]
        y = yp if abs(yp - y) < abs(yp + y) else -yp
    return ys, vals


def arc_boundary_values(A: ConnectionForm, arc: DissectionArc,
                        step=0.08, rtol=1e-10):
    """Minus-side boundary values of the normalized flat solution along
    a dissection arc at a uniform refinement of the arc polyline.
    Returns (xs, ys, values)."""
    xs = paths.refine(np.asarray(arc.path, dtype=complex),
                      step * A.ctx.scale)
    ys, vals = arc_values(A, arc, xs, rtol)
    return xs, ys, vals


def psi_variation_contour(A: ConnectionForm, arcs, dJ, p,
                          step=0.004, rtol=1e-10, end_scale=2e-6,
                          ratio=1.12):
    """Boundary-integral formula for the first variation of the
    normalized flat solution: delta Psi(p) Psi(p)^-1 equals

        (1 / 2 pi i) sum over arcs of
            integral of Psi_- dJ J^-1 Psi_-^-1 C(q, p) dq

    with C the matrix kernel and dJ the variation of the arc jump.
    dJ is a list aligned with the arcs.  For n = 1 the conjugation drops
    and no boundary values are needed.

    The constant-jump bookkeeping is exact when the arcs only meet at
    the base point.  The default lasso representatives self-intersect
    away from it, which leaves the scalar (n = 1) and trace parts
    exact but lets crossing commutators contaminate the remaining
    matrix entries, so use this with n = 1 or with an embedded arc
    system."""
    ctx = A.ctx
    n = A.n
    inv = np.linalg.inv
    total = np.zeros((n, n), dtype=complex)
    for arc, dJa in zip(arcs, dJ):
        xs = graded_arc_nodes(arc.path, step, ctx.scale, end_scale, ratio)
        if n == 1:
            ys = ctx.continue_y(
                xs, ctx.y_of(ctx.point(xs[0], ctx.infinity.sheet)))
            S = np.broadcast_to((dJa @ inv(arc.J))[None],
                                (len(xs), 1, 1))
        else:
            ys, vals = arc_values(A, arc, xs, rtol)
            core = dJa @ inv(arc.J)
            S = vals @ core @ inv(vals)
        C = eval_matrix_on_nodes(A.K, xs, ys, p)
        f = S @ C
        total += np.sum(0.5 * (f[1:] + f[:-1])
                        * np.diff(xs)[:, None, None], axis=0)
    return total / (2j * np.pi)
