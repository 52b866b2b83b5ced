"""Tyurin data of a framed bundle: the divisor of det P, the space of
principal parts of rows of P^{-1}, and the ng x ng residue-pairing matrix
against the holomorphic differentials whose corank computes h^0/h^1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .curve import CurveContext, SurfacePoint
from .errors import AmbiguousCorank, InvalidDisk
from .normal_form import Disk, NormalForm

# generous merge radius: np.roots splits an exact m-fold root by about
# eps^(1/m); merging two genuinely distinct points this close is harmless
# (the joint principal part is equivalent), splitting a multiple one is not
CLUSTER_RADIUS = 5e-5
CORANK_THRESHOLD = 1e-7


@dataclass
class LaurentTail:
    """Principal part at one point: coeffs[l] is the row n-vector
    multiplying (z - z_t)^(-(l+1))."""
    point: SurfacePoint
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))

    @property
    def order(self):
        return self.coeffs.shape[0]

    def eval(self, z):
        z = np.asarray(z, dtype=complex)
        dz = (z - self.point.x)[..., None]
        out = np.zeros(z.shape + (self.coeffs.shape[1],), dtype=complex)
        for l in range(self.order):
            out += self.coeffs[l] / dz ** (l + 1)
        return out


@dataclass
class Tail:
    """A Tyurin-space element: principal parts at one or more points."""
    parts: list

    def eval(self, z):
        return sum(p.eval(z) for p in self.parts)


def _pole_circle(z_t, all_points, disk):
    d = disk.radius - abs(z_t - disk.center)
    for s in all_points:
        if abs(s - z_t) > CLUSTER_RADIUS:
            d = min(d, abs(s - z_t))
    return 0.35 * d


def _cluster(roots):
    """Group numerically coincident roots into (center, multiplicity)."""
    out = []
    for r in sorted(roots, key=lambda z: (z.real, z.imag)):
        for i, (c, m) in enumerate(out):
            if abs(r - c) < CLUSTER_RADIUS * max(1.0, abs(c)):
                out[i] = ((c * m + r) / (m + 1), m + 1)
                break
        else:
            out.append((r, 1))
    return out


def cauchy_minus(f, poles, disk, samples=256):
    """Principal parts of f (vectorized callable z -> row vector) at the
    given (z_t, multiplicity) poles inside the disk.  Returns a Tail."""
    pts = [complex(p) for p, _ in poles]
    for z_t, mult in poles:
        gap = abs(abs(z_t - disk.center) - disk.radius)
        if gap < 1e-8 * disk.radius:
            raise InvalidDisk(f"pole {z_t} on the disk boundary")
    parts = []
    for z_t, mult in poles:
        z_t = complex(z_t)
        if not disk.contains(z_t):
            continue
        r = _pole_circle(z_t, pts, disk)
        z = z_t + r * np.exp(2j * np.pi * np.arange(samples) / samples)
        fv = np.asarray(f(z))           # (samples, n)
        coeffs = []
        for l in range(mult):
            # coefficient of (z-z_t)^{-(l+1)}: (1/2 pi i) oint f (z-z_t)^l dz
            coeffs.append(np.mean(fv * ((z - z_t) ** (l + 1))[:, None],
                                  axis=0))
        coeffs = np.array(coeffs)
        scale = max(np.abs(fv).max(), 1.0)
        while len(coeffs) and np.abs(coeffs[-1]).max() < 1e-11 * scale:
            coeffs = coeffs[:-1]
        if len(coeffs):
            parts.append(LaurentTail(SurfacePoint(z_t, disk.sheet), coeffs))
    return Tail(parts)


def _adjugate(M):
    n = M.shape[0]
    if n == 1:
        return np.array([[1.0 + 0j]])
    adj = np.empty_like(M)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(M, j, axis=0), i, axis=1)
            adj[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return adj


def _echelonize(tails, div, n, disk):
    """Gaussian elimination on the tail coefficients, highest pole order
    first, so that the basis exhibits the minimal ladder of orders."""
    pts = [complex(z) for z, _ in div]
    mults = [m for _, m in div]
    slots = []
    for level in range(max(mults) - 1, -1, -1):
        for ip, m in enumerate(mults):
            if level < m:
                slots.extend((ip, level, b) for b in range(n))
    index = {s: i for i, s in enumerate(slots)}

    def to_vec(tail):
        v = np.zeros(len(slots), dtype=complex)
        for part in tail.parts:
            ip = int(np.argmin([abs(part.point.x - z) for z in pts]))
            for l in range(part.order):
                for b in range(n):
                    v[index[(ip, l, b)]] = part.coeffs[l, b]
        return v

    vecs = [to_vec(t) for t in tails]
    pivots = {}
    out = []
    for v in vecs:
        nrm = np.abs(v).max()
        for _ in range(len(slots)):
            nz = np.flatnonzero(np.abs(v) > 1e-10 * max(nrm, 1e-30))
            if len(nz) == 0:
                break
            lead = nz[0]
            if lead not in pivots:
                pivots[lead] = v
                break
            pv = pivots[lead]
            v = v - (v[lead] / pv[lead]) * pv
        out.append(v)

    rebuilt = []
    for v in out:
        nrm = np.abs(v).max()
        parts = {}
        for s, i in index.items():
            if abs(v[i]) > 1e-10 * max(nrm, 1e-30):
                ip, l, b = s
                parts.setdefault(ip, {}).setdefault(l, np.zeros(
                    n, dtype=complex))[b] = v[i]
        plist = []
        for ip, levels in sorted(parts.items()):
            order = max(levels) + 1
            coeffs = np.zeros((order, n), dtype=complex)
            for l, row in levels.items():
                coeffs[l] = row
            plist.append(LaurentTail(SurfacePoint(pts[ip], disk.sheet),
                                     coeffs))
        rebuilt.append(Tail(plist))
    return rebuilt


def tyurin_divisor(P: NormalForm):
    """Roots of det P clustered into (x, multiplicity)."""
    return _cluster(list(P.tyurin_roots()))


def tyurin_basis(P: NormalForm):
    """Basis of the space of principal parts of rows of P^{-1}.

    Simple divisor: one tail h_j / (z - t_j) per Tyurin point, h_j the
    left null row of P(t_j).  General case: C_minus[z^k e_j P^{-1}]."""
    disk = P.disk
    div = tyurin_divisor(P)
    for z_t, _ in div:
        if not disk.contains(z_t):
            raise InvalidDisk(f"Tyurin point {z_t} outside the disk")
        if abs(abs(z_t - disk.center) - disk.radius) < 1e-8 * disk.radius:
            raise InvalidDisk(f"Tyurin point {z_t} on the disk boundary")
    n = P.n
    if all(m == 1 for _, m in div):
        tails = []
        for z_t, _ in div:
            if n == 1:
                h = np.array([1.0 + 0j])
            else:
                # adjugate row: depends holomorphically on the moduli
                # (an SVD null vector would not)
                M = P(np.array([z_t]))[0]
                adj = _adjugate(M)
                i = int(np.argmax(np.abs(adj).sum(axis=1)))
                h = adj[i]
            tails.append(Tail([LaurentTail(
                SurfacePoint(z_t, disk.sheet), h[None, :])]))
        return tails
    tails = []
    for j in range(n):
        dj = P.degrees[j]
        for k in range(dj):
            def f(z, j=j, k=k):
                Pz = P(z)
                rhs = np.zeros((len(z), n), dtype=complex)
                rhs[:, j] = z ** k
                return np.linalg.solve(
                    np.swapaxes(Pz, -1, -2), rhs[..., None])[..., 0]
            tails.append(cauchy_minus(f, div, disk))
    return _echelonize(tails, div, n, disk)


@dataclass
class TyurinData:
    P: NormalForm
    ctx: CurveContext
    divisor: list                  # [(SurfacePoint, multiplicity)]
    basis: list                    # list of Tail, length ng
    Tmat: np.ndarray               # (ng, ng): rows (a,b), columns tails
    singular_values: np.ndarray
    _circles: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.P.n

    @property
    def size(self):
        return self.Tmat.shape[0]

    def point_circle(self, z_t):
        """Cached curve circle nodes around a Tyurin point."""
        key = complex(z_t)
        if key not in self._circles:
            pts = [p.x for p, _ in self.divisor]
            r = _pole_circle(key, pts, self.P.disk)
            center = SurfacePoint(key, self.P.disk.sheet)
            xs, ys, c = self.ctx.circle_nodes(center, r)
            self._circles[key] = (xs, ys, c)
        return self._circles[key]

    def taylor_at(self, z_t, f, orders):
        """Taylor coefficients f^(l)(t)/l! for l in range(orders), of a
        differential coefficient f(x, y) analytic near the point."""
        xs, ys, c = self.point_circle(z_t)
        fv = f(xs, ys)
        return np.array([np.mean(fv * (xs - c) ** (-l), axis=0)
                         for l in range(orders)])

    def pair(self, f):
        """Residue pairing sum_t res_t tail_i(z) f(x,y) dz of every basis
        tail with a scalar differential coefficient f; returns for each
        tail a row n-vector (the pairing leaves the tail's vector index
        free)."""
        out = np.zeros((len(self.basis), self.n), dtype=complex)
        for i, tail in enumerate(self.basis):
            for part in tail.parts:
                tay = self.taylor_at(part.point.x, f, part.order)
                out[i] += (part.coeffs * tay[:, None]).sum(axis=0)
        return out

    def corank(self, threshold=CORANK_THRESHOLD):
        s = self.singular_values
        rel = s / s.max()
        band = (rel > 0.1 * threshold) & (rel < 10 * threshold)
        if band.any():
            raise AmbiguousCorank(
                f"singular values near threshold: {rel[band]}")
        return int(np.sum(rel < threshold))


def bnt_matrix(P: NormalForm, ctx: CurveContext) -> TyurinData:
    """Assemble the ng x ng residue-pairing matrix between the tail basis
    and the normalized holomorphic differentials.

    Layout: T[(a-1)n + b, i] = sum_t res_t (tail_i)_b omega_a; for n=1
    this is the classical matrix [omega_a(t_i)]."""
    n, g = P.n, ctx.g
    basis = tyurin_basis(P)
    div = [(SurfacePoint(z, P.disk.sheet), m)
           for z, m in tyurin_divisor(P)]
    data = TyurinData(P, ctx, div, basis,
                      np.zeros((n * g, n * g), dtype=complex),
                      np.zeros(n * g))
    T = np.zeros((n * g, n * g), dtype=complex)
    for a in range(g):
        def f(x, y, a=a):
            return ctx.omega_row(x, y)[..., a]
        pairs = data.pair(f)               # (ng, n)
        for b in range(n):
            T[a * n + b, :] = pairs[:, b]
    data.Tmat = T
    data.singular_values = np.linalg.svd(T, compute_uv=False)
    return data


def coranks(data: TyurinData, threshold=CORANK_THRESHOLD):
    """(h0, h1) from the corank of the pairing matrix."""
    k = data.corank(threshold)
    return data.n + k, k


def bn_matrix_points(ctx: CurveContext, points):
    """Classical rank-1 matrix [omega_a(t_j)] for a degree-g divisor of
    arbitrary simple curve points (not restricted to a chart disk).

    Its corank equals h^1 of the corresponding line bundle, which is
    detected independently by the theta vanishing oracle."""
    g = ctx.g
    if len(points) != g:
        raise InvalidDisk(f"need exactly {g} points, got {len(points)}")
    T = np.zeros((g, g), dtype=complex)
    for j, p in enumerate(points):
        vals = [d.value for d in ctx.eval_differential_basis(p)]
        T[:, j] = vals
    return T


def corank_of_matrix(T, threshold=CORANK_THRESHOLD):
    s = np.linalg.svd(T, compute_uv=False)
    rel = s / s.max()
    band = (rel > 0.1 * threshold) & (rel < 10 * threshold)
    if band.any():
        raise AmbiguousCorank(f"singular values near threshold: {rel[band]}")
    return int(np.sum(rel < threshold))
