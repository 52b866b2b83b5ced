"""Reduction of an analytic (polynomial) transition matrix on a disk to
its unique lower-triangular polynomial normal form.

The reduction works on boundary samples of the matrix entries.  Column
operations with coefficients analytic on the disk are legal; the in-disk
zero divisor of an entry is extracted by the argument principle (power
sums of the zeros by spectral contour quadrature, then Newton identities
and a Newton polish of the roots).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import IllConditionedReduction, InvalidDisk, SingularInput

ZTOL = 1e-10       # coefficient considered zero below ZTOL * row scale
ZBAND = 1e-12      # ambiguity band lower edge


@dataclass(frozen=True)
class Disk:
    center: complex
    radius: float
    sheet: int = 1

    def boundary(self, M=1024):
        t = np.linspace(0, 2 * np.pi, M, endpoint=False)
        return self.center + self.radius * np.exp(1j * t)

    def contains(self, z, margin=0.0):
        return np.abs(np.asarray(z) - self.center) < self.radius - margin


@dataclass
class AnalyticMatrix:
    """n x n matrix of polynomials (ascending coefficient lists)."""
    entries: list        # entries[i][j] = ndarray of coefficients
    degree_bound: int = 0

    def __post_init__(self):
        self.entries = [[np.atleast_1d(np.asarray(e, dtype=complex))
                         for e in row] for row in self.entries]
        self.degree_bound = max(self.degree_bound,
                                max(len(e) - 1 for row in self.entries
                                    for e in row))

    @property
    def n(self):
        return len(self.entries)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.empty((self.n, self.n) + z.shape, dtype=complex)
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                out[i, j] = npoly.polyval(z, e)
        return np.moveaxis(out, (0, 1), (-2, -1))

    @staticmethod
    def identity(n):
        return AnalyticMatrix([[np.array([1.0 + 0j]) if i == j
                                else np.array([0j]) for j in range(n)]
                               for i in range(n)])


@dataclass
class NormalForm:
    """Lower-triangular polynomial normal form P.

    diag[j]: ascending coefficients of the monic p_j; lower[(j, k)] for
    j > k: ascending coefficients of f_{jk}, deg <= d_j - 1.
    """
    n: int
    disk: Disk
    diag: list
    lower: dict = field(default_factory=dict)

    def __post_init__(self):
        self.diag = [np.atleast_1d(np.asarray(p, dtype=complex))
                     for p in self.diag]
        self.lower = {k: np.atleast_1d(np.asarray(v, dtype=complex))
                      for k, v in self.lower.items()}

    @property
    def degrees(self):
        return [len(p) - 1 for p in self.diag]

    def entry(self, j, k):
        if j == k:
            return self.diag[j]
        if j > k:
            return self.lower.get((j, k), np.array([0j]))
        return np.array([0j])

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros((self.n, self.n) + z.shape, dtype=complex)
        for j in range(self.n):
            for k in range(j + 1):
                out[j, k] = npoly.polyval(z, self.entry(j, k))
        return np.moveaxis(out, (0, 1), (-2, -1))

    def det_poly(self):
        d = np.array([1.0 + 0j])
        for p in self.diag:
            d = npoly.polymul(d, p)
        return d

    def tyurin_roots(self):
        """Roots of det P = prod p_j, with repetitions."""
        roots = []
        for p in self.diag:
            if len(p) > 1:
                roots.extend(np.roots(p[::-1]))
        return np.array(roots, dtype=complex)

    def as_analytic(self):
        ents = [[self.entry(j, k) for k in range(self.n)]
                for j in range(self.n)]
        return AnalyticMatrix(ents)


# -- boundary-sample calculus ---------------------------------------------

def _winding(fb):
    """Zero count inside the disk of an analytic function from its
    boundary samples, by the argument principle."""
    ratios = np.roll(fb, -1) / fb
    if np.abs(ratios - 1).max() > 0.9:
        raise IllConditionedReduction(
            "argument principle under-resolved (zero near boundary?)")
    return int(round(np.sum(np.log(ratios)).imag / (2 * np.pi)))


def _power_sums(fb, disk, rmax):
    """s_r = sum of (z_i - c)^r over in-disk zeros z_i, r = 1..rmax,
    by spectral contour quadrature of (z-c)^r f'/f."""
    M = len(fb)
    k = np.fft.fftfreq(M, d=1.0 / M)
    dfdtheta = np.fft.ifft(1j * k * np.fft.fft(fb))
    t = np.linspace(0, 2 * np.pi, M, endpoint=False)
    zeta = disk.radius * np.exp(1j * t)          # z - c on the boundary
    dlog = dfdtheta / fb                          # d log f / d theta
    return np.array([np.mean(zeta ** r * dlog) / 1j
                     for r in range(1, rmax + 1)])


def _newton_poly(s):
    """Monic polynomial (ascending coeffs, centered variable) with power
    sums s[0]=p_1, ..., s[d-1]=p_d of its roots."""
    d = len(s)
    e = np.zeros(d + 1, dtype=complex)
    e[0] = 1.0
    for k in range(1, d + 1):
        e[k] = sum((-1) ** (i - 1) * e[k - i] * s[i - 1]
                   for i in range(1, k + 1)) / k
    # elementary symmetric -> coefficients of prod (w - z_i), ascending
    return np.array([(-1) ** (d - i) * e[d - i] for i in range(d + 1)])


def _cauchy_eval(fb, disk, z, deriv=False):
    """Evaluate f (and f') inside the disk from boundary samples."""
    M = len(fb)
    t = np.linspace(0, 2 * np.pi, M, endpoint=False)
    w = disk.center + disk.radius * np.exp(1j * t)
    fac = w - disk.center           # (1/2 pi i) dw = fac dtheta / (2 pi)
    val = np.mean(fb * fac / (w - z))
    if not deriv:
        return val
    der = np.mean(fb * fac / (w - z) ** 2)
    return val, der


def _indisk_factor(fb, disk):
    """Monic polynomial (ascending, in z) whose roots are the in-disk
    zeros of f, polished by Newton iteration on Cauchy-integral values."""
    N = _winding(fb)
    if N == 0:
        return np.array([1.0 + 0j])
    s = _power_sums(fb, disk, N)
    coeffs_centered = _newton_poly(s)
    roots = np.roots(coeffs_centered[::-1]) + disk.center
    for _ in range(6):
        for i, r in enumerate(roots):
            if abs(r - disk.center) > 0.995 * disk.radius:
                continue
            # deflate multiple roots: Newton on f / prod(other close roots)
            v, d = _cauchy_eval(fb, disk, r, deriv=True)
            close = roots[np.abs(roots - r) < 1e-5]
            if len(close) > 1:
                continue  # cluster: keep Newton-identity estimate
            if abs(d) > 1e-14:
                roots[i] = r - v / d
    b = np.array([1.0 + 0j])
    for r in roots:
        b = npoly.polymul(b, np.array([-r, 1.0]))
    return b


def _remainder(fb, b, disk):
    """Polynomial r (ascending, deg < deg b) with (f - r)/b analytic on
    the disk: r_j = (1/2 pi i) oint f(w) c_j(w) / b(w) dw where
    (b(w) - b(z)) / (w - z) = sum_j c_j(w) z^j."""
    d = len(b) - 1
    if d == 0:
        return np.array([0j])
    M = len(fb)
    t = np.linspace(0, 2 * np.pi, M, endpoint=False)
    w = disk.center + disk.radius * np.exp(1j * t)
    fac = w - disk.center           # (1/2 pi i) dw = fac dtheta / (2 pi)
    bw = npoly.polyval(w, b)
    rc = []
    for j in range(d):
        cj = npoly.polyval(w, b[j + 1:])   # sum_{i>j} b_i w^{i-1-j}
        rc.append(np.mean(fb * cj / bw * fac))
    return np.array(rc)


# -- the reduction --------------------------------------------------------

def _row_scale(S, j, cols):
    return max(np.abs(S[j, k]).max() for k in cols)


def _is_zero(fb, scale):
    m = np.abs(fb).max()
    if m < ZBAND * scale:
        return True
    if m < ZTOL * scale:
        raise IllConditionedReduction(
            f"entry magnitude {m:.2e} inside the ambiguity band")
    return False


def reduce(G, disk, M=1024):
    """Factor G = P H with P in lower-triangular polynomial normal form
    and H analytic and invertible on the closed disk.

    G may be an AnalyticMatrix, a NormalForm, or a nested coefficient
    list.  Returns (P, H) with H an AnalyticMatrix (Taylor-truncated).
    """
    if isinstance(G, NormalForm):
        G = G.as_analytic()
    if not isinstance(G, AnalyticMatrix):
        G = AnalyticMatrix(G)
    n = G.n
    zb = disk.boundary(M)
    Gb = G(zb)                      # (M, n, n)
    rng = np.random.default_rng(0)
    sample = disk.center + 0.7 * disk.radius * (
        rng.standard_normal(6) + 1j * rng.standard_normal(6)) / 2
    dets = np.linalg.det(G(sample))
    gscale = max(np.abs(Gb).max(), 1e-300)
    if np.abs(dets).max() < 1e-12 * gscale ** n:
        raise SingularInput("det G vanishes at all sample points")

    S = np.moveaxis(Gb, 0, -1).copy()   # (n, n, M): S[row, col, sample]
    diag = [None] * n
    lower = {}

    for j in range(n):
        cols = list(range(j, n))
        scale = _row_scale(S, j, cols)
        # Euclidean elimination among columns j..n on row j
        for _ in range(n * 8 + 8):
            active = [k for k in cols if not _is_zero(S[j, k], scale)]
            if not active:
                raise SingularInput(f"row {j} vanished: det G == 0 on disk")
            wind = {k: _winding(S[j, k]) for k in active}
            piv = min(active, key=lambda k: (wind[k], k))
            if piv != j:
                S[:, [j, piv]] = S[:, [piv, j]]
            others = [k for k in cols if k != j
                      and not _is_zero(S[j, k], scale)]
            if not others:
                break
            b = _indisk_factor(S[j, j], disk)
            for k in others:
                r = _remainder(S[j, k], b, disk)
                q = (S[j, k] - npoly.polyval(zb, r)) / S[j, j]
                S[:, k] -= q * S[:, j]
                S[j, k] = npoly.polyval(zb, r)
        else:
            raise IllConditionedReduction("elimination did not terminate")
        # normalize the diagonal to the monic in-disk factor
        b = _indisk_factor(S[j, j], disk)
        unit = npoly.polyval(zb, b) / S[j, j]
        S[:, j] *= unit
        S[j, j] = npoly.polyval(zb, b)
        diag[j] = b
        # reduce the entries left of the diagonal in row j
        for k in range(j):
            if _is_zero(S[j, k], max(scale, np.abs(S[j, k]).max())):
                S[j, k] = 0
                continue
            r = _remainder(S[j, k], b, disk)
            q = (S[j, k] - npoly.polyval(zb, r)) / S[j, j]
            S[:, k] -= q * S[:, j]
            S[j, k] = npoly.polyval(zb, r)
            if not _is_zero(np.atleast_1d(r), scale):
                lower[(j, k)] = r

    P = NormalForm(n, disk, diag, lower)
    # H = P^{-1} G on the boundary, Taylor-expanded about the center
    Pb = P(zb)
    Hb = np.linalg.solve(Pb, Gb)
    hmin = np.abs(np.linalg.det(Hb)).min()
    if hmin < 1e-10:
        raise IllConditionedReduction(
            f"H nearly singular on the boundary (|det H| min {hmin:.2e})")
    deg = max(G.degree_bound, 8)
    coeff = np.fft.fft(Hb, axis=0) / M    # coefficients in (z-c)/R powers
    ents = []
    for a in range(n):
        ents.append([])
        for bcol in range(n):
            cc = coeff[:deg + 1, a, bcol] / disk.radius ** np.arange(deg + 1)
            # recenter: polynomial in (z - c) -> polynomial in z
            poly = np.array([0j])
            shift = np.array([-disk.center, 1.0])
            power = np.array([1.0 + 0j])
            for ccoef in cc:
                poly = npoly.polyadd(poly, ccoef * power)
                power = npoly.polymul(power, shift)
            ents[a].append(poly)
    H = AnalyticMatrix(ents, degree_bound=deg)
    return P, H


def validate_shape(P: NormalForm, g=None):
    """Report-style validation of the NormalForm invariants."""
    failures = []
    d = P.degrees
    for j, p in enumerate(P.diag):
        if abs(p[-1] - 1) > 1e-10:
            failures.append(("diag", j, "not monic"))
        if len(p) > 1:
            roots = np.roots(p[::-1])
            if not np.all(P.disk.contains(roots)):
                failures.append(("diag", j, "root outside disk"))
    for (j, k), f in P.lower.items():
        if not (0 <= k < j < P.n):
            failures.append(("lower", (j, k), "not strictly lower"))
        elif len(f) - 1 > d[j] - 1:
            failures.append(("lower", (j, k),
                             f"degree {len(f)-1} exceeds d_j-1 = {d[j]-1}"))
    total = sum(d)
    if g is not None:
        if total != P.n * g:
            failures.append(("degree", None,
                             f"sum d_j = {total} != n g = {P.n * g}"))
    elif total % P.n != 0:
        failures.append(("degree", None,
                         f"sum d_j = {total} not a multiple of n"))
    return {"passed": not failures, "failures": failures, "degrees": d}


def semistability_flags(P: NormalForm):
    """Necessary semistability inequalities sum_{j<=r} d_j <= r g for
    r = 1..n-1 (g inferred from sum d_j = n g)."""
    d = P.degrees
    if sum(d) % P.n != 0:
        raise SingularInput("sum of degrees not a multiple of n")
    g = sum(d) // P.n
    return [sum(d[:r]) <= r * g for r in range(1, P.n)]
