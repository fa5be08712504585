"""Multiresolution decompositions on the solenoid and the wavelet-filter layer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .core import DyadicGrid, GridFunction, CellMeasure, compose, inner, integrate
from .errors import NonConvergentCascade, NotDecomposable
from .maps import PiecewiseAffineMap, doubling
from .pathspace import Cylinder, fold, moment_exact, pairing, random_cylinder
from .rng import make_rng
from .xferop import (BranchOperator, BranchSystem, HaarDoubling, Normalized, check_pullout, m0_eval,
                     _coeffs_to_json)


# decomposition in L2(P)

@dataclass
class Decomposition:
    """f o pi_n = base o pi_0 + sum_k g_k o pi_k.

    Attributes
    ----------
    base : GridFunction
        R^n f (on the base level).
    details : list of GridFunction
        details[k-1] = g_k = R^{n-k} f - (R^{n-k+1} f) o sigma, on level
        base + k * lift.
    """

    base: GridFunction
    details: list
    n: int
    spec: object = field(repr=False)
    f: GridFunction = field(repr=False)

    def pieces(self):
        """Cylinder functions base o pi_0, g_1 o pi_1, ..., g_n o pi_n."""
        out = [Cylinder.at_slot(self.base, 0, self.spec.grid)]
        for k, g in enumerate(self.details, start=1):
            out.append(Cylinder.at_slot(g, k, self.spec.grid))
        return out

    def target(self):
        return Cylinder.at_slot(self.f, self.n, self.spec.grid)

    def reconstruction(self):
        total = self.pieces()[0]
        for p in self.pieces()[1:]:
            total = total + p
        return total

    def gram(self):
        """Pairwise L2(P) inner products of the pieces."""
        P = self.pieces()
        G = np.zeros((len(P), len(P)), dtype=complex)
        for i in range(len(P)):
            for j in range(i, len(P)):
                G[i, j] = pairing(self.spec, P[i], P[j])
                G[j, i] = np.conj(G[i, j])
        return G

    def norm2(self):
        return float(np.real(pairing(self.spec, self.target(), self.target())))

    def orthogonality(self):
        """Largest off-diagonal Gram entry."""
        G = self.gram()
        off = G - np.diag(np.diag(G))
        return float(np.max(np.abs(off))) if len(G) > 1 else 0.0

    def reconstruction_residual(self, tests=None, seed=0):
        """max_eta |<eta, f o pi_n> - <eta, reconstruction>| plus the norm mismatch."""
        if tests is None:
            rng = make_rng(seed)
            tests = [random_cylinder(self.spec.grid, rng, self.n, terms=1) for _ in range(3)]
            tests.append(self.target())
        tgt, rec = self.target(), self.reconstruction()
        res = max(abs(pairing(self.spec, t, tgt) - pairing(self.spec, t, rec)) for t in tests)
        energy = float(np.real(np.trace(self.gram())))
        return max(res, abs(energy - self.norm2()))

    def kernel_residuals(self):
        """||R'(g_k)||_inf for every detail."""
        op = Normalized(self.spec.R, self.spec.h)
        return [op.apply(g).sup_norm() for g in self.details]

    def energies(self):
        return [float(np.real(v)) for v in np.diag(self.gram())]


def decompose(spec, f, n):
    """Orthogonal multiresolution decomposition of f o pi_n.

    Every R'^j f is computed from f on level base + n * lift, so that each
    application of a dyadic operator is exact.

    Raises
    ------
    NotDecomposable
        If spec has no sigma or R fails the pull-out identity with it.
    """
    if spec.sigma is None:
        raise NotDecomposable("decomposition needs an endomorphism sigma")
    rep = check_pullout(spec.R, spec.sigma, trials=2, seed=0)
    if not rep.passed:
        raise NotDecomposable(f"pull-out residual {rep.max_residual:.3g}")
    op = Normalized(spec.R, spec.h)
    base = spec.grid.level
    lift = op.lift
    powers = [f.refine(max(f.level, base + n * lift))]   # powers[j] = R'^j f
    for _ in range(n):
        powers.append(op.apply(powers[-1]))
    details = []
    for k in range(1, n + 1):
        hi = powers[n - k]
        lo = compose(powers[n - k + 1], spec.sigma, hi.level)
        details.append(hi - lo)
    return Decomposition(powers[n], details, n, spec, f)


def parseval_n1(spec, f):
    """Residual of int R(f^2)h = int (R(f^2) - R(f)^2) h + int R(f)^2 h computed two ways.

    The left side is ||f o pi_1||^2 from nested quadrature, the right side
    the energies of the one-level decomposition.
    """
    d = decompose(spec, f, 1)
    lhs = d.norm2()
    op = Normalized(spec.R, spec.h)
    fa = f.refine(f.level + op.lift) if f.level == spec.grid.level else f
    Rf2 = op.apply(fa.abs() ** 2)
    Rf = op.apply(fa)
    hl = spec.lam.with_density(spec.h)
    detail = integrate(Rf2 - Rf.abs() ** 2, hl)
    base = integrate(Rf.abs() ** 2, hl)
    return abs(lhs - (detail + base)), abs(detail - d.energies()[1])


# Haar expansion in L2(dx)

@dataclass
class HaarExpansion:
    """f = sum_n detail_n + tail with detail_n = S^n R^n f - S^{n+1} R^{n+1} f.

    native[n] = R^n f - S R^{n+1} f lives on level m - n and lies in ker R.
    """

    f: GridFunction
    details: list
    native: list
    tail: GridFunction
    n_max: int

    def reconstruction(self):
        total = self.tail
        for d in self.details:
            total = total + d
        return total

    def reconstruction_residual(self):
        return (self.reconstruction() - self.f).sup_norm()

    def energies(self):
        lam = CellMeasure.lebesgue(self.f.grid)
        return [float(np.real(inner(d, d, lam))) for d in self.details]

    def tail_energy(self):
        return float(np.real(inner(self.tail, self.tail, CellMeasure.lebesgue(self.f.grid))))

    def parseval_residual(self):
        lam = CellMeasure.lebesgue(self.f.grid)
        total = float(np.real(inner(self.f, self.f, lam)))
        return abs(total - sum(self.energies()) - self.tail_energy())

    def kernel_residuals(self):
        """||R(native detail)||_inf per level."""
        R = HaarDoubling(DyadicGrid(0))
        return [R.apply(d).sup_norm() for d in self.native]

    def cumulative_energy(self):
        return list(np.cumsum(self.energies()))


def _S(g, sigma, times=1):
    for _ in range(times):
        g = compose(g, sigma)
    return g


def haar_expand(f, n_max):
    """Multiresolution expansion of f under the Haar operator and S g = g o sigma.

    R halves the level at each application (cell averaging) and S doubles
    it back, so every projection S^n R^n is exact on the grid.
    """
    m = f.level
    sigma = doubling()
    R = HaarDoubling(DyadicGrid(0))
    powers = [f]
    for _ in range(n_max + 1):
        powers.append(R.apply(powers[-1]))
    native = [powers[n] - compose(powers[n + 1], sigma, powers[n].level) for n in range(n_max + 1)]
    details = [_S(native[n], sigma, m - native[n].level) if native[n].level < m else native[n]
               for n in range(n_max + 1)]
    details = [d.refine(m) for d in details]
    tail = _S(powers[n_max + 1], sigma, m - powers[n_max + 1].level).refine(m)
    return HaarExpansion(f, details, native, tail, n_max)


def e1_form_diagnostic(exp, tol=1e-9):
    """Compare each detail with the two candidate closed forms.

    * projection form: detail_n / e_1(2^n x) is 2^-(n+1)-periodic,
    * alternative form: detail_n / e_1((2^n - 1) x) is 2^-n-periodic.

    Returns one dict per level with both residuals; a mismatch is
    reported, not raised.
    """
    f = exp.f
    x = f.grid.midpoints
    M = f.grid.M
    out = []
    for n, d in enumerate(exp.details):
        row = {"level": n}
        for name, freq, period_cells in (("projection_form", 2 ** n, M >> (n + 1)),
                                         ("alt_form", 2 ** n - 1, M >> n)):
            q = d.values * np.exp(-2j * np.pi * freq * x)
            if period_cells >= 1:
                res = float(np.max(np.abs(q - np.roll(q, -period_cells))))
            else:
                res = 0.0
            row[name] = res
        row["projection_form_ok"] = row["projection_form"] < tol
        row["alt_form_ok"] = row["alt_form"] < tol
        out.append(row)
    return out


def trig_split(exp):
    """Real split detail_n = c_n cos(2 pi 2^n x) + s_n sin(2 pi 2^n x).

    c_n = detail_n cos(.) and s_n = detail_n sin(.) are both
    2^-(n+1)-periodic for real f.
    """
    x = exp.f.grid.midpoints
    out = []
    for n, d in enumerate(exp.details):
        c = np.cos(2 * np.pi * 2 ** n * x)
        s = np.sin(2 * np.pi * 2 ** n * x)
        out.append((GridFunction(exp.f.grid, d.values * c), GridFunction(exp.f.grid, d.values * s)))
    return out


# wavelet filters

@dataclass(frozen=True)
class WaveletFilter:
    """Masking coefficients a_k and scale N; m0(t) = sum_k a_k e^{i 2 pi k t}."""

    coeffs: tuple
    N: int = 2

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(complex(c) for c in self.coeffs))
        if self.N < 2:
            raise ValueError("scale N must be at least 2")

    def m0(self, t):
        return m0_eval(self.coeffs, t)

    def m0_grid(self, grid):
        return GridFunction(grid, self.m0(grid.midpoints))

    def weight_sum(self, t):
        t = np.asarray(t, dtype=float)
        return sum(np.abs(self.m0((t + k) / self.N)) ** 2 for k in range(self.N)) / self.N

    def is_qmf(self, grid=None, tol=1e-10):
        """Quadrature-mirror condition: the induced operator is unital."""
        grid = DyadicGrid(10) if grid is None else grid
        return bool(np.max(np.abs(self.weight_sum(grid.midpoints) - 1.0)) < tol)

    def to_descriptor(self):
        return {"kind": "filter", "coeffs": _coeffs_to_json(self.coeffs), "N": self.N}


def haar_filter():
    r = 1.0 / math.sqrt(2.0)
    return WaveletFilter((r, r), 2)


def daubechies4():
    s3 = math.sqrt(3.0)
    c = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4.0 * math.sqrt(2.0))
    return WaveletFilter(tuple(c), 2)


def scale_map(N):
    """sigma(x) = N x mod 1."""
    if N == 2:
        return doubling()
    breaks = [k / N for k in range(N + 1)]
    return PiecewiseAffineMap(breaks, [float(N)] * N, [-float(k) for k in range(N)], f"scale{N}")


def filter_operator(w, grid=None):
    """R_{m0} f(t) = (1/N) sum_k |m0((t+k)/N)|^2 f((t+k)/N) as a branch operator."""
    grid = DyadicGrid(12) if grid is None else grid
    N = w.N
    branches = tuple((1.0 / N, k / N) for k in range(N))
    weights = tuple((lambda t, k=k: np.abs(w.m0((t + k) / N)) ** 2 / N) for k in range(N))
    system = BranchSystem(branches, weights, scale_map(N), True)
    return BranchOperator(grid, system, "filter", w.to_descriptor())


def cascade_fourier(w, t, K=30):
    """phi_hat(t) = prod_{k=1..K} m0(t / N^k) / sqrt(N).

    Each factor is divided by m0(0) itself (equal to sqrt(N) within
    1e-8), so phi_hat(0) = 1 holds exactly in floating point.

    Raises
    ------
    NonConvergentCascade
        If |m0(0) - sqrt(N)| > 1e-8.
    """
    rN = math.sqrt(w.N)
    if abs(w.m0(0.0) - rN) > 1e-8:
        raise NonConvergentCascade(f"m0(0) = {complex(w.m0(0.0))}, expected {rN}")
    norm = complex(w.m0(0.0))
    t = np.asarray(t, dtype=float)
    out = np.ones(t.shape, dtype=complex)
    for k in range(1, K + 1):
        out = out * (w.m0(t / float(w.N) ** k) / norm)
    return out


def lattice_tail(w, t, T, K=30):
    """Estimated sum over |n| > T of |phi_hat(t + n)|^2.

    Uses |phi_hat(s)|^2 ~ c(s) / s^2 with c frozen at the truncation
    points, summed with the Hurwitz zeta function; exact for Haar.
    """
    t = np.asarray(t, dtype=float)
    cp = np.abs(cascade_fourier(w, t + T, K)) ** 2 * (t + T) ** 2
    cm = np.abs(cascade_fourier(w, t - T, K)) ** 2 * (t - T) ** 2
    return cp * zeta(2.0, T + 1.0 + t) + cm * zeta(2.0, T + 1.0 - t)


def h_phi(w, grid, T=64, K=30, tail=True):
    """h_phi(t) = sum_n |phi_hat(t + n)|^2 on the grid midpoints.

    The lattice sum runs over |n| <= T; with `tail` the remainder is
    added from `lattice_tail` (without it the truncation error is of
    order 2 / (pi^2 T)).
    """
    t = grid.midpoints
    acc = np.zeros(grid.M)
    for n in range(-T, T + 1):
        acc += np.abs(cascade_fourier(w, t + n, K)) ** 2
    if tail:
        acc += lattice_tail(w, t, T, K)
    return GridFunction(grid, acc)


@dataclass
class HarmonicFilterReport:
    h_dev: float
    fixed_point_residual: float

    def to_dict(self):
        return {"h_phi_minus_1": self.h_dev, "R_h_minus_h": self.fixed_point_residual}


def h_phi_check(w, level=12, T=64, K=30):
    """||h_phi - 1||_inf and ||R_{m0} h_phi - h_phi||_inf.

    h_phi is built one level finer so R_{m0} sees its branch points exactly.
    """
    fine = h_phi(w, DyadicGrid(level + 1), T, K)
    coarse = h_phi(w, DyadicGrid(level), T, K)
    R = filter_operator(w, DyadicGrid(level))
    Rh = R.apply(fine)
    return HarmonicFilterReport(float(np.max(np.abs(coarse.values - 1.0))),
                                float(np.max(np.abs(Rh.values - coarse.values))))


@dataclass
class K0Report:
    lhs: list
    rhs: list
    lhs_truncated: list
    tail_bound: float
    tol: float
    passed: list

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "lhs_truncated": self.lhs_truncated,
                "tail_bound": self.tail_bound, "tol": self.tol, "pass": self.passed}


def random_periodic(rng, degree=3):
    """Random trigonometric polynomial coefficients (index -degree..degree)."""
    c = rng.normal(size=2 * degree + 1) + 1j * rng.normal(size=2 * degree + 1)
    return c / np.sqrt(np.sum(np.abs(c) ** 2))


def _eval_periodic(c, t):
    d = (len(c) - 1) // 2
    k = np.arange(-d, d + 1)
    return np.exp(2j * np.pi * np.multiply.outer(t, k)) @ c


def k0_isometry_check(w, trials=3, seed=None, T=64, K=30, per_unit=256, level=12, tol=1e-3,
                      functions=None):
    """int_R |f phi_hat|^2 dt against int_0^1 |f|^2 h_phi dt for 1-periodic f.

    The real-line side is a midpoint rule on [-T, T + 1) with `per_unit`
    nodes per unit interval plus the tail estimate of `lattice_tail`;
    the tail of the raw truncation is bounded by sup|f|^2 * 2 / (pi^2 T)
    for Haar-type decay.  `functions` may supply coefficient vectors
    directly (the zero vector gives 0 = 0).
    """
    rng = make_rng(seed)
    fs = list(functions) if functions is not None else [random_periodic(rng) for _ in range(trials)]
    u = (np.arange(per_unit) + 0.5) / per_unit
    s = np.concatenate([u + n for n in range(-T, T + 1)])       # the window [-T, T + 1)
    phi2 = np.abs(cascade_fourier(w, s, K)) ** 2
    tail = lattice_tail(w, u, T, K)
    grid = DyadicGrid(level)
    hp = h_phi(w, grid, T, K)
    lhs, rhs, raw, ok = [], [], [], []
    for c in fs:
        c = np.asarray(c, dtype=complex)
        f2 = np.abs(_eval_periodic(c, s)) ** 2
        trunc = float(np.sum(f2 * phi2) / per_unit)
        fu2 = np.abs(_eval_periodic(c, u)) ** 2
        corr = float(np.sum(fu2 * tail) / per_unit)
        r = float(np.sum(np.abs(_eval_periodic(c, grid.midpoints)) ** 2 * hp.values) / grid.M)
        raw.append(trunc)
        lhs.append(trunc + corr)
        rhs.append(r)
        ok.append(abs(trunc + corr - r) < tol)
    return K0Report(lhs, rhs, raw, 2.0 / (math.pi ** 2 * T), tol, ok)
