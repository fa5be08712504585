"""Affine iterated function systems, their equilibrium measures, and stability tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import CellMeasure, DyadicGrid, pushforward_affine, tv_distance
from .errors import DomainError
from .maps import PiecewiseAffineMap, u_map
from .rng import make_rng
from .xferop import BranchIFS, BranchSystem, KernelSpec, frozen_kernel, identity_kernel, me2_kernel

__all__ = ["AffineIFS", "KernelSpec", "u_family", "equilibrium_measure", "EquilibriumResult",
           "equilibrium_cells", "moment_oracle", "chaos_game", "histogram", "multinomial_tv_bound",
           "stability_check", "g_stability_test", "scaling_dimension", "hellinger_affinity", "hellinger_trend",
           "me2_kernel", "frozen_kernel", "identity_kernel"]


@dataclass(frozen=True)
class AffineIFS:
    """Maps tau_j(x) = a_j x + b_j with probabilities p_j and an optional endomorphism.

    Parameters
    ----------
    maps : tuple of (a, b)
        Contractions sending [0, 1) into itself.
    weights : tuple of float
        Positive, summing to one.
    sigma : PiecewiseAffineMap, optional
    stable : bool
        Claim sigma o tau_j = id; checked on construction.
    exact : tuple, optional
        The same (a, b) pairs as Fractions, used by `moment_oracle`.
    """

    maps: tuple
    weights: tuple
    sigma: PiecewiseAffineMap | None = None
    stable: bool = False
    exact: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.maps) != len(self.weights) or not self.maps:
            raise ValueError("one weight per map")
        if any(p <= 0 for p in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        for a, b in self.maps:
            if not abs(a) < 1.0:
                raise ValueError(f"map ({a}, {b}) is not a contraction")
            lo, hi = sorted((b, a + b))
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"map ({a}, {b}) leaves [0, 1)")
        if self.stable:
            if self.sigma is None:
                raise ValueError("a stable IFS needs sigma")
            rep = stability_check(self, self.sigma)
            if not rep.passed:
                raise ValueError(f"sigma o tau_j != id (residual {rep.max_residual:.3g})")

    @property
    def contraction(self):
        return max(abs(a) for a, _ in self.maps)

    def transfer_operator(self, grid):
        """R f = sum_j p_j f o tau_j as a branch operator."""
        system = BranchSystem(tuple((float(a), float(b)) for a, b in self.maps),
                              tuple(float(p) for p in self.weights), self.sigma, self.stable)
        return BranchIFS(grid, system)

    def step(self, mu):
        """sum_j p_j mu o tau_j^{-1}."""
        out = None
        for (a, b), p in zip(self.maps, self.weights):
            img = pushforward_affine(mu, a, b).scaled(p)
            out = img if out is None else _add(out, img)
        return out


def _add(lam, mu):
    atoms = dict(lam.atoms)
    for p, w in mu.atoms:
        atoms[p] = atoms.get(p, 0.0) + w
    return CellMeasure(lam.grid, lam.masses + mu.masses, sorted(atoms.items()),
                       approximate=lam.approximate or mu.approximate)


def u_family(u):
    """tau_0 = u x, tau_1 = (1 - u) x + u, weights 1/2, with the matching expanding sigma.

    `u` may be a Fraction or a string such as "1/3" for exact moments.
    """
    uf = Fraction(u) if isinstance(u, (str, Fraction, int)) else Fraction(u).limit_denominator(10 ** 12)
    uu = float(uf)
    if not 0.0 < uu < 1.0:
        raise DomainError("u must lie in (0, 1)")
    return AffineIFS(((uu, 0.0), (1.0 - uu, uu)), (0.5, 0.5), u_map(uu), True,
                     ((uf, Fraction(0)), (1 - uf, uf)))


@dataclass
class EquilibriumResult:
    measure: CellMeasure
    converged: bool
    iterations: int
    increment: float


def equilibrium_measure(ifs, grid=None, tol=1e-12, max_iter=5000, init=None):
    """Fixed-point iteration mu <- sum_j p_j mu o tau_j^{-1} on cell masses from a uniform start.

    Images of cells are spread over the grid by exact interval overlap, so
    non-dyadic maps cause no drift other than the cell-uniform model.
    """
    grid = DyadicGrid(12) if grid is None else grid
    mu = CellMeasure.lebesgue(grid) if init is None else init
    inc = math.inf
    for it in range(1, max_iter + 1):
        new = ifs.step(mu)
        inc = tv_distance(new, mu)
        mu = new
        if inc < tol:
            return EquilibriumResult(mu, True, it, inc)
    return EquilibriumResult(mu, False, max_iter, inc)


def equilibrium_cells(ifs, level, extra=8, tol=1e-12, max_level=18):
    """Equilibrium cell masses on `level`, iterated up to `extra` levels finer and summed back.

    For singular equilibria the cell-uniform model on one level has an
    O(1) relative error per cell; refining first removes most of it.
    The working level is capped at `max_level`.
    """
    fine = max(level, min(level + extra, max_level))
    return equilibrium_measure(ifs, DyadicGrid(fine), tol).measure.coarsen(level)


def moment_oracle(ifs, order=4):
    """Exact moments int x^k dmu, k = 0..order, of the equilibrium measure.

    Solves m_k = sum_j p_j sum_i C(k, i) a_j^i b_j^(k-i) m_i, which is
    triangular in k, in rational arithmetic.
    """
    maps = ifs.exact if ifs.exact is not None else tuple(
        (Fraction(a), Fraction(b)) for a, b in ifs.maps)
    ps = [Fraction(p).limit_denominator(10 ** 12) for p in ifs.weights]
    m = [Fraction(1)]
    for k in range(1, order + 1):
        diag = sum(p * a ** k for p, (a, _) in zip(ps, maps))
        rhs = sum(p * math.comb(k, i) * a ** i * b ** (k - i) * m[i]
                  for p, (a, b) in zip(ps, maps) for i in range(k))
        m.append(rhs / (1 - diag))
    return m


def chaos_game(ifs, N, burn_in=64, rng=None, n_orbits=None):
    """N samples from random-branch orbits x <- tau_J(x), J ~ p.

    `n_orbits` parallel orbits (default: N, one sample per orbit, so the
    samples are independent) each discard `burn_in` steps from x = 1/2.
    """
    rng = make_rng(rng)
    N = int(N)
    n_orbits = N if n_orbits is None else int(n_orbits)
    steps = -(-N // n_orbits)
    A = np.array([a for a, _ in ifs.maps], dtype=float)
    B = np.array([b for _, b in ifs.maps], dtype=float)
    p = np.asarray(ifs.weights, dtype=float)
    x = np.full(n_orbits, 0.5)
    out = np.empty((steps, n_orbits))
    for t in range(burn_in + steps):
        j = rng.choice(len(p), size=n_orbits, p=p) if len(p) > 1 else np.zeros(n_orbits, dtype=int)
        x = A[j] * x + B[j]
        if t >= burn_in:
            out[t - burn_in] = x
    return out.reshape(-1)[:N]


def histogram(samples, grid):
    """Empirical cell masses of samples in [0, 1)."""
    idx = grid.cell_index(np.asarray(samples))
    counts = np.bincount(idx, minlength=grid.M).astype(float)
    return CellMeasure(grid, counts / max(len(samples), 1))


def multinomial_tv_bound(mu, N, z=3.0):
    """E[TV] + z sd[TV] for the empirical measure of N iid samples from mu.

    Uses the normal approximation |X_i/N - p_i| ~ |Z| s_i per cell.
    """
    p = mu.masses
    s2 = p * (1.0 - p) / N
    mean = 0.5 * np.sum(np.sqrt(2.0 * s2 / np.pi))
    sd = 0.5 * math.sqrt(float(np.sum(s2)) * (1.0 - 2.0 / math.pi))
    return float(mean + z * sd)


@dataclass
class StabilityReport:
    max_residual: float
    tol: float
    passed: bool
    fraction_violating: float = 0.0

    def to_dict(self):
        return {"max_residual": self.max_residual, "tol": self.tol, "pass": self.passed,
                "fraction_violating": self.fraction_violating}


def stability_check(ifs, sigma, level=12, tol=1e-10):
    """max_j max_x |sigma(tau_j(x)) - x| over the midpoints of a grid."""
    x = DyadicGrid(level).midpoints
    worst = max(float(np.max(np.abs(sigma(a * x + b) - x))) for a, b in ifs.maps)
    return StabilityReport(worst, tol, worst < tol)


def g_stability_test(spec, sigma, samples=10000, rng=None, tol=1e-10):
    """Empirical check of sigma(G(x, y)) = x for x ~ Lebesgue and y ~ nu."""
    rng = make_rng(rng)
    x = rng.random(samples)
    u, i = spec.sample(samples, rng)
    res = np.abs(sigma(spec.G(x, u, i)) - x)
    worst = float(np.max(res))
    return StabilityReport(worst, tol, worst < tol, float(np.mean(res > tol)))


def scaling_dimension(u):
    """D(u) = -ln 2 / ln u for 0 < u <= 1/2."""
    u = float(u)
    if not 0.0 < u <= 0.5:
        raise DomainError("scaling dimension is defined for 0 < u <= 1/2")
    return -math.log(2.0) / math.log(u)


def hellinger_affinity(mu, nu):
    """sum_i sqrt(mu_i nu_i) over cells."""
    return float(np.sum(np.sqrt(mu.masses * nu.refine(mu.level).masses
                                if nu.level <= mu.level else
                                mu.refine(nu.level).masses * nu.masses)))


def hellinger_trend(u1, u2, levels=(6, 8, 10, 12), tol=1e-13):
    """Cell-mass Hellinger affinity of the two u-family equilibria, per grid level.

    A decreasing sequence indicates (without deciding) mutual singularity.
    """
    out = []
    for lvl in levels:
        g = DyadicGrid(lvl)
        a = equilibrium_measure(u_family(u1), g, tol).measure
        b = equilibrium_measure(u_family(u2), g, tol).measure
        out.append((lvl, hellinger_affinity(a, b)))
    return out
