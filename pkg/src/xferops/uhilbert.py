"""Half-densities f sqrt(lambda), the isometry S_hat, its adjoint R_hat, and ergodic averages.

A half-density is stored by its cell amplitudes a_i = f(x_i) sqrt(mass_i);
two representatives are the same vector iff their amplitudes agree after
refinement to a common level (a child cell carries a_i / sqrt(2)).
Only atom-free measures are admitted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CellMeasure, DyadicGrid, EPS_FP, GridFunction, compose, rn_derivative
from .errors import WeightZeroLoss
from .maps import PiecewiseAffineMap

EQ_TOL = 1e-12


class HalfDensity:
    """The vector f sqrt(lambda) in the universal Hilbert space.

    Parameters
    ----------
    f : GridFunction
    lam : CellMeasure
        Atom-free reference measure.
    """

    __slots__ = ("f", "lam", "level", "amp")

    def __init__(self, f, lam):
        if lam.atoms:
            raise ValueError("half-densities are restricted to atom-free measures")
        level = max(f.level, lam.level)
        fl = f.refine(level)
        ml = lam.refine(level)
        self.f = fl
        self.lam = ml
        self.level = level
        amp = np.asarray(fl.values, dtype=complex) * np.sqrt(ml.masses)
        amp.setflags(write=False)
        self.amp = amp

    @classmethod
    def root(cls, lam):
        """1 sqrt(lambda)."""
        return cls(GridFunction.constant(lam.grid), lam)

    def __repr__(self):
        return f"HalfDensity(level={self.level}, norm={self.norm():.6g})"

    def amplitudes(self, level=None):
        level = self.level if level is None else level
        if level < self.level:
            raise ValueError("cannot coarsen amplitudes")
        k = 1 << (level - self.level)
        return np.repeat(self.amp / math.sqrt(k), k)

    def norm2(self):
        return float(np.sum(np.abs(self.amp) ** 2))

    def norm(self):
        return math.sqrt(self.norm2())

    def equals(self, other, tol=EQ_TOL):
        level = max(self.level, other.level)
        return bool(np.max(np.abs(self.amplitudes(level) - other.amplitudes(level))) < tol)

    def distance(self, other):
        level = max(self.level, other.level)
        return float(np.sqrt(np.sum(np.abs(self.amplitudes(level) - other.amplitudes(level)) ** 2)))

    def against(self, mu):
        """The density g with g sqrt(mu) equal to this vector.

        Raises
        ------
        WeightZeroLoss
            If the vector has amplitude on a mu-null cell.
        """
        level = max(self.level, mu.level)
        a = self.amplitudes(level)
        m = mu.refine(level).masses
        null = m <= 0.0
        if np.any(null & (np.abs(a) > EPS_FP * max(1.0, np.max(np.abs(a))))):
            raise WeightZeroLoss("vector charges a null cell of the new reference measure")
        g = np.where(null, 0.0, a / np.sqrt(np.where(null, 1.0, m)))
        return GridFunction(DyadicGrid(level), g)

    def express(self, mu):
        return HalfDensity(self.against(mu), mu)

    def __add__(self, other):
        level = max(self.level, other.level)
        return _from_amplitudes(self.amplitudes(level) + other.amplitudes(level), level)

    def scale(self, c):
        return HalfDensity(self.f * c, self.lam)


def _from_amplitudes(amp, level):
    """A representative with reference measure |amp|^2-normalized Lebesgue."""
    grid = DyadicGrid(level)
    lam = CellMeasure.lebesgue(grid)
    return HalfDensity(GridFunction(grid, amp * math.sqrt(grid.M)), lam)


def uh_inner(v, w):
    """<v, w> = sum_i conj(a_i) b_i on a common refinement."""
    level = max(v.level, w.level)
    return complex(np.sum(np.conj(v.amplitudes(level)) * w.amplitudes(level)))


def uh_inner_via(f1, lam1, f2, lam2, mu):
    """int conj(f1) f2 sqrt(dlam1/dmu dlam2/dmu) dmu for a dominating mu."""
    level = max(f1.level, f2.level, lam1.level, lam2.level, mu.level)
    d1 = rn_derivative(lam1.refine(level), mu.refine(level)).values
    d2 = rn_derivative(lam2.refine(level), mu.refine(level)).values
    a = np.conj(f1.refine(level).values) * f2.refine(level).values
    return complex(np.sum(a * np.sqrt(d1 * d2) * mu.refine(level).masses))


def s_hat(R, sigma, v):
    """S_hat(f sqrt(lambda)) = (f o sigma) sqrt(lambda R).

    lambda R is formed on level + lift, where f o sigma is exact.
    """
    level = v.level + (sigma.lift if sigma.lift is not None else 0)
    lamR = R.adjoint_measure(v.lam, level)
    return HalfDensity(compose(v.f, sigma, level), lamR)


def scaling_density(R, lam, lift=None):
    """W = d(lambda R)/d(lambda) on the level one lift finer than lambda."""
    lift = R.lift if lift is None else lift
    level = lam.level + lift
    return rn_derivative(R.adjoint_measure(lam, level), lam.refine(level))


def r_hat(R, v, W, lam):
    """R_hat(g sqrt(lambda)) = R(g / sqrt(W)) sqrt(lambda), 0 on {W = 0}.

    Parameters
    ----------
    R : TransferOp
    v : HalfDensity
        A vector expressible against lambda (refined to W's level).
    W : GridFunction
        d(lambda R)/d(lambda), one lift finer than lambda.
    lam : CellMeasure
        Base reference measure.

    Raises
    ------
    WeightZeroLoss
        If v has amplitude on a cell where W = 0.
    """
    fine = lam.refine(W.level)
    g = v.against(fine)
    Wv = np.real(W.values)
    zero = Wv <= 0.0
    gv = g.values
    if np.any(zero & (np.abs(gv) > EPS_FP)):
        raise WeightZeroLoss("positive amplitude where W = 0")
    ratio = np.where(zero, 0.0, gv / np.sqrt(np.where(zero, 1.0, Wv)))
    out = R.apply(GridFunction(W.grid, ratio))
    return HalfDensity(out, lam)


def p_K(R, lam, W=None):
    """Closed-form projection (1/sqrt(W)) sqrt(lambda R), 0 on {W = 0}."""
    W = scaling_density(R, lam) if W is None else W
    lamR = R.adjoint_measure(lam, W.level)
    Wv = np.real(W.values)
    inv = np.where(Wv > 0.0, 1.0 / np.sqrt(np.where(Wv > 0.0, Wv, 1.0)), 0.0)
    return HalfDensity(GridFunction(W.grid, inv), lamR)


@dataclass
class ProjectionReport:
    """Checks of the closed-form projection for one (R, lambda).

    amplitude_residual : distance of P sqrt(lambda) to 1_{W>0} sqrt(lambda)
    idempotence        : distance between P applied twice and once
    s_r_distance       : distance of S_hat R_hat sqrt(lambda) to the formula
    s_r_norm2          : ||S_hat R_hat sqrt(lambda)||^2
    """

    amplitude_residual: float
    idempotence: float
    formula_norm2: float
    s_r_distance: float
    s_r_norm2: float

    def to_dict(self):
        return dict(self.__dict__)


def projection_report(R, sigma, lam):
    W = scaling_density(R, lam)
    P = p_K(R, lam, W)
    fine = lam.refine(W.level)
    support = HalfDensity(GridFunction(W.grid, (np.real(W.values) > 0).astype(float)), fine)
    # the formula applied to the measure |P|^2 (which is lambda on {W > 0})
    mu = CellMeasure(DyadicGrid(P.level), np.abs(P.amp) ** 2)
    P2 = p_K(R, mu.coarsen(lam.level), None)
    SR = s_hat(R, sigma, r_hat(R, HalfDensity.root(lam), W, lam))
    return ProjectionReport(P.distance(support), P2.distance(P), P.norm2(), SR.distance(P), SR.norm2())


# ergodic averages

class LebesgueTransfer:
    """Transfer operator of sigma for Lebesgue measure, sum_j |tau_j'| f(tau_j x), on one level.

    For a dyadic sigma each inverse branch maps a cell of the level into
    a single cell of the same level, so the action on piecewise-constant
    functions is an exact gather.  Rows of a 2-d array are transformed
    independently.
    """

    def __init__(self, sigma, level):
        x = DyadicGrid(level).midpoints
        grid = DyadicGrid(level)
        inv = sigma.inverse_branches()
        self.level = level
        self.index = [grid.cell_index(a * x + b) for a, b in inv]
        self.weight = [abs(a) for a, _ in inv]

    def __call__(self, u):
        """Apply along axis 0."""
        out = u[self.index[0]] * self.weight[0]
        for idx, w in zip(self.index[1:], self.weight[1:]):
            out += u[idx] * w
        return out


def _density(lam, level):
    lam = lam.refine(level)
    if lam.atoms:
        raise ValueError("ergodic averages need an atom-free measure")
    return lam.masses * (1 << level)


def gram_products(W, sigma, lam, N):
    """G[k-1, l-1] = int T_k T_l dlambda for T_k = prod_{j<k} sqrt(W o sigma^j), k, l <= N.

    Uses int (u o sigma) v dx = int u L(v) dx with the Lebesgue transfer L
    of sigma, which maps piecewise-constant functions on a level to the
    same level; for dyadic sigma the result is exact for the
    piecewise-constant W.  Row a carries W for j < a and sqrt(W) after;
    rows are rescaled every step and their log-scales accumulated.
    """
    level = W.level
    L = LebesgueTransfer(sigma, level)
    Wv = np.real(W.values)[:, None]
    rW = np.sqrt(np.maximum(Wv, 0.0))
    rho = _density(lam, level)
    # column a-1 holds row a; cells run along axis 0 so gathers copy rows
    U = np.repeat(rho[:, None], N, axis=1)
    logscale = np.zeros(N)
    G = np.zeros((N, N))
    M = 1 << level
    for j in range(N):
        U[:, j:] *= Wv
        U[:, :j] *= rW
        vals = U.sum(axis=0) / M
        pos = vals > 0
        G[:, j] = np.where(pos, np.exp(np.log(np.where(pos, vals, 1.0)) + logscale), 0.0)
        U = L(U)
        if j % 8 == 7:
            s = U.max(axis=0)
            s = np.where(s > 0, s, 1.0)
            U /= s
            logscale += np.log(s)
    # G[a-1, j] = int T_a T_{j+1} for j + 1 >= a
    iu = np.triu_indices(N)
    out = np.zeros((N, N))
    out[iu] = G[iu]
    return out + np.triu(out, 1).T


@dataclass
class ErgodicResult:
    A_N: GridFunction
    norms: list
    product_terms: list
    N: int
    gram: np.ndarray = field(repr=False)

    def log_slope(self, tail=50):
        """Least-squares slope of log ||A_N|| against log N over the last `tail` values."""
        n = np.arange(1, len(self.norms) + 1)[-tail:]
        y = np.log(np.maximum(np.asarray(self.norms[-tail:]), 1e-300))
        return float(np.polyfit(np.log(n), y, 1)[0])

    def rows(self):
        return [(k, self.norms[k - 1], self.product_terms[k - 1]) for k in range(1, self.N + 1)]


def ergodic_average(W, sigma, N, lam=None):
    """A_N = (1/N) sum_{k<=N} prod_{j<k} sqrt(W o sigma^j) and ||A_k||_{L2(lambda)}, k <= N.

    The norms come from the exact Gram matrix of the product terms.  A_N
    itself oscillates far below the grid scale, so it is returned as its
    cell average: E[T_k | cells] = sqrt(W) E[E[T_{k-1} | cells] o sigma | cells]
    holds exactly when sigma maps each cell onto a union of cells.
    product_terms[k-1] = ||T_{k+1}|| / (k+1).
    """
    lam = CellMeasure.lebesgue(W.grid) if lam is None else lam
    G = gram_products(W, sigma, lam, N + 1)
    cum = np.cumsum(np.cumsum(G, axis=0), axis=1)
    k = np.arange(1, N + 1)
    norms = np.sqrt(np.maximum(np.diag(cum)[:N], 0.0)) / k
    prod = np.sqrt(np.maximum(np.diag(G)[1:N + 1], 0.0)) / (k + 1)
    rW = W.real().map_values(lambda v: np.sqrt(np.maximum(v, 0.0)))
    T = rW
    A = rW
    for n in range(1, N):
        T = rW * compose(T, sigma, T.level + (sigma.lift or 0)).coarsen(T.level)
        A = A * (n / (n + 1.0)) + T * (1.0 / (n + 1.0))
    return ErgodicResult(A, [float(v) for v in norms], [float(v) for v in prod], N, G)


def sqrt_norm_chain(W, sigma, lam, n, power=0.5):
    """[int (prod_{j<=k} W o sigma^j)^power dlambda] for k = 0..n.

    power = 1/2 gives the square-root chain (entries <= 1); power = 1
    gives the unsquared chain (entries = 1 when lambda R^k = ...).
    """
    level = W.level
    L = LebesgueTransfer(sigma, level)
    g = np.maximum(np.real(W.values), 0.0) ** power
    u = _density(lam, level)
    out = []
    for _ in range(n + 1):
        u = u * g
        out.append(float(np.sum(u) / (1 << level)))
        u = L(u)
    return out
