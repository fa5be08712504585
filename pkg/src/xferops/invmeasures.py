"""Left and right fixed points of R and the measure-class tests.

The four classes for a probability measure lambda are

* L   : lambda R << lambda,
* L1  : lambda R = lambda,
* Fix : lambda o sigma^-1 = lambda,
* K1  : W = d(lambda R)/d(lambda) is constant on sigma-fibers (lambda-a.e.).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (CellMeasure, DyadicGrid, EPS_FP, GridFunction, compose, pushforward, rn_atoms,
                   rn_derivative, tv_distance)
from .errors import ChainMismatch, NotAbsolutelyContinuous, ZeroLimit
from .xferop import default_sigma

DEFAULT_TOL = 1e-10


def default_tol(R):
    """1e-10 for grid-exact dyadic branch operators, 10/M otherwise."""
    return DEFAULT_TOL if R.lift > 0 else 10.0 / R.grid.M


def _null_atol(lam):
    # masses this small are rounding noise, not support
    return 1e-15 * max(lam.total(), 1e-300) / lam.grid.M


@dataclass
class InvariantResult:
    measure: CellMeasure
    converged: bool
    iterations: int
    increment: float
    history: list = field(default_factory=list, repr=False)


def invariant_measure(R, init=None, max_iter=1000, tol=1e-12, min_iter=1):
    """Iterate lambda <- lambda R until the TV increment drops below tol.

    Parameters
    ----------
    R : TransferOp
    init : CellMeasure, optional
        Probability measure to start from (Lebesgue by default).
    max_iter : int
    tol : float
    min_iter : int
        Iterations performed before the stopping test is consulted.

    Returns
    -------
    InvariantResult
        The last iterate and convergence metadata; non-convergence is
        reported through ``converged=False``.
    """
    lam = CellMeasure.lebesgue(R.grid) if init is None else init
    if not lam.is_probability(1e-12):
        raise ValueError("init must be a probability measure")
    inc = math.inf
    hist = []
    for it in range(1, max_iter + 1):
        new = R.adjoint_measure(lam)
        inc = tv_distance(new, lam)
        hist.append(inc)
        lam = new
        if it >= min_iter and inc < tol:
            return InvariantResult(lam, True, it, inc, hist)
    return InvariantResult(lam, False, max_iter, inc, hist)


@dataclass
class HarmonicResult:
    h: GridFunction
    converged: bool
    iterations: int
    residual: float

    def normalized_to(self, lam):
        """h rescaled so that its integral against lam is 1."""
        from .core import integrate
        return self.h * (1.0 / integrate(self.h, lam))


def harmonic_function(R, init=None, max_iter=1000, tol=1e-10):
    """Power iteration f <- R f / ||R f||_inf towards a fixed point R h = h.

    Raises
    ------
    ZeroLimit
        If an iterate collapses to zero.
    """
    f = GridFunction.constant(R.grid) if init is None else init
    if np.min(np.real(f.values)) < -EPS_FP or f.sup_norm() == 0.0:
        raise ValueError("init must be nonnegative and nonzero")
    res = math.inf
    for it in range(1, max_iter + 1):
        g = R.apply(f)
        s = g.sup_norm()
        if s <= EPS_FP * max(f.sup_norm(), 1.0):
            raise ZeroLimit(f"iterate {it} collapsed to zero")
        g = g * (1.0 / s)
        res = (R.apply(g) - g).sup_norm() if g.level == f.level else math.inf
        f = g
        if res < tol:
            return HarmonicResult(f, True, it, res)
    return HarmonicResult(f, False, max_iter, res)


@dataclass
class MeasureClassReport:
    in_L: bool
    in_L1: bool
    in_fix: bool
    in_K1: bool | None
    W: GridFunction | None = None
    residuals: dict = field(default_factory=dict)

    def to_dict(self):
        return {"L": self.in_L, "L1": self.in_L1, "Fix": self.in_fix,
                "K1": "undetermined" if self.in_K1 is None else self.in_K1,
                "residuals": {k: float(v) for k, v in self.residuals.items()}}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def consistent(self):
        """The implications L1 => L and L1 => (Fix and K1)."""
        if self.in_L1 and not self.in_L:
            return False
        if self.in_L1 and not (self.in_fix and self.in_K1):
            return False
        return True


def fiber_residual(W, W_atoms, lam, sigma):
    """Max spread of W over sigma-fibers, ignoring lambda-null cells.

    The fiber of a point y is {tau_j(y)} for the inverse branches of
    sigma.  Cells are compared with cells and atoms with atoms.
    """
    try:
        inv = sigma.inverse_branches()
    except ValueError:
        inv = None
    if inv is None or len(inv) < 2:
        return 0.0
    level = W.level
    lift = sigma.lift or 0
    y = DyadicGrid(max(level - lift, 0)).midpoints
    pos = lam.refine(level).masses > _null_atol(lam)
    vals = []
    keep = []
    for a, b in inv:
        idx = W.grid.cell_index(a * y + b)
        vals.append(np.real(W.values[idx]))
        keep.append(pos[idx])
    vals = np.array(vals)
    keep = np.array(keep)
    hi = np.where(keep, vals, -np.inf).max(axis=0)
    lo = np.where(keep, vals, np.inf).min(axis=0)
    ok = keep.sum(axis=0) >= 2
    res = float(np.max(hi[ok] - lo[ok])) if np.any(ok) else 0.0
    if W_atoms:
        groups = {}
        for p, w in W_atoms.items():
            key = round(float(sigma(np.array([p]))[0]), 15)
            groups.setdefault(key, []).append(w)
        for ws in groups.values():
            if len(ws) > 1:
                res = max(res, max(ws) - min(ws))
    return res


def classify(R, lam, sigma=None, tol=None):
    """Membership of lambda in L(R), L1(R), Fix(sigma) and K1.

    The tolerance defaults to `default_tol(R)`.

    K1 is reported as None (undetermined) when lambda R is not
    absolutely continuous with respect to lambda.
    """
    sigma = default_sigma(R) if sigma is None else sigma
    tol = default_tol(R) if tol is None else tol
    lamR = R.adjoint_measure(lam)
    residuals = {}
    W = None
    W_atoms = None
    try:
        W = rn_derivative(lamR, lam, atol=_null_atol(lam))
        W_atoms = rn_atoms(lamR, lam, atol=_null_atol(lam))
        in_L = True
    except NotAbsolutelyContinuous:
        in_L = False
    residuals["L1"] = tv_distance(lamR, lam)
    residuals["Fix"] = tv_distance(pushforward(lam, sigma), lam)
    in_L1 = residuals["L1"] < tol
    in_fix = residuals["Fix"] < tol
    if in_L:
        residuals["K1"] = fiber_residual(W, W_atoms, lam, sigma)
        in_K1 = residuals["K1"] < tol
    else:
        in_K1 = None
    return MeasureClassReport(in_L, in_L1, in_fix, in_K1, W, residuals)


def rn_chain(R, lam, sigma=None, n=1, tol=1e-8, return_both=False):
    """d(lambda R^k)/d(lambda) for k = 1..n, computed two ways.

    The direct route iterates the adjoint; the product route multiplies
    Q o sigma^j with Q = d(lambda R)/d(lambda) taken one level finer, then
    averages back to the base grid with lambda-weights.

    Raises
    ------
    NotAbsolutelyContinuous
        If lambda R is not absolutely continuous with respect to lambda.
    ChainMismatch
        If the two routes differ by more than tol.
    """
    sigma = default_sigma(R) if sigma is None else sigma
    m = lam.level
    atol = _null_atol(lam)
    direct = []
    mu = lam
    for _ in range(n):
        mu = R.adjoint_measure(mu)
        direct.append(rn_derivative(mu, lam, atol))
    lift = sigma.lift or 0
    fine = m + lift
    Q = rn_derivative(R.adjoint_measure(lam, fine), lam.refine(fine), atol)
    product = []
    for k in range(n):
        lvl = fine + lift * k
        x = DyadicGrid(lvl).midpoints
        v = np.ones(len(x))
        y = x
        for _ in range(k + 1):
            v = v * np.real(Q.at(y))
            y = sigma(y)
        P = GridFunction(DyadicGrid(lvl), v).coarsen(m, lam.refine(lvl).masses)
        product.append(P)
    worst = max(float(np.max(np.abs(d.values - p.values))) for d, p in zip(direct, product))
    if worst > tol:
        raise ChainMismatch(f"direct and product routes differ by {worst:.3g}")
    return (direct, product) if return_both else direct


@dataclass
class Abs1Report:
    max_residual: float
    tol: float
    passed: bool
    lhs: GridFunction = field(repr=False)
    rhs: GridFunction = field(repr=False)

    def to_dict(self):
        return {"max_residual": self.max_residual, "tol": self.tol, "pass": self.passed}


def abs1_check(R, lam, mu, sigma=None, tol=None):
    """Compare d(lambda R)/d(mu R) with (d lambda/d mu) o sigma.

    Both sides are formed one level finer than the base grid (where
    the doubling-family adjoints are exact); cells that are mu R-null
    are excluded.
    """
    sigma = default_sigma(R) if sigma is None else sigma
    level = max(lam.level, mu.level)
    ratio = rn_derivative(lam, mu)                      # raises if lam is not << mu
    fine = level + (sigma.lift or 0)
    lamR = R.adjoint_measure(lam.refine(level), fine)
    muR = R.adjoint_measure(mu.refine(level), fine)
    lhs = rn_derivative(lamR, muR, _null_atol(muR))
    rhs = compose(ratio, sigma, fine)
    live = muR.masses > _null_atol(muR)
    diff = np.abs(np.real(lhs.values - rhs.values))
    worst = float(np.max(diff[live])) if np.any(live) else 0.0
    tol = (1e-10 if sigma.lift else 10.0 / R.grid.M) if tol is None else tol
    return Abs1Report(worst, tol, worst < tol, lhs, rhs)
