"""Concrete transfer operators R and their action on measures.

Every operator acts on the piecewise-constant function a GridFunction
represents and is evaluated exactly at the midpoints of its output grid.
Branch operators whose branches are dyadic contractions by 2**-k have
`lift = k`: an input on level L produces output on level max(m, L - k),
so a one-level-finer input such as f o sigma is used without loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import CellMeasure, DyadicGrid, EPS_FP, GridFunction, compose, safe_divide
from .errors import HarmonicZeroDivision, NotHarmonic
from .maps import PiecewiseAffineMap, doubling, identity, u_map
from .rng import make_rng


def m0_eval(coeffs, t):
    """Trigonometric polynomial m0(t) = sum_k a_k exp(2 pi i k t)."""
    t = np.asarray(t, dtype=float)
    k = np.arange(len(coeffs))
    return np.exp(2j * np.pi * np.multiply.outer(t, k)) @ np.asarray(coeffs, dtype=complex)


def _coeffs_to_json(coeffs):
    out = []
    for c in coeffs:
        c = complex(c)
        out.append(c.real if c.imag == 0 else [c.real, c.imag])
    return out


def coeffs_from_json(items):
    return [complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c) for c in items]


class TransferOp:
    """Positive operator on grid functions (base class).

    Attributes
    ----------
    grid : DyadicGrid
        Base grid; outputs are never coarser than this.
    lift : int
        Levels consumed by the branch maps (0 for non-dyadic kinds).
    kind : str
    """

    kind = "abstract"
    lift = 0

    def __init__(self, grid):
        self.grid = grid

    def __repr__(self):
        return f"{type(self).__name__}(level={self.grid.level})"

    def out_level(self, in_level):
        return max(self.grid.level, in_level - self.lift)

    def apply(self, f):
        out = self.out_level(f.level)
        return GridFunction(DyadicGrid(out), self._apply_values(f.values, f.level, out))

    def apply_rows(self, vals, in_level):
        """Apply to a stack of value rows of shape (..., 2**in_level)."""
        out = self.out_level(in_level)
        return self._apply_values(np.asarray(vals), in_level, out), out

    def _apply_values(self, vals, in_level, out_level):
        raise NotImplementedError

    def adjoint_measure(self, lam, level=None):
        raise NotImplementedError

    @property
    def unital(self):
        one = GridFunction.constant(self.grid)
        return bool(np.max(np.abs(self.apply(one).values - 1.0)) < 1e-12)

    def to_descriptor(self):
        raise NotImplementedError

    def at_level(self, level):
        """Same operator on another base grid."""
        return from_descriptor(self.to_descriptor(), level)


def _eval_weight(w, x):
    if isinstance(w, GridFunction):
        return np.real_if_close(w.at(x))
    if callable(w):
        return np.broadcast_to(np.asarray(w(x), dtype=float), np.shape(x))
    return np.full(np.shape(x), float(w))


def _branch_lift(branches):
    ks = set()
    for a, b in branches:
        if a <= 0:
            return 0
        k = -math.log2(a)
        if k != int(k) or k < 1:
            return 0
        scale = 2.0 ** k
        if b * scale != int(b * scale):
            return 0
        ks.add(int(k))
    return ks.pop() if len(ks) == 1 else 0


@dataclass(frozen=True)
class BranchSystem:
    """Affine branches tau_j(x) = a_j x + b_j with weights p_j(x).

    Weights may be constants, callables of x, or GridFunctions.
    """

    branches: tuple
    weights: tuple
    endo: PiecewiseAffineMap | None = None
    stable: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.branches) != len(self.weights):
            raise ValueError("one weight per branch")
        if self.stable and self.endo is not None:
            x = DyadicGrid(10).midpoints
            for a, b in self.branches:
                if np.max(np.abs(self.endo(a * x + b) - x)) > 1e-12:
                    raise ValueError("branch system flagged stable but sigma o tau_j != id")

    def weight_sum(self, x):
        return sum(_eval_weight(w, x) for w in self.weights)


class BranchOperator(TransferOp):
    """R f(x) = sum_j w_j(x) f(tau_j(x))."""

    kind = "branch_ifs"

    def __init__(self, grid, system, kind=None, descriptor=None):
        super().__init__(grid)
        self.system = system
        self.branches = tuple((float(a), float(b)) for a, b in system.branches)
        self.weights = tuple(system.weights)
        self.lift = _branch_lift(self.branches)
        if kind is not None:
            self.kind = kind
        self._descriptor = descriptor

    @property
    def endo(self):
        return self.system.endo

    def branch_weights(self, x):
        """Weights at points x, shape (J, len(x))."""
        return np.stack([_eval_weight(w, x) for w in self.weights])

    def _apply_values(self, vals, in_level, out_level):
        x = DyadicGrid(out_level).midpoints
        w = self.branch_weights(x)
        gin = DyadicGrid(in_level)
        out = 0.0
        for j, (a, b) in enumerate(self.branches):
            out = out + w[j] * vals[..., gin.cell_index(a * x + b)]
        return out

    def adjoint_measure(self, lam, level=None):
        level = lam.level if level is None else level
        x = lam.grid.midpoints
        w = self.branch_weights(x)
        gout = DyadicGrid(level)
        masses = np.zeros(gout.M)
        for j, (a, b) in enumerate(self.branches):
            masses += np.bincount(gout.cell_index(a * x + b), weights=lam.masses * w[j], minlength=gout.M)
        atoms = []
        for p, m in lam.atoms:
            pw = self.branch_weights(np.array([p]))[:, 0]
            for j, (a, b) in enumerate(self.branches):
                if pw[j] != 0.0:
                    atoms.append((a * p + b, m * float(pw[j])))
        return CellMeasure(gout, masses, atoms)

    def to_descriptor(self):
        if self._descriptor is not None:
            return dict(self._descriptor)
        if not all(np.isscalar(w) for w in self.weights):
            raise ValueError("branch operator with function weights has no descriptor")
        return {"kind": "branch_ifs", "branches": [list(b) for b in self.branches],
                "weights": [float(w) for w in self.weights]}


def HaarDoubling(grid):
    """R f(x) = (f(x/2) + f((x+1)/2)) / 2."""
    system = BranchSystem(((0.5, 0.0), (0.5, 0.5)), (0.5, 0.5), doubling(), True)
    return BranchOperator(grid, system, "haar_doubling", {"kind": "haar_doubling"})


def _cos2(x):
    return np.cos(np.pi * x / 2.0) ** 2


def _sin2(x):
    return np.sin(np.pi * x / 2.0) ** 2


def FilterDoubling(grid, m0_coeffs=None):
    """R f(x) = |m0(x/2)|^2/2 f(x/2) + |m0((x+1)/2)|^2/2 f((x+1)/2).

    Without coefficients this is the cos^2 / sin^2 operator written in
    closed form; with coefficients the weights come from m0.
    """
    if m0_coeffs is None:
        weights = (_cos2, _sin2)
        desc = {"kind": "filter_doubling"}
    else:
        c = tuple(complex(v) for v in m0_coeffs)
        weights = (lambda x, c=c: np.abs(m0_eval(c, x / 2.0)) ** 2 / 2.0,
                   lambda x, c=c: np.abs(m0_eval(c, (x + 1.0) / 2.0)) ** 2 / 2.0)
        desc = {"kind": "filter_doubling", "m0_coeffs": _coeffs_to_json(c)}
    system = BranchSystem(((0.5, 0.0), (0.5, 0.5)), weights, doubling(), True)
    return BranchOperator(grid, system, "filter_doubling", desc)


def BranchIFS(grid, system, descriptor=None):
    return BranchOperator(grid, system, "branch_ifs", descriptor)


def UFamily(grid, u):
    """tau_0 = u x, tau_1 = (1-u) x + u with weights 1/2."""
    u = float(u)
    system = BranchSystem(((u, 0.0), (1.0 - u, u)), (0.5, 0.5), u_map(u), True)
    return BranchOperator(grid, system, "u_family", {"kind": "u_family", "u": u})


class MeanIntegral(TransferOp):
    """R f(x) = (1/2) [ (1/x) int_0^x f + (1/(1-x)) int_x^1 f ].

    Integrals of the piecewise-constant input are exact prefix sums.
    """

    kind = "mean_integral"

    def _apply_values(self, vals, in_level, out_level):
        gin = DyadicGrid(in_level)
        x = DyadicGrid(out_level).midpoints
        Mi = gin.M
        prefix = np.concatenate([np.zeros(vals.shape[:-1] + (1,), dtype=vals.dtype),
                                 np.cumsum(vals, axis=-1) / Mi], axis=-1)
        c = gin.cell_index(x)
        F = prefix[..., c] + vals[..., c] * (x - c / Mi)
        total = prefix[..., -1:]
        return 0.5 * (F / x + (total - F) / (1.0 - x))

    def adjoint_measure(self, lam, level=None):
        if level is not None and level != lam.level:
            lam = lam.refine(level)
        g = lam.grid
        x = g.midpoints
        src = lam.masses.copy()
        for p, m in lam.atoms:
            src[g.cell_index(p)] += m
        a = src / x
        b = src / (1.0 - x)
        above = np.cumsum(a[::-1])[::-1] - a       # sum over i > k
        below = np.cumsum(b) - b                   # sum over i < k
        masses = (above + below + 0.5 * a + 0.5 * b) / (2.0 * g.M)
        return CellMeasure(g, masses)

    def to_descriptor(self):
        return {"kind": "mean_integral"}


@dataclass(frozen=True)
class KernelSpec:
    """G(x, (u, i)) with i ~ p and u | i ~ uniform or a point mass.

    Parameters
    ----------
    G : callable
        Vectorized G(x, u, i).
    p : tuple of float
        Weights of the discrete factor.
    cond : tuple
        Per component, "uniform" or ("point", u0).
    name : str
    """

    G: object
    p: tuple
    cond: tuple
    name: str = "kernel"

    def __post_init__(self):
        if any(q <= 0 for q in self.p) or abs(sum(self.p) - 1.0) > 1e-12:
            raise ValueError("kernel weights must be positive and sum to 1")

    def quadrature(self, n_quad):
        """Nodes (u, i) and weights of the product midpoint rule."""
        us, js, ws = [], [], []
        for i, (pi, c) in enumerate(zip(self.p, self.cond)):
            if c == "uniform":
                u = (np.arange(n_quad) + 0.5) / n_quad
                us.append(u)
                ws.append(np.full(n_quad, pi / n_quad))
            else:
                us.append(np.array([float(c[1])]))
                ws.append(np.array([pi]))
            js.append(np.full(len(us[-1]), i))
        return np.concatenate(us), np.concatenate(js), np.concatenate(ws)

    def sample(self, n, rng):
        i = rng.choice(len(self.p), size=n, p=np.asarray(self.p))
        u = rng.random(n)
        for k, c in enumerate(self.cond):
            if c != "uniform":
                u = np.where(i == k, float(c[1]), u)
        return u, i

    def to_descriptor(self):
        if self.name == "me2":
            return "me2"
        if self.name.startswith("frozen:"):
            return {"u0": float(self.name.split(":", 1)[1])}
        if self.name == "identity":
            return "identity"
        raise ValueError("kernel has no descriptor")


def _me2_G(x, u, i):
    return np.where(i == 0, u * x, (1.0 - u) * x + u)


def me2_kernel():
    """G(x, (u, 0)) = u x, G(x, (u, 1)) = (1 - u) x + u; nu = Lebesgue x fair coin."""
    return KernelSpec(_me2_G, (0.5, 0.5), ("uniform", "uniform"), "me2")


def frozen_kernel(u0):
    """The me2 kernel with u frozen at u0 (the u-family IFS)."""
    u0 = float(u0)
    return KernelSpec(_me2_G, (0.5, 0.5), (("point", u0), ("point", u0)), f"frozen:{u0!r}")


def identity_kernel():
    return KernelSpec(lambda x, u, i: x + 0.0 * u, (1.0,), ("uniform",), "identity")


class KernelG(TransferOp):
    """R f(x) = int f(G(x, y)) dnu(y).

    Product midpoint quadrature by default; `mc_samples` switches to a
    fixed Monte Carlo sample of nu drawn from `seed`.
    """

    kind = "kernel_g"

    def __init__(self, grid, kernel, n_quad=None, mc_samples=None, seed=None):
        super().__init__(grid)
        self.kernel = kernel
        self.n_quad = int(n_quad or grid.M)
        self.mc_samples = mc_samples
        self.seed = seed
        if mc_samples:
            u, i = kernel.sample(int(mc_samples), make_rng(seed))
            self._nodes = (u, i, np.full(len(u), 1.0 / len(u)))
        else:
            self._nodes = kernel.quadrature(self.n_quad)

    def _apply_values(self, vals, in_level, out_level):
        gin = DyadicGrid(in_level)
        x = DyadicGrid(out_level).midpoints
        u, i, w = self._nodes
        out = np.zeros(vals.shape[:-1] + (len(x),), dtype=vals.dtype)
        step = max(1, (1 << 22) // len(x))
        for s in range(0, len(u), step):
            pts = self.kernel.G(x[None, :], u[s:s + step, None], i[s:s + step, None])
            out = out + np.einsum("q,...qn->...n", w[s:s + step], vals[..., gin.cell_index(pts)])
        return out

    def adjoint_measure(self, lam, level=None):
        level = lam.level if level is None else level
        gout = DyadicGrid(level)
        x = lam.grid.midpoints
        src = lam.masses.copy()
        for p, m in lam.atoms:
            src[lam.grid.cell_index(p)] += m
        u, i, w = self._nodes
        masses = np.zeros(gout.M)
        step = max(1, (1 << 22) // len(x))
        for s in range(0, len(u), step):
            pts = self.kernel.G(x[None, :], u[s:s + step, None], i[s:s + step, None])
            wts = w[s:s + step, None] * src[None, :]
            masses += np.bincount(gout.cell_index(pts).ravel(), weights=wts.ravel(), minlength=gout.M)
        return CellMeasure(gout, masses)

    def to_descriptor(self):
        d = {"kind": "kernel_g", "kernel": self.kernel.to_descriptor(), "n_quad": self.n_quad}
        if self.mc_samples:
            d["mc_samples"] = int(self.mc_samples)
            d["seed"] = self.seed
        return d


class Normalized(TransferOp):
    """R'(f) = R(f h) / h with 0/0 -> 0."""

    kind = "normalized"

    def __init__(self, inner, h, tol=EPS_FP):
        super().__init__(inner.grid)
        self.inner = inner
        self.h = h
        self.lift = inner.lift
        self.tol = tol

    def _h_at(self, level):
        return np.real(self.h.at(DyadicGrid(level).midpoints))

    def _apply_values(self, vals, in_level, out_level):
        gin = DyadicGrid(in_level)
        hin = np.real(self.h.at(gin.midpoints))
        num = self.inner._apply_values(vals * hin, in_level, out_level)
        ratio, bad = safe_divide(num, self._h_at(out_level), self.tol)
        if np.any(bad):
            raise HarmonicZeroDivision("h vanishes where R(f h) does not")
        return ratio

    def out_level(self, in_level):
        return self.inner.out_level(max(in_level, self.h.level if self.h.level > self.grid.level else in_level))

    def apply(self, f):
        level = max(f.level, self.h.level)
        f = f.refine(level)
        out = self.inner.out_level(level)
        return GridFunction(DyadicGrid(out), self._apply_values(f.values, level, out))

    def adjoint_measure(self, lam, level=None):
        hl = self._h_at(lam.level)
        scaled, _ = safe_divide(lam.masses, hl, self.tol)
        atoms = []
        for p, m in lam.atoms:
            hp = float(np.real(self.h.at(p)))
            if abs(hp) > self.tol:
                atoms.append((p, m / hp))
        nu = self.inner.adjoint_measure(CellMeasure(lam.grid, scaled, atoms), level)
        return CellMeasure(nu.grid, nu.masses * self._h_at(nu.level),
                           [(p, m * float(np.real(self.h.at(p)))) for p, m in nu.atoms])

    def to_descriptor(self):
        return {"kind": "normalized", "inner": self.inner.to_descriptor(), "h": "harmonic"}


# operations

def apply(R, f):
    return R.apply(f)


def adjoint_measure(R, lam, level=None):
    """lam R, defined by int f d(lam R) = int R(f) dlam."""
    return R.adjoint_measure(lam, level)


@dataclass
class PullOutReport:
    max_residual: float
    tol: float
    passed: bool
    trials: int
    sigma: str

    def to_dict(self):
        return {"max_residual": self.max_residual, "tol": self.tol, "pass": self.passed,
                "trials": self.trials, "sigma": self.sigma}


def random_cell_function(grid, rng, complex_=False):
    v = rng.uniform(-1.0, 1.0, grid.M)
    if complex_:
        v = v + 1j * rng.uniform(-1.0, 1.0, grid.M)
    return GridFunction(grid, v)


def random_trig(grid, rng, degree=2, complex_=False):
    """Random trigonometric polynomial with sup norm at most 1."""
    x = grid.midpoints
    k = np.arange(-degree, degree + 1)
    c = rng.normal(size=k.size) + 1j * rng.normal(size=k.size)
    c /= np.sum(np.abs(c))
    v = np.exp(2j * np.pi * np.multiply.outer(x, k)) @ c
    return GridFunction(grid, v if complex_ else v.real)


PULLOUT_C = 64.0


def pullout_tol(R, sigma):
    """1e-10 when branches and sigma are grid-exact, else PULLOUT_C / M."""
    if sigma.lift is not None and R.lift > 0 and sigma.lift == R.lift:
        return 1e-10
    return PULLOUT_C / R.grid.M


def check_pullout(R, sigma, trials=5, seed=None, tol=None):
    """Max residual of R((f o sigma) g) - f R(g) over random bounded f, g.

    Random cell values are used when sigma has a dyadic lift, smooth
    random trigonometric polynomials otherwise.
    """
    rng = make_rng(seed)
    tol = pullout_tol(R, sigma) if tol is None else tol
    worst = 0.0
    for _ in range(trials):
        if sigma.lift is not None:
            f = random_cell_function(R.grid, rng)
            g = random_cell_function(R.grid, rng)
        else:
            f = random_trig(R.grid, rng)
            g = random_trig(R.grid, rng)
        lhs = R.apply(compose(f, sigma) * g)
        rhs = f * R.apply(g)
        worst = max(worst, (lhs - rhs).sup_norm())
    return PullOutReport(worst, tol, worst < tol, trials, sigma.name)


def normalize(R, h, lam_ref=None, tol=1e-10):
    """R'(f) = R(f h) / h for a harmonic h >= 0.

    Raises
    ------
    NotHarmonic
        If h has negative values, ||R h - h|| exceeds tol * max(1, ||h||),
        or int h dlam_ref differs from 1 by more than tol.
    """
    hv = np.asarray(h.values)
    if np.iscomplexobj(hv) or hv.min() < -EPS_FP:
        raise NotHarmonic("h must be real and nonnegative")
    res = (R.apply(h) - h).sup_norm()
    if res > tol * max(1.0, h.sup_norm()):
        raise NotHarmonic(f"||Rh - h|| = {res:.3g}")
    if lam_ref is not None:
        from .core import integrate
        mass = integrate(h, lam_ref)
        if abs(mass - 1.0) > tol:
            raise NotHarmonic(f"int h dlambda = {mass:.12g}, expected 1")
    return Normalized(R, h)


# descriptors and fixtures

FIXTURES = {
    "ex2m1": {"kind": "haar_doubling"},
    "ex2m2": {"kind": "filter_doubling"},
    "mean_integral": {"kind": "mean_integral"},
    "me_kernel": {"kind": "kernel_g", "kernel": "me2"},
}


def from_descriptor(desc, level=12):
    """Build an operator from a fixture name or a JSON-style descriptor."""
    grid = DyadicGrid(level)
    if isinstance(desc, str):
        if desc not in FIXTURES:
            raise ValueError(f"unknown operator fixture {desc!r}")
        desc = FIXTURES[desc]
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ValueError(f"bad operator descriptor {desc!r}")
    kind = desc["kind"]
    if kind == "haar_doubling":
        return HaarDoubling(grid)
    if kind == "filter_doubling":
        c = desc.get("m0_coeffs")
        return FilterDoubling(grid, None if c is None else coeffs_from_json(c))
    if kind == "mean_integral":
        return MeanIntegral(grid)
    if kind == "u_family":
        return UFamily(grid, desc["u"])
    if kind == "branch_ifs":
        system = BranchSystem(tuple(tuple(b) for b in desc["branches"]), tuple(desc["weights"]))
        return BranchIFS(grid, system, dict(desc))
    if kind == "filter":
        from .mra import WaveletFilter, filter_operator
        return filter_operator(WaveletFilter(coeffs_from_json(desc["coeffs"]), int(desc.get("N", 2))), grid)
    if kind == "kernel_g":
        k = desc.get("kernel", "me2")
        if k == "me2":
            kern = me2_kernel()
        elif k == "identity":
            kern = identity_kernel()
        elif isinstance(k, dict) and "u0" in k:
            kern = frozen_kernel(k["u0"])
        else:
            raise ValueError(f"unknown kernel {k!r}")
        return KernelG(grid, kern, desc.get("n_quad"), desc.get("mc_samples"), desc.get("seed"))
    if kind == "normalized":
        from .invmeasures import harmonic_function
        inner = from_descriptor(desc["inner"], level)
        h = harmonic_function(inner).h
        return Normalized(inner, h)
    raise ValueError(f"unknown operator kind {kind!r}")


def default_sigma(R):
    """Endomorphism naturally paired with an operator (reflection for MeanIntegral)."""
    from .maps import reflection
    if isinstance(R, BranchOperator) and R.endo is not None:
        return R.endo
    if isinstance(R, Normalized):
        return default_sigma(R.inner)
    if isinstance(R, MeanIntegral):
        return reflection()
    return identity()
