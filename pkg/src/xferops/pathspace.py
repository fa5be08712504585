"""Path-space measures on the solenoid generated by (R, h, lambda).

A path is (x_0, x_1, ..., x_n) with x_0 ~ h d(lambda) and, for a pull-out
operator, sigma(x_{k+1}) = x_k: the walk moves *backwards* under sigma by
choosing an inverse branch at each step.

Cylinder functions are finite sums of products  c * prod_i f_i(pi_i);
their L2(P) pairings are always evaluated by nested quadrature.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CellMeasure, DyadicGrid, GridFunction, compose, integrate, rn_derivative
from .errors import KernelNotStochastic, NotUnitary
from .rng import make_rng, resolve_seed, substreams
from .xferop import (BranchOperator, KernelG, MeanIntegral, Normalized, check_pullout, me2_kernel,
                     random_cell_function)

CHUNK = 1 << 14
STOCHASTIC_TOL = 1e-8


@dataclass
class PathSpec:
    """Operator, harmonic function, reference measure, optional sigma.

    Parameters
    ----------
    R : TransferOp
    h : GridFunction, optional
        Harmonic function with int h dlambda = 1 (default 1).
    lam : CellMeasure, optional
        Reference measure (default Lebesgue).
    sigma : PiecewiseAffineMap, optional
        Endomorphism; when given it must satisfy the pull-out identity.
    n_max : int
    """

    R: object
    h: GridFunction | None = None
    lam: CellMeasure | None = None
    sigma: object = None
    n_max: int = 4
    validate: bool = True

    def __post_init__(self):
        if self.h is None:
            self.h = GridFunction.constant(self.R.grid)
        if self.lam is None:
            self.lam = CellMeasure.lebesgue(self.R.grid)
        if self.validate:
            mass = integrate(self.h, self.lam)
            if abs(mass - 1.0) > 1e-10:
                raise ValueError(f"int h dlambda = {mass!r}, expected 1")
            if self.sigma is not None:
                rep = check_pullout(self.R, self.sigma, trials=2, seed=0)
                if not rep.passed:
                    raise ValueError(f"sigma {self.sigma.name} fails the pull-out identity "
                                     f"(residual {rep.max_residual:.3g})")

    @property
    def grid(self):
        return self.R.grid

    def normalized_apply(self, f):
        """R'(f) = R(f h) / h."""
        return Normalized(self.R, self.h).apply(f)


# exact moments

def slot_excess(fs, base, lift):
    """Smallest e >= 0 with level(f_k) <= base + k * lift + e for every slot."""
    return max([0] + [f.level - (base + k * lift) for k, f in enumerate(fs)])


def fold(op, fs, h=None, top=None):
    """f_0 * op(f_1 * op(... op(f_L * h))) with the innermost factor on level `top`.

    Each application of a dyadic operator consumes `op.lift` levels, so
    with `top` at least base + L * lift + excess every intermediate
    function is evaluated exactly at the midpoints where the next factor
    needs it.
    """
    fs = list(fs)
    base = op.grid.level
    L = len(fs) - 1
    if top is None:
        top = base + L * op.lift + slot_excess(fs, base, op.lift)
    v = fs[-1] if h is None else fs[-1] * h
    v = v.refine(max(v.level, top))
    for f in reversed(fs[:-1]):
        v = f * op.apply(v)
    return v


def moment_exact(spec, fs):
    """int f_0 R(f_1 R(f_2 ... R(f_n h))) dlambda by nested quadrature."""
    fs = list(fs)
    base = spec.grid.level
    lift = spec.R.lift
    e = slot_excess(fs[:-1] + [fs[-1] * spec.h], base, lift)
    return integrate(fold(spec.R, fs, spec.h, base + (len(fs) - 1) * lift + e), spec.lam)


def cond_expect(spec, f, n=0, k=1, level=None):
    """E(f o pi_{n+k} | F_n) as a function of pi_n, i.e. R'^k(f).

    The result is sampled on `level` (default: the base level when read
    at slot 0, shifted by n * lift otherwise), computed from f refined
    k * lift levels further so that every application is exact.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    op = Normalized(spec.R, spec.h)
    if level is None:
        level = max(spec.grid.level + n * op.lift, f.level - k * op.lift)
    out = f.refine(max(f.level, level + k * op.lift))
    for _ in range(k):
        out = op.apply(out)
    return out


def cond_expect_contract(spec, g, f, n, k):
    """Both sides of the conditional-expectation contract.

    Returns (moment with g at slot n and f at slot n+k,
    int R^n(g R^k(f h)) dlambda), the latter assembled from cond_expect.
    """
    one = GridFunction.constant(spec.grid)
    fs = [one] * (n + k + 1)
    fs[n] = g if k else g * f
    fs[n + k] = f if k else fs[n]
    lhs = moment_exact(spec, fs)
    inner_ = g * cond_expect(spec, f, n, k) * spec.h
    v = inner_
    for _ in range(n):
        v = spec.R.apply(v)
    return lhs, integrate(v, spec.lam)


# sampling

@dataclass
class PathBatch:
    paths: np.ndarray
    weights: np.ndarray
    seed: int
    solenoid_residual: float | None = None

    @property
    def N(self):
        return self.paths.shape[0]

    @property
    def n(self):
        return self.paths.shape[1] - 1

    def to_csv(self):
        """CSV text with columns path_id,step,state,weight."""
        buf = io.StringIO()
        buf.write("path_id,step,state,weight\n")
        for i in range(self.N):
            w = "%.17g" % self.weights[i]
            for k in range(self.n + 1):
                buf.write(f"{i},{k},{'%.17g' % self.paths[i, k]},{w}\n")
        return buf.getvalue()


def _sampler_parts(spec):
    """Underlying operator and effective harmonic weight for sampling."""
    R, h = spec.R, spec.h
    while isinstance(R, Normalized):
        h = R.h * h
        R = R.inner
    return R, h


def _sample_initial(cells, atoms, grid, N, n, rng):
    """Inverse-CDF draw over cell masses and atoms, jittered inside cells.

    Jitter is quantized to 2**-(level + B + 1) with B = 51 - level - n so
    that n exact halvings stay representable: sigma(x_{k+1}) = x_k then
    holds bit-for-bit for dyadic branches.
    """
    weights = np.concatenate([cells, [w for _, w in atoms]])
    total = weights.sum()
    cdf = np.cumsum(weights) / total
    u = rng.random(N)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(weights) - 1)
    B = max(51 - grid.level - n, 0)
    j = rng.integers(0, 1 << B, size=N) if B > 0 else np.zeros(N, dtype=np.int64)
    x = (idx + (j + 0.5) / (1 << B)) / grid.M
    is_atom = idx >= grid.M
    if np.any(is_atom):
        pos = np.array([p for p, _ in atoms])
        x = np.where(is_atom, pos[np.clip(idx - grid.M, 0, len(atoms) - 1)], x)
    return x


def _branch_step(R, h, x, rng):
    w = R.branch_weights(x)
    hx = np.real(h.at(x))
    probs = np.empty_like(w)
    for j, (a, b) in enumerate(R.branches):
        probs[j] = w[j] * np.real(h.at(a * x + b)) / hx
    dev = np.max(np.abs(probs.sum(axis=0) - 1.0))
    if dev > STOCHASTIC_TOL:
        raise KernelNotStochastic(f"branch probabilities sum to 1 +- {dev:.3g}")
    cum = np.cumsum(probs, axis=0)
    u = rng.random(len(x)) * cum[-1]
    j = np.minimum((u[None, :] >= cum).sum(axis=0), len(R.branches) - 1)
    a = np.array([br[0] for br in R.branches])[j]
    b = np.array([br[1] for br in R.branches])[j]
    return a * x + b


def _kernel_step(kernel, h, x, rng, max_rounds=10000):
    hmax = float(np.max(np.real(h.values)))
    out = np.empty_like(x)
    todo = np.arange(len(x))
    for _ in range(max_rounds):
        u, i = kernel.sample(len(todo), rng)
        z = kernel.G(x[todo], u, i)
        if np.all(h.values == h.values[0]):
            acc = np.ones(len(todo), dtype=bool)
        else:
            acc = rng.random(len(todo)) * hmax < np.real(h.at(z))
        out[todo[acc]] = z[acc]
        todo = todo[~acc]
        if todo.size == 0:
            return out
    raise KernelNotStochastic("rejection sampler failed to accept")


def _sample_chunk(spec, N, n, rng):
    R, h = _sampler_parts(spec)
    lam = spec.lam.refine(max(spec.lam.level, h.level))
    hv = np.real(h.refine(lam.level).values)
    cells = lam.masses * hv
    atoms = [(p, w * float(np.real(h.at(p)))) for p, w in lam.atoms]
    paths = np.empty((N, n + 1))
    paths[:, 0] = _sample_initial(cells, atoms, lam.grid, N, n, rng)
    if isinstance(R, BranchOperator):
        step = lambda x: _branch_step(R, h, x, rng)
    elif isinstance(R, KernelG):
        step = lambda x: _kernel_step(R.kernel, h, x, rng)
    elif isinstance(R, MeanIntegral):
        kern = me2_kernel()
        step = lambda x: _kernel_step(kern, h, x, rng)
    else:
        raise TypeError(f"no path sampler for {type(R).__name__}")
    for k in range(n):
        paths[:, k + 1] = step(paths[:, k])
    return paths


def solenoid_residual(paths, sigma):
    """Max circular distance between sigma(x_{k+1}) and x_k."""
    if paths.shape[1] < 2:
        return 0.0
    d = np.abs(sigma(paths[:, 1:]) - paths[:, :-1])
    return float(np.max(np.minimum(d, 1.0 - d)))


def sample_paths(spec, N, n=None, seed=None):
    """Draw N paths of length n + 1 from the h-normalized Markov kernel.

    Paths are generated in fixed chunks, each on its own Philox substream
    derived from the seed, so the batch is identical however it is split.

    Raises
    ------
    KernelNotStochastic
        If the branch probabilities at a visited state do not sum to 1
        within 1e-8.
    """
    n = spec.n_max if n is None else n
    seed = resolve_seed(seed)
    n_chunks = max(1, math.ceil(N / CHUNK))
    streams = substreams(seed, n_chunks)
    parts = []
    for c, rng in enumerate(streams):
        size = min(CHUNK, N - c * CHUNK)
        parts.append(_sample_chunk(spec, size, n, rng))
    paths = np.concatenate(parts, axis=0)
    res = solenoid_residual(paths, spec.sigma) if spec.sigma is not None else None
    return PathBatch(paths, np.ones(N), seed, res)


def mc_moment(batch, fs):
    """Weighted MC mean of prod_i f_i(x_i) and its standard error."""
    vals = np.ones(batch.N, dtype=complex)
    for i, f in enumerate(fs):
        vals = vals * f.at(batch.paths[:, i])
    w = batch.weights / batch.weights.sum()
    mean = np.sum(w * vals)
    var_re = np.sum(w * (vals.real - mean.real) ** 2)
    var_im = np.sum(w * (vals.imag - mean.imag) ** 2)
    neff = batch.weights.sum() ** 2 / np.sum(batch.weights ** 2)
    se = complex(math.sqrt(var_re / neff), math.sqrt(var_im / neff))
    if np.all(np.isreal(vals)):
        return float(mean.real), se.real
    return complex(mean), se


@dataclass
class MomentReport:
    lhs_mc: float
    rhs_exact: float
    std_error: float
    z_score: float

    def to_dict(self):
        return {"lhs_mc": self.lhs_mc, "rhs_exact": self.rhs_exact, "z_score": self.z_score}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _z(delta, se):
    if se > 0:
        return abs(delta) / se
    return 0.0 if abs(delta) < 1e-12 else math.inf


def moment_report(spec, batch, fs):
    """MC moment vs nested quadrature for real-valued fs."""
    mc, se = mc_moment(batch, fs)
    exact = moment_exact(spec, fs)
    if isinstance(mc, complex) or isinstance(exact, complex):
        mc, exact = complex(mc), complex(exact)
        se = complex(se)
        z = max(_z(mc.real - exact.real, se.real), _z(mc.imag - exact.imag, se.imag))
        return MomentReport(mc.real, exact.real, abs(se), z)
    return MomentReport(float(mc), float(exact), float(se), _z(mc - exact, se))


# cylinder functions

class Cylinder:
    """Finite sum of terms c * prod_i f_i(pi_i).

    Parameters
    ----------
    terms : list of (coef, tuple of GridFunction)
        Slot i of a term is composed with pi_i.
    """

    def __init__(self, terms):
        self.terms = [(complex(c), tuple(fs)) for c, fs in terms]

    @classmethod
    def at_slot(cls, f, n, grid=None):
        """f o pi_n."""
        grid = f.grid if grid is None else grid
        one = GridFunction.constant(DyadicGrid(grid.level))
        return cls([(1.0, tuple([one] * n + [f]))])

    @classmethod
    def product(cls, fs, coef=1.0):
        return cls([(coef, tuple(fs))])

    @property
    def depth(self):
        return max(len(fs) for _, fs in self.terms) - 1

    def __add__(self, other):
        return Cylinder(self.terms + other.terms)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        return Cylinder([(c * a, fs) for a, fs in self.terms])

    def __repr__(self):
        return f"Cylinder(terms={len(self.terms)}, depth={self.depth})"

    def eval_paths(self, paths):
        out = np.zeros(paths.shape[0], dtype=complex)
        for c, fs in self.terms:
            v = np.full(paths.shape[0], c)
            for i, f in enumerate(fs):
                v = v * f.at(paths[:, i])
            out += v
        return out


def _pad(fs, length, one):
    return list(fs) + [one] * (length - len(fs))


def pairing(spec, a, b):
    """<a, b>_{L2(P)} = E[conj(a) b] by nested quadrature."""
    one = GridFunction.constant(spec.grid)
    L = max(a.depth, b.depth) + 1
    total = 0.0
    for ca, fa in a.terms:
        fa = _pad(fa, L, one)
        for cb, fb in b.terms:
            fb = _pad(fb, L, one)
            fs = [x.conj() * y for x, y in zip(fa, fb)]
            total = total + np.conj(ca) * cb * moment_exact(spec, fs)
    return total


def norm2(spec, a):
    return float(np.real(pairing(spec, a, a)))


def scaling_weight(spec):
    """W = d(lambda R)/d(lambda), one level finer for dyadic operators.

    Raises
    ------
    NotUnitary
        If W vanishes on cells of positive lambda-mass.
    """
    R, lam = spec.R, spec.lam
    level = lam.level + R.lift
    fine = lam.refine(level)
    W = rn_derivative(R.adjoint_measure(lam, level), fine)
    if np.any((np.real(W.values) <= 0.0) & (fine.masses > 0.0)):
        raise NotUnitary("W vanishes on a set of positive measure")
    return W


def scaling_apply(spec, xi, W=None):
    """U xi = (xi o sigma~) sqrt(W o pi_0).

    A term prod_i f_i(pi_i) becomes (f_0 o sigma) f_1 sqrt(W) at slot 0
    followed by f_{i+1} at slot i.
    """
    if spec.sigma is None:
        raise ValueError("scaling needs an endomorphism sigma")
    W = scaling_weight(spec) if W is None else W
    rootW = W.real().sqrt()
    out = []
    for c, fs in xi.terms:
        head = compose(fs[0], spec.sigma)
        if len(fs) > 1:
            head = head * fs[1]
        out.append((c, (head * rootW,) + tuple(fs[2:])))
    return Cylinder(out)


def rho(f, xi):
    """Multiplication by f o pi_0."""
    return Cylinder([(c, (f * fs[0],) + tuple(fs[1:])) for c, fs in xi.terms])


def collapse(spec, xi, n=None):
    """Rewrite each term as a single function of pi_n using pi_i = sigma^{n-i} o pi_n."""
    n = xi.depth if n is None else n
    out = []
    for c, fs in xi.terms:
        acc = None
        for i, f in enumerate(fs):
            g = f
            for _ in range(n - i):
                g = compose(g, spec.sigma)
            acc = g if acc is None else acc * g
        one = GridFunction.constant(spec.grid)
        out.append((c, tuple([one] * n + [acc])))
    return Cylinder(out)


def cond_project(spec, xi, n):
    """E(xi | F_n): slots beyond n are folded in with R'.

    The folded slot-n factor is computed on level base + n * lift + e,
    where e is the excess level of the term, so pairings stay exact.
    """
    op = Normalized(spec.R, spec.h)
    base = spec.grid.level
    out = []
    for c, fs in xi.terms:
        fs = list(fs)
        if len(fs) <= n + 1:
            out.append((c, tuple(fs)))
            continue
        top = base + (len(fs) - 1) * op.lift + slot_excess(fs, base, op.lift)
        head = fold(op, fs[n:], None, top)
        out.append((c, tuple(fs[:n]) + (head,)))
    return Cylinder(out)


def random_cylinder(grid, rng, depth, terms=2, complex_=True):
    return Cylinder([(1.0, tuple(random_cell_function(grid, rng, complex_) for _ in range(depth + 1)))
                     for _ in range(terms)])


def cylinder_residual(spec, a, b, tests):
    """max over test cylinders eta of |<eta, a> - <eta, b>|."""
    return max(abs(pairing(spec, eta, a) - pairing(spec, eta, b)) for eta in tests)


# renormalization

@dataclass
class RenormReport:
    max_rel_delta: float
    tol: float
    passed: bool
    trials: int
    deltas: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {"max_rel_delta": self.max_rel_delta, "tol": self.tol, "pass": self.passed,
                "trials": self.trials}


def renorm_equiv_check(R, h, lam, n, trials=20, seed=None, tol=1e-9):
    """Un-normalized moments against moments of R' = R(. h)/h under h dlambda.

    For random f_0..f_n compares
    int f_0 R(f_1 ... R(f_n h)) dlambda with int f_0 R'(f_1 ... R'(f_n)) h dlambda.
    """
    rng = make_rng(seed)
    Rn = Normalized(R, h)
    hlam = lam.with_density(h)
    worst = 0.0
    deltas = []
    for _ in range(trials):
        fs = [random_cell_function(R.grid, rng) for _ in range(n + 1)]
        a = integrate(fold(R, fs, h), lam)
        b = integrate(fold(Rn, fs), hlam)
        scale = max(1.0, abs(a), abs(b))
        d = abs(a - b) / scale
        deltas.append(d)
        worst = max(worst, d)
    return RenormReport(worst, tol, worst < tol, trials, deltas)


def first_step_law(spec):
    """Law of pi_1: the adjoint of R' applied to h dlambda, i.e. h (lambda R)."""
    return Normalized(spec.R, spec.h).adjoint_measure(spec.lam.with_density(spec.h))
