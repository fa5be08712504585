"""Dyadic-grid functions and measures on [0, 1).

Functions are piecewise constant and stored by their midpoint samples.
Measures are stored as cell masses plus a finite list of atoms, so that
singular limits such as the Dirac mass at 0 are represented exactly.
"""
from __future__ import annotations

import functools
import io
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NotAbsolutelyContinuous
from .maps import PiecewiseAffineMap

EPS_FP = 2.0 ** -40
MAX_LEVEL = 26


@dataclass(frozen=True)
class DyadicGrid:
    """Partition of [0, 1) into M = 2**level half-open cells."""

    level: int

    def __post_init__(self):
        if not isinstance(self.level, (int, np.integer)) or not 0 <= self.level <= MAX_LEVEL:
            raise GridMismatch(f"grid level must be an integer in [0, {MAX_LEVEL}], got {self.level!r}")
        object.__setattr__(self, "level", int(self.level))

    @property
    def M(self):
        return 1 << self.level

    @property
    def midpoints(self):
        return _midpoints(self.level)

    @property
    def edges(self):
        return np.arange(self.M + 1, dtype=float) / self.M

    def refine(self, by=1):
        return DyadicGrid(self.level + by)

    def cell_index(self, x):
        """Index of the cell containing x (x = 1 maps to the last cell)."""
        x = np.asarray(x, dtype=float)
        idx = np.floor(x * self.M).astype(np.int64)
        return np.clip(idx, 0, self.M - 1)


@functools.lru_cache(maxsize=32)
def _midpoints(level):
    M = 1 << level
    out = (np.arange(M, dtype=float) + 0.5) / M
    out.setflags(write=False)
    return out


def _frozen(arr):
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


class GridFunction:
    """Piecewise-constant function sampled at cell midpoints.

    Parameters
    ----------
    grid : DyadicGrid
    values : array_like
        One real or complex sample per cell.
    nonnegative : bool
        If set, the values are checked against -EPS_FP.
    """

    __slots__ = ("grid", "values")
    __array_priority__ = 100

    def __init__(self, grid, values, nonnegative=False):
        values = np.asarray(values)
        if values.dtype.kind not in "fc":
            values = values.astype(float)
        if values.shape != (grid.M,):
            raise GridMismatch(f"expected {grid.M} values, got shape {values.shape}")
        if nonnegative and (np.iscomplexobj(values) or values.min() < -EPS_FP):
            raise ValueError("function flagged nonnegative has negative values")
        self.grid = grid
        self.values = _frozen(values)

    # construction
    @classmethod
    def from_callable(cls, grid, fn):
        return cls(grid, np.asarray(fn(grid.midpoints)) * np.ones(grid.M))

    @classmethod
    def constant(cls, grid, c=1.0):
        return cls(grid, np.full(grid.M, c, dtype=complex if np.iscomplexobj(c) else float))

    @classmethod
    def indicator(cls, grid, i):
        v = np.zeros(grid.M)
        v[i] = 1.0
        return cls(grid, v)

    # basic properties
    @property
    def level(self):
        return self.grid.level

    @property
    def scalar_kind(self):
        return "complex" if np.iscomplexobj(self.values) else "real"

    def __len__(self):
        return self.grid.M

    def __repr__(self):
        return f"GridFunction(level={self.level}, kind={self.scalar_kind})"

    def at(self, x):
        """Evaluate at arbitrary points by containing-cell lookup."""
        return self.values[self.grid.cell_index(x)]

    def refine(self, level):
        """Same function represented on a finer grid (cell duplication)."""
        if level < self.level:
            raise GridMismatch("cannot refine to a coarser level")
        if level == self.level:
            return self
        return GridFunction(DyadicGrid(level), np.repeat(self.values, 1 << (level - self.level)))

    def coarsen(self, level, weights=None):
        """Cell averages on a coarser grid, optionally weighted by cell masses."""
        if level > self.level:
            raise GridMismatch("cannot coarsen to a finer level")
        k = 1 << (self.level - level)
        v = self.values.reshape(-1, k)
        if weights is None:
            return GridFunction(DyadicGrid(level), v.mean(axis=1))
        w = np.asarray(weights, dtype=float).reshape(-1, k)
        tot = w.sum(axis=1)
        num = (v * w).sum(axis=1)
        safe = np.where(tot > 0, tot, 1.0)
        return GridFunction(DyadicGrid(level), np.where(tot > 0, num / safe, 0.0))

    def map_values(self, fn):
        return GridFunction(self.grid, fn(self.values))

    def conj(self):
        return GridFunction(self.grid, np.conj(self.values))

    def real(self):
        return GridFunction(self.grid, np.real(self.values))

    def imag(self):
        return GridFunction(self.grid, np.imag(self.values))

    def abs(self):
        return GridFunction(self.grid, np.abs(self.values))

    def sqrt(self):
        return GridFunction(self.grid, np.sqrt(self.values))

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def is_constant(self, c=None, tol=0.0):
        v = self.values
        ref = v[0] if c is None else c
        return bool(np.all(np.abs(v - ref) <= tol))

    # arithmetic
    def _binary(self, other, op):
        if isinstance(other, GridFunction):
            a, b = align(self, other)
            return GridFunction(a.grid, op(a.values, b.values))
        if np.isscalar(other) or np.ndim(other) == 0:
            return GridFunction(self.grid, op(self.values, other))
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, lambda a, b: b + a)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, lambda a, b: b * a)

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __pow__(self, p):
        return GridFunction(self.grid, self.values ** p)


def align(*fs):
    """Refine grid functions to their common finest level."""
    level = max(f.level for f in fs)
    return tuple(f.refine(level) for f in fs)


def safe_divide(num, den, tol=0.0):
    """Elementwise num / den with 0/0 -> 0; returns (ratio, bad_mask).

    bad_mask marks cells where den vanishes but num does not.
    """
    num = np.asarray(num)
    den = np.asarray(den)
    zero = np.abs(den) <= tol
    bad = zero & (np.abs(num) > tol)
    out = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
    return out, bad


class CellMeasure:
    """Nonnegative cell masses plus finitely many atoms.

    Parameters
    ----------
    grid : DyadicGrid
    masses : array_like
        One nonnegative mass per cell; mass is spread uniformly in its cell.
    atoms : iterable of (position, mass)
    approximate : bool
        Set by constructions that incur one level of refinement error.
    """

    __slots__ = ("grid", "masses", "atoms", "approximate")

    def __init__(self, grid, masses, atoms=(), approximate=False):
        masses = np.asarray(masses, dtype=float)
        if masses.shape != (grid.M,):
            raise GridMismatch(f"expected {grid.M} masses, got shape {masses.shape}")
        if masses.size and masses.min() < -EPS_FP:
            raise ValueError("cell masses must be nonnegative")
        merged = {}
        for pos, w in atoms:
            pos = float(pos)
            w = float(w)
            if w < -EPS_FP:
                raise ValueError("atom masses must be nonnegative")
            if not 0.0 <= pos < 1.0:
                raise ValueError(f"atom position {pos} outside [0, 1)")
            merged[pos] = merged.get(pos, 0.0) + w
        self.grid = grid
        self.masses = _frozen(np.maximum(masses, 0.0))
        self.atoms = tuple(sorted((p, w) for p, w in merged.items() if w > 0.0))
        self.approximate = bool(approximate)

    @classmethod
    def lebesgue(cls, grid):
        return cls(grid, np.full(grid.M, 1.0 / grid.M))

    @classmethod
    def dirac(cls, grid, pos=0.0, mass=1.0):
        return cls(grid, np.zeros(grid.M), [(pos, mass)])

    @classmethod
    def from_cdf(cls, grid, cdf):
        """Exact cell masses F(right) - F(left) from a closed-form CDF."""
        F = np.asarray(cdf(grid.edges), dtype=float)
        return cls(grid, np.diff(F))

    @classmethod
    def from_density(cls, grid, density):
        """Midpoint-rule cell masses rho(x_i) / M."""
        return cls(grid, np.asarray(density(grid.midpoints), dtype=float) * np.ones(grid.M) / grid.M)

    @classmethod
    def arcsine(cls, grid):
        """dx / (pi sqrt(x(1-x))), with CDF (2/pi) asin(sqrt x)."""
        return cls.from_cdf(grid, lambda x: (2.0 / np.pi) * np.arcsin(np.sqrt(np.clip(x, 0.0, 1.0))))

    @property
    def level(self):
        return self.grid.level

    def __repr__(self):
        return f"CellMeasure(level={self.level}, total={self.total():.6g}, atoms={len(self.atoms)})"

    def total(self):
        t = float(np.sum(self.masses))
        for _, w in self.atoms:
            t = t + w
        return t

    def is_probability(self, tol=1e-12):
        return abs(self.total() - 1.0) < tol

    def has_atoms(self):
        return bool(self.atoms)

    def refine(self, level):
        if level < self.level:
            raise GridMismatch("cannot refine to a coarser level")
        if level == self.level:
            return self
        k = 1 << (level - self.level)
        return CellMeasure(DyadicGrid(level), np.repeat(self.masses / k, k), self.atoms, self.approximate)

    def coarsen(self, level):
        if level > self.level:
            raise GridMismatch("cannot coarsen to a finer level")
        k = 1 << (self.level - level)
        return CellMeasure(DyadicGrid(level), self.masses.reshape(-1, k).sum(axis=1), self.atoms,
                           self.approximate)

    def scaled(self, c):
        return CellMeasure(self.grid, self.masses * c, [(p, w * c) for p, w in self.atoms], self.approximate)

    def normalized(self):
        return self.scaled(1.0 / self.total())

    def with_density(self, f):
        """The measure f * lambda for a nonnegative grid function f."""
        f = f.real() if isinstance(f, GridFunction) else f
        level = max(self.level, f.level)
        lam = self.refine(level)
        fv = f.refine(level)
        atoms = [(p, w * float(np.real(f.at(p)))) for p, w in self.atoms]
        return CellMeasure(lam.grid, lam.masses * fv.values, atoms, self.approximate)

    def without_atoms(self):
        return CellMeasure(self.grid, self.masses, (), self.approximate)

    def mass_of_interval(self, a, b):
        """Mass of [a, b), splitting partially covered cells uniformly."""
        e = self.grid.edges
        overlap = np.clip(np.minimum(e[1:], b) - np.maximum(e[:-1], a), 0.0, None) * self.grid.M
        return float(np.sum(self.masses * overlap)) + sum(w for p, w in self.atoms if a <= p < b)

    def moment(self, k):
        """Exact k-th moment with mass uniform inside each cell."""
        e = self.grid.edges
        cell = (e[1:] ** (k + 1) - e[:-1] ** (k + 1)) * self.grid.M / (k + 1)
        return float(np.sum(self.masses * cell)) + sum(w * p ** k for p, w in self.atoms)


def _align_measures(lam, mu):
    level = max(lam.level, mu.level)
    return lam.refine(level), mu.refine(level)


def tv_distance(lam, mu):
    """Total variation: half the L1 distance of cell masses and atoms."""
    lam, mu = _align_measures(lam, mu)
    cells = float(np.sum(np.abs(lam.masses - mu.masses)))
    a = dict(lam.atoms)
    b = dict(mu.atoms)
    atoms = sum(abs(a.get(p, 0.0) - b.get(p, 0.0)) for p in set(a) | set(b))
    return 0.5 * (cells + atoms)


def integrate(f, lam):
    """Pairing of a grid function with a cell measure.

    The finer of the two grids is used; the coarser object is refined
    (functions by duplication, measures by uniform splitting).  Atoms see
    the value of the containing cell.
    """
    if not isinstance(f, GridFunction) or not isinstance(lam, CellMeasure):
        raise GridMismatch("integrate expects a GridFunction and a CellMeasure")
    level = max(f.level, lam.level)
    fv = f.refine(level).values
    lm = lam.refine(level)
    total = np.sum(fv * lm.masses).item()
    for p, w in lam.atoms:
        total = total + f.at(p).item() * w
    return total


def inner(f, g, lam):
    """<f, g> = sum conj(f) g dlambda; f and g must share a grid."""
    if not isinstance(f, GridFunction) or not isinstance(g, GridFunction):
        raise GridMismatch("inner expects grid functions")
    if f.grid != g.grid:
        raise GridMismatch(f"inner: grids differ (levels {f.level} and {g.level})")
    return integrate(f.conj() * g, lam)


def rn_derivative(lam, mu, atol=0.0):
    """Cellwise Radon-Nikodym derivative d(lam)/d(mu).

    Cells where both masses vanish get 0.  Masses at or below `atol` count
    as zero.

    Raises
    ------
    NotAbsolutelyContinuous
        If lam charges a cell or an atom position that mu does not.
    """
    lam, mu = _align_measures(lam, mu)
    ratio, bad = safe_divide(lam.masses, mu.masses, atol)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NotAbsolutelyContinuous(
            f"cell {i} has mass {lam.masses[i]:.3g} but reference mass {mu.masses[i]:.3g}")
    rn_atoms(lam, mu, atol)
    return GridFunction(lam.grid, ratio)


def rn_atoms(lam, mu, atol=0.0):
    """Radon-Nikodym ratios on the atoms of mu (dict position -> ratio)."""
    a = dict(lam.atoms)
    b = dict(mu.atoms)
    for p, w in a.items():
        if w > atol and b.get(p, 0.0) <= atol:
            raise NotAbsolutelyContinuous(f"atom at {p} is not an atom of the reference measure")
    return {p: a.get(p, 0.0) / w for p, w in b.items()}


def compose(f, sigma, level=None):
    """f o sigma sampled at the midpoints of the target level.

    For a map with dyadic lift k the default target is f.level + k, where
    sigma sends midpoints to midpoints and the composition is exact.
    """
    if level is None:
        level = f.level + (sigma.lift or 0)
    grid = DyadicGrid(level)
    return GridFunction(grid, f.at(sigma(grid.midpoints)))


def _spread_intervals(a, b, w, M):
    """Distribute mass w[p] uniformly over [a[p], b[p]) into M cells."""
    a = np.asarray(a, dtype=float) * M
    b = np.asarray(b, dtype=float) * M
    w = np.asarray(w, dtype=float)
    keep = w > 0
    a, b, w = a[keep], b[keep], w[keep]
    out = np.zeros(M)
    if a.size == 0:
        return out, False
    j0 = np.clip(np.floor(a).astype(np.int64), 0, M - 1)
    j1 = np.clip(np.ceil(b).astype(np.int64) - 1, 0, M - 1)
    j1 = np.maximum(j1, j0)
    dens = w / np.maximum(b - a, 1e-300)
    single = j0 == j1
    np.add.at(out, j0[single], w[single])
    m = ~single
    if np.any(m):
        np.add.at(out, j0[m], (j0[m] + 1 - a[m]) * dens[m])
        np.add.at(out, j1[m], (b[m] - j1[m]) * dens[m])
        diff = np.zeros(M + 1)
        np.add.at(diff, j0[m] + 1, dens[m])
        np.add.at(diff, j1[m], -dens[m])
        out += np.cumsum(diff)[:M]
    approximate = bool(np.any(a != np.round(a)) or np.any(b != np.round(b)))
    return out, approximate


def pushforward(lam, sigma):
    """lam o sigma^{-1} for a piecewise-affine map.

    Mass is uniform inside each cell, so a cell is sent to its affine image
    interval.  Exact (up to rounding) when images are unions of grid cells;
    otherwise the result carries approximate=True.
    """
    M = lam.grid.M
    e = lam.grid.edges
    A, B, W = [], [], []
    for lo, hi, s, c in sigma.piece_images():
        left = np.maximum(e[:-1], lo)
        right = np.minimum(e[1:], hi)
        frac = np.clip((right - left) * M, 0.0, 1.0)
        ok = frac > 0
        ya = s * left[ok] + c
        yb = s * right[ok] + c
        A.append(np.minimum(ya, yb))
        B.append(np.maximum(ya, yb))
        W.append(lam.masses[ok] * frac[ok])
    masses, approx = _spread_intervals(np.concatenate(A), np.concatenate(B), np.concatenate(W), M)
    atoms = [(float(sigma(np.array([p]))[0]), w) for p, w in lam.atoms]
    return CellMeasure(lam.grid, masses, atoms, approximate=approx or lam.approximate)


def pushforward_affine(lam, a, b):
    """Image of lam under the affine map x -> a x + b (which must stay in [0, 1))."""
    M = lam.grid.M
    e = lam.grid.edges
    ya = a * e[:-1] + b
    yb = a * e[1:] + b
    masses, approx = _spread_intervals(np.minimum(ya, yb), np.maximum(ya, yb), lam.masses, M)
    atoms = [(a * p + b, w) for p, w in lam.atoms]
    return CellMeasure(lam.grid, masses, atoms, approximate=approx or lam.approximate)


def _fmt(x):
    return "%.17g" % x


def function_to_csv(f):
    """CSV text with columns x,value_re,value_im."""
    buf = io.StringIO()
    buf.write("x,value_re,value_im\n")
    v = f.values
    for x, re, im in zip(f.grid.midpoints, np.real(v), np.imag(v) if np.iscomplexobj(v) else np.zeros(len(v))):
        buf.write(f"{_fmt(x)},{_fmt(re)},{_fmt(im)}\n")
    return buf.getvalue()


def measure_to_csv(lam):
    """CSV text: cell_left,cell_right,mass rows, then atom_pos,atom_mass rows."""
    buf = io.StringIO()
    buf.write("cell_left,cell_right,mass\n")
    e = lam.grid.edges
    for l, r, w in zip(e[:-1], e[1:], lam.masses):
        buf.write(f"{_fmt(l)},{_fmt(r)},{_fmt(w)}\n")
    buf.write("atom_pos,atom_mass\n")
    for p, w in lam.atoms:
        buf.write(f"{_fmt(p)},{_fmt(w)}\n")
    return buf.getvalue()


def function_from_csv(text):
    rows = [r.split(",") for r in text.strip().splitlines()[1:]]
    re = np.array([float(r[1]) for r in rows])
    im = np.array([float(r[2]) for r in rows])
    level = int(round(np.log2(len(rows))))
    vals = re + 1j * im if np.any(im != 0) else re
    return GridFunction(DyadicGrid(level), vals)


def measure_from_csv(text):
    lines = text.strip().splitlines()
    split = lines.index("atom_pos,atom_mass")
    cells = [r.split(",") for r in lines[1:split]]
    atoms = [tuple(float(v) for v in r.split(",")) for r in lines[split + 1:]]
    level = int(round(np.log2(len(cells))))
    return CellMeasure(DyadicGrid(level), [float(r[2]) for r in cells], atoms)


__all__ = [
    "EPS_FP", "DyadicGrid", "GridFunction", "CellMeasure", "PiecewiseAffineMap", "align",
    "safe_divide", "tv_distance", "integrate", "inner", "rn_derivative", "rn_atoms", "compose",
    "pushforward", "pushforward_affine", "function_to_csv", "measure_to_csv", "function_from_csv",
    "measure_from_csv",
]
