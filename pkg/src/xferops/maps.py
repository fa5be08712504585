"""Piecewise-affine self-maps of [0, 1)."""
from __future__ import annotations

import math

import numpy as np


class PiecewiseAffineMap:
    """Map x -> slope_k * x + intercept_k on [breaks[k], breaks[k+1]).

    Values are reduced into [0, 1) so that e.g. the reflection 1 - x sends
    0 to 0 rather than to 1.

    Parameters
    ----------
    breaks : sequence of float
        Increasing breakpoints with breaks[0] = 0 and breaks[-1] = 1.
    slopes, intercepts : sequence of float
        One affine piece per interval.
    name : str
        Label used in reports and descriptors.
    """

    def __init__(self, breaks, slopes, intercepts, name="map"):
        self.breaks = tuple(float(b) for b in breaks)
        self.slopes = tuple(float(s) for s in slopes)
        self.intercepts = tuple(float(c) for c in intercepts)
        self.name = name
        if len(self.slopes) != len(self.breaks) - 1 or len(self.intercepts) != len(self.slopes):
            raise ValueError("need one slope and intercept per piece")
        if self.breaks[0] != 0.0 or self.breaks[-1] != 1.0:
            raise ValueError("breaks must start at 0 and end at 1")
        if any(s == 0.0 for s in self.slopes):
            raise ValueError("pieces must be non-constant")

    def __repr__(self):
        return f"PiecewiseAffineMap({self.name})"

    def __eq__(self, other):
        return (isinstance(other, PiecewiseAffineMap) and self.breaks == other.breaks
                and self.slopes == other.slopes and self.intercepts == other.intercepts)

    def __hash__(self):
        return hash((self.breaks, self.slopes, self.intercepts))

    @property
    def n_pieces(self):
        return len(self.slopes)

    def piece_index(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(np.asarray(self.breaks), x, side="right") - 1
        return np.clip(idx, 0, self.n_pieces - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.piece_index(x)
        y = np.asarray(self.slopes)[k] * x + np.asarray(self.intercepts)[k]
        y = np.where(y >= 1.0, y - 1.0, y)
        return np.where(y < 0.0, y + 1.0, y)

    @property
    def lift(self):
        """Dyadic lift k, or None.

        k is defined when every |slope| equals 2**k, every break is a
        multiple of 2**-k and every intercept is an integer.  Composition
        with such a map sends midpoints of level m + k to midpoints of
        level m exactly.
        """
        s = {abs(v) for v in self.slopes}
        if len(s) != 1:
            return None
        k = math.log2(s.pop())
        if k < 0 or k != int(k):
            return None
        k = int(k)
        scale = 2.0 ** k
        if any((b * scale) != int(b * scale) for b in self.breaks):
            return None
        if any(c != int(c) for c in self.intercepts):
            return None
        return k

    def inverse_branches(self):
        """Affine inverses (a, b) of the pieces, one per piece.

        Only meaningful for full-branched maps, where each piece maps its
        interval onto [0, 1); each inverse tau(y) = a * y + b satisfies
        sigma(tau(y)) = y.
        """
        out = []
        for lo, hi, s, c in zip(self.breaks[:-1], self.breaks[1:], self.slopes, self.intercepts):
            ends = sorted((s * lo + c, s * hi + c))
            if not (math.isclose(ends[1] - ends[0], 1.0, abs_tol=1e-12)):
                raise ValueError(f"{self.name}: piece [{lo}, {hi}) is not full-branched")
            shift = -math.floor(ends[0] + 1e-12)
            # y = s x + c + shift on this piece, so x = (y - c - shift) / s
            out.append((1.0 / s, -(c + shift) / s))
        return out

    def piece_images(self):
        """List of (lo, hi, slope, intercept, shift) describing each piece."""
        out = []
        for lo, hi, s, c in zip(self.breaks[:-1], self.breaks[1:], self.slopes, self.intercepts):
            a, b = sorted((s * lo + c, s * hi + c))
            shift = -math.floor(a + 1e-12)
            out.append((lo, hi, s, c + shift))
        return out

    def to_descriptor(self):
        if self.name.startswith("u_map:"):
            return {"kind": "u_map", "u": float(self.name.split(":", 1)[1])}
        if self.name in ("doubling", "reflection", "identity"):
            return {"kind": self.name}
        return {"kind": "piecewise_affine", "breaks": list(self.breaks),
                "slopes": list(self.slopes), "intercepts": list(self.intercepts)}


def doubling():
    """sigma(x) = 2x mod 1."""
    return PiecewiseAffineMap((0.0, 0.5, 1.0), (2.0, 2.0), (0.0, -1.0), "doubling")


def reflection():
    """sigma(x) = 1 - x."""
    return PiecewiseAffineMap((0.0, 1.0), (-1.0,), (1.0,), "reflection")


def identity():
    return PiecewiseAffineMap((0.0, 1.0), (1.0,), (0.0,), "identity")


def u_map(u):
    """Two-branch expanding map with sigma(ux) = x and sigma((1-u)x + u) = x."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie in (0, 1)")
    return PiecewiseAffineMap((0.0, u, 1.0), (1.0 / u, 1.0 / (1.0 - u)),
                              (0.0, -u / (1.0 - u)), f"u_map:{u!r}")


def from_descriptor(desc):
    """Build a map from a name or a JSON-style dict."""
    if isinstance(desc, PiecewiseAffineMap):
        return desc
    if isinstance(desc, str):
        desc = {"kind": desc}
    kind = desc.get("kind")
    if kind == "doubling":
        return doubling()
    if kind == "reflection":
        return reflection()
    if kind == "identity":
        return identity()
    if kind == "u_map":
        return u_map(desc["u"])
    if kind == "piecewise_affine":
        return PiecewiseAffineMap(desc["breaks"], desc["slopes"], desc["intercepts"],
                                  desc.get("name", "map"))
    raise ValueError(f"unknown map descriptor: {desc!r}")
