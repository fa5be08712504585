"""Named operators, measures and (R, lambda, sigma) triples used across tests and the CLI."""
from __future__ import annotations

import numpy as np

from .core import CellMeasure, DyadicGrid
from .maps import doubling, identity, reflection, u_map
from .xferop import FilterDoubling, HaarDoubling, KernelG, MeanIntegral, UFamily, me2_kernel

MEASURES = ("lebesgue", "arcsine", "dirac0", "cos_density", "linear_density")


def named_measure(name, grid):
    """Probability measures referenced by name in configs and reports."""
    if name == "lebesgue":
        return CellMeasure.lebesgue(grid)
    if name == "arcsine":
        return CellMeasure.arcsine(grid)
    if name in ("dirac0", "delta0", "dirac"):
        return CellMeasure.dirac(grid, 0.0)
    if name == "cos_density":
        # (1 + cos 2 pi x) dx
        return CellMeasure.from_cdf(grid, lambda x: x + np.sin(2 * np.pi * x) / (2 * np.pi))
    if name == "linear_density":
        # 2x dx
        return CellMeasure.from_cdf(grid, lambda x: x ** 2)
    raise ValueError(f"unknown measure {name!r}; choose from {', '.join(MEASURES)}")


def zoo(level=12):
    """At least ten (label, R, lambda, sigma) triples spanning the measure classes."""
    g = DyadicGrid(level)
    H, F, MI = HaarDoubling(g), FilterDoubling(g), MeanIntegral(g)
    leb, arc, d0 = CellMeasure.lebesgue(g), CellMeasure.arcsine(g), CellMeasure.dirac(g)
    cosd, lin = named_measure("cos_density", g), named_measure("linear_density", g)
    U4 = UFamily(g, 0.25)
    out = [
        ("ex2m1/lebesgue", H, leb, doubling()),
        ("ex2m1/dirac0", H, d0, doubling()),
        ("ex2m1/linear", H, lin, doubling()),
        ("ex2m1/third", H, CellMeasure.dirac(g, 1.0 / 3.0), doubling()),
        ("ex2m2/lebesgue", F, leb, doubling()),
        ("ex2m2/dirac0", F, d0, doubling()),
        ("ex2m2/cos", F, cosd, doubling()),
        ("ex2m2/arcsine", F, arc, doubling()),
        ("mean_integral/lebesgue", MI, leb, reflection()),
        ("mean_integral/arcsine", MI, arc, reflection()),
        ("u_quarter/lebesgue", U4, leb, u_map(0.25)),
        ("ex2m1/identity", H, leb, identity()),
    ]
    if level <= 8:
        out.append(("me_kernel/lebesgue", KernelG(g, me2_kernel()), leb, reflection()))
    return out
