"""Named experiment pipelines shared by the CLI and the HTTP service.

Each experiment returns an `ExperimentResult` holding a pass verdict, a
JSON-ready summary and one or more tables; `write_reports` turns a
result into `<experiment>_<timestamp>.<ext>` files.
"""
from __future__ import annotations

import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import ifs as ifs_mod
from . import mra, pathspace, uhilbert
from .core import CellMeasure, DyadicGrid, tv_distance
from .fixtures import named_measure
from .invmeasures import classify, default_tol, harmonic_function, invariant_measure
from .rng import substreams
from .xferop import MeanIntegral, default_sigma, from_descriptor, random_trig

EXPERIMENTS = ("invariant", "classify", "paths", "mra", "cascade", "ergodic", "ifs")
ALL = "all"
DEFAULT_OPS = {"invariant": "mean_integral", "classify": "ex2m2", "paths": "ex2m2",
               "mra": "ex2m1", "ergodic": "ex2m2"}
EPOCH_STAMP = "19700101T000000Z"


class ExperimentConfig(BaseModel):
    """One experiment run; flat keys so a key=value file can carry it."""

    model_config = ConfigDict(extra="forbid")

    experiment: Literal["invariant", "classify", "paths", "mra", "cascade", "ergodic", "ifs", "all"]
    op: Optional[Union[str, dict]] = None
    measure: str = "lebesgue"
    grid_level: int = Field(12, ge=4, le=20)
    tol: Optional[float] = None
    seed: int = 0
    out_dir: str = "reports"
    format: Literal["csv", "json"] = "json"
    N: int = Field(200, ge=1)
    depth: int = Field(4, ge=0, le=8)
    n_paths: int = Field(100_000, ge=10)
    trials: int = Field(10, ge=1)
    u: str = "1/4"
    n_samples: int = Field(100_000, ge=1)
    n_max: int = Field(8, ge=0)
    filter: Literal["haar", "daubechies4"] = "haar"
    max_iter: int = Field(200, ge=1)
    export_paths: bool = False

    def for_experiment(self, name):
        return self.model_copy(update={"experiment": name})

    def operator(self):
        op = self.op if self.op is not None else DEFAULT_OPS.get(self.experiment)
        return from_descriptor(op, self.grid_level)


@dataclass
class Table:
    header: list
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(self.header) + "\n")
        for r in self.rows:
            buf.write(",".join(_cell(v) for v in r) + "\n")
        return buf.getvalue()

    def records(self):
        return [dict(zip(self.header, (_jsonable(v) for v in r))) for r in self.rows]


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    summary: dict
    tables: dict = field(default_factory=dict)     # first entry is the primary table
    extra_json: dict = field(default_factory=dict)  # files always written as JSON
    runtime: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)

    def to_dict(self):
        return {"experiment": self.name, "pass": self.passed, "summary": _jsonable(self.summary),
                "tables": {k: t.records() for k, t in self.tables.items()},
                **{k: _jsonable(v) for k, v in self.extra_json.items()}}

    def to_payload(self):
        """Lossless wire form (tables as header + rows)."""
        return {"experiment": self.name, "passed": bool(self.passed),
                "summary": _jsonable(self.summary),
                "tables": {k: {"header": list(t.header), "rows": _jsonable(t.rows)}
                           for k, t in self.tables.items()},
                "extra_json": _jsonable(self.extra_json)}

    @classmethod
    def from_payload(cls, d):
        tables = {k: Table(list(t["header"]), [tuple(r) for r in t["rows"]])
                  for k, t in d.get("tables", {}).items()}
        return cls(d["experiment"], bool(d["passed"]), d.get("summary", {}), tables,
                   d.get("extra_json", {}))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    return v


def timestamp():
    """UTC stamp from $SOURCE_DATE_EPOCH, or the epoch itself (reports stay reproducible)."""
    env = os.environ.get("SOURCE_DATE_EPOCH")
    if env:
        return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(int(env)))
    return EPOCH_STAMP


def _describe(R):
    try:
        return R.to_descriptor()
    except (NotImplementedError, ValueError):
        return repr(R)


# pipelines

def run_invariant(cfg):
    R = cfg.operator()
    tol = 1e-12 if cfg.tol is None else cfg.tol
    res = invariant_measure(R, max_iter=cfg.max_iter, tol=tol)
    summary = {"op": _describe(R), "iterations": res.iterations, "converged": res.converged,
               "increment": res.increment}
    passed = res.converged
    if isinstance(R, MeanIntegral):
        ref = CellMeasure.arcsine(R.grid)
        tv = tv_distance(res.measure, ref)
        bound = 10.0 / R.grid.M
        summary.update({"reference": "arcsine", "tv_to_reference": tv, "tv_bound": bound})
        passed = tv <= bound
    e = R.grid.edges
    rows = [(e[i], e[i + 1], res.measure.masses[i]) for i in range(R.grid.M)]
    rows += [("atom", p, w) for p, w in res.measure.atoms]
    return ExperimentResult("invariant", passed, summary,
                            {"measure": Table(["cell_left", "cell_right", "mass"], rows)})


def run_classify(cfg):
    R = cfg.operator()
    lam = named_measure(cfg.measure, R.grid)
    rep = classify(R, lam, tol=cfg.tol)
    d = rep.to_dict()
    summary = {**d, "op": _describe(R), "measure": cfg.measure,
               "tol": default_tol(R) if cfg.tol is None else cfg.tol, "consistent": rep.consistent()}
    rows = [(k, d[k], d["residuals"].get(k, "")) for k in ("L", "L1", "Fix", "K1")]
    return ExperimentResult("classify", rep.consistent(), summary,
                            {"classes": Table(["class", "member", "residual"], rows)})


def _path_spec(cfg):
    R = cfg.operator()
    lam = named_measure(cfg.measure, R.grid)
    sigma = default_sigma(R)
    if R.unital:
        h = None
    else:
        h = harmonic_function(R).normalized_to(lam)
    return pathspace.PathSpec(R, h, lam, sigma, n_max=cfg.depth)


def run_paths(cfg):
    spec = _path_spec(cfg)
    batch = pathspace.sample_paths(spec, cfg.n_paths, cfg.depth, seed=cfg.seed)
    rng = substreams(cfg.seed, 1)[0]
    rows = []
    worst = 0.0
    for t in range(cfg.trials):
        n = t % (cfg.depth + 1)
        fs = [random_trig(spec.grid, rng).real() for _ in range(n + 1)]
        rep = pathspace.moment_report(spec, batch, fs)
        worst = max(worst, rep.z_score)
        rows.append((t, n, rep.lhs_mc, rep.rhs_exact, rep.std_error, rep.z_score))
    sol = batch.solenoid_residual
    passed = worst < 3.0 and (sol is None or sol == 0.0)
    summary = {"op": _describe(spec.R), "measure": cfg.measure, "n_paths": cfg.n_paths,
               "depth": cfg.depth, "max_z": worst,
               "solenoid_residual": "n/a" if sol is None else sol}
    tables = {"moments": Table(["trial", "n", "lhs_mc", "rhs_exact", "std_error", "z_score"], rows)}
    if cfg.export_paths:
        tables["paths"] = Table(["path_id", "step", "state", "weight"],
                                [(i, k, batch.paths[i, k], batch.weights[i])
                                 for i in range(batch.N) for k in range(batch.n + 1)])
    return ExperimentResult("paths", passed, summary, tables)


def run_mra(cfg):
    grid = DyadicGrid(cfg.grid_level)
    rng = substreams(cfg.seed, 2)[1]
    f = random_trig(grid, rng, degree=8).real()
    n_max = min(cfg.n_max, cfg.grid_level - 1)
    exp = mra.haar_expand(f, n_max)
    en = exp.energies()
    cum = exp.cumulative_energy()
    rows = [(k, en[k], cum[k]) for k in range(len(en))]
    rows.append(("tail", exp.tail_energy(), cum[-1] + exp.tail_energy()))
    spec = pathspace.PathSpec(cfg.operator(), sigma=default_sigma(cfg.operator()))
    n = min(cfg.depth, 4)
    dec = mra.decompose(spec, f, n)
    G = dec.gram()
    labels = ["base"] + [f"g{k}" for k in range(1, n + 1)]
    orth_rows = [(labels[i], *[abs(G[i, j]) for j in range(len(labels))]) for i in range(len(labels))]
    nf = dec.norm2()
    summary = {"n_max": n_max, "haar_reconstruction": exp.reconstruction_residual(),
               "haar_parseval": exp.parseval_residual(),
               "haar_kernel": max(exp.kernel_residuals()),
               "decompose_op": _describe(spec.R), "decompose_n": n,
               "orthogonality": dec.orthogonality() / max(nf, 1e-300),
               "reconstruction": dec.reconstruction_residual()}
    passed = (summary["haar_reconstruction"] < 1e-10 and summary["haar_parseval"] < 1e-9
              and summary["haar_kernel"] < 1e-9 and summary["orthogonality"] < 1e-9
              and summary["reconstruction"] < 1e-9)
    return ExperimentResult("mra", passed, summary, {
        "energy": Table(["level", "energy", "cum_energy"], rows),
        "orthogonality": Table(["piece", *labels], orth_rows)})


def run_cascade(cfg):
    w = mra.haar_filter() if cfg.filter == "haar" else mra.daubechies4()
    level = min(cfg.grid_level, 12)
    t = np.linspace(-8.0, 8.0, 1601)
    phi = np.abs(mra.cascade_fourier(w, t, 30))
    rows = [(float(x), float(v)) for x, v in zip(t, phi)]
    summary = {"filter": cfg.filter, "K": 30}
    checks = []
    if cfg.filter == "haar":
        sinc_err = float(np.max(np.abs(phi - np.abs(np.sinc(t)))))
        fo = mra.filter_operator(w, DyadicGrid(level))
        ref = from_descriptor("ex2m2", level)
        g = random_trig(DyadicGrid(level + 1), substreams(cfg.seed, 3)[2], complex_=True)
        op_err = float(np.max(np.abs(fo.apply(g).values - ref.apply(g).values)))
        summary.update({"sinc_error": sinc_err, "operator_error": op_err})
        checks += [sinc_err < 1e-6, op_err < 1e-12]
        rows = [(x, v, abs(float(np.sinc(x)))) for x, v in rows]
        header = ["t", "abs_phi_hat", "abs_sinc"]
    else:
        header = ["t", "abs_phi_hat"]
    hrep = mra.h_phi_check(w, level)
    k0 = mra.k0_isometry_check(w, seed=cfg.seed, level=level)
    summary.update({"h_phi_minus_1": hrep.h_dev, "R_h_minus_h": hrep.fixed_point_residual,
                    "k0_max_gap": max(abs(a - b) for a, b in zip(k0.lhs, k0.rhs))})
    checks += [hrep.h_dev < 1e-4, hrep.fixed_point_residual < 1e-4, all(k0.passed)]
    return ExperimentResult("cascade", all(checks), summary, {"phi_hat": Table(header, rows)})


def run_ergodic(cfg):
    R = cfg.operator()
    lam = named_measure(cfg.measure, R.grid)
    sigma = default_sigma(R)
    W = uhilbert.scaling_density(R, lam)
    res = uhilbert.ergodic_average(W, sigma, cfg.N, lam)
    rows = [(k, a, p) for k, a, p in res.rows()]
    chain1 = uhilbert.sqrt_norm_chain(W, sigma, lam, 5, power=1.0)
    chain2 = uhilbert.sqrt_norm_chain(W, sigma, lam, 5)
    bounded = max(res.norms) <= 1.0 + 1e-12
    summary = {"op": _describe(R), "measure": cfg.measure, "N": cfg.N, "final_norm": res.norms[-1],
               "final_product_term": res.product_terms[-1],
               "log_slope": res.log_slope(min(50, cfg.N)) if cfg.N > 1 else 0.0,
               "cesaro_bounded": bounded, "chain_L1": chain1, "chain_sqrt": chain2}
    passed = (bounded and max(abs(c - 1.0) for c in chain1) < 1e-8
              and max(chain2) <= 1.0 + 1e-9)
    return ExperimentResult("ergodic", passed, summary,
                            {"norms": Table(["N", "norm_AN", "norm_product_term"], rows)})


def run_ifs(cfg):
    fam = ifs_mod.u_family(cfg.u)
    grid = DyadicGrid(cfg.grid_level)
    eq = ifs_mod.equilibrium_cells(fam, cfg.grid_level)
    samples = ifs_mod.chaos_game(fam, cfg.n_samples, rng=substreams(cfg.seed, 4)[3])
    hist = ifs_mod.histogram(samples, grid)
    oracle = ifs_mod.moment_oracle(fam, 4)
    moments = {str(k): eq.moment(k) for k in range(1, 5)}
    tv = tv_distance(hist, eq)
    bound = ifs_mod.multinomial_tv_bound(eq, cfg.n_samples)
    stab = ifs_mod.stability_check(fam, fam.sigma)
    mean_err = abs(eq.moment(1) - float(oracle[1]))
    summary = {"u": cfg.u, "n_samples": cfg.n_samples, "mean_error": mean_err,
               "mean_bound": 2.0 / grid.M, "tv_chaos_vs_equilibrium": tv, "tv_bound": bound,
               "stability_residual": stab.max_residual,
               "oracle_moments": {str(k): str(oracle[k]) for k in range(1, 5)}}
    passed = mean_err < 2.0 / grid.M and tv <= bound and stab.passed
    e = grid.edges
    rows = [(e[i], e[i + 1], hist.masses[i], eq.masses[i]) for i in range(grid.M)]
    return ExperimentResult("ifs", passed, summary,
                            {"histogram": Table(["cell_left", "cell_right", "empirical", "equilibrium"], rows)},
                            {"moments": moments})


PIPELINES = {"invariant": run_invariant, "classify": run_classify, "paths": run_paths,
             "mra": run_mra, "cascade": run_cascade, "ergodic": run_ergodic, "ifs": run_ifs}


def run_experiment(cfg):
    """Run one named experiment (not "all")."""
    t0 = time.perf_counter()
    res = PIPELINES[cfg.experiment](cfg)
    res.runtime = time.perf_counter() - t0
    return res


def run_all(cfg):
    return [run_experiment(cfg.for_experiment(name)) for name in EXPERIMENTS]


def write_reports(res, cfg, stamp=None):
    """Write the report files of one result; returns their paths."""
    stamp = timestamp() if stamp is None else stamp
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if cfg.format == "json":
        p = out / f"{res.name}_{stamp}.json"
        p.write_text(json.dumps(res.to_dict(), sort_keys=True, indent=2) + "\n")
        paths.append(p)
        return paths
    for i, (key, table) in enumerate(res.tables.items()):
        stem = res.name if i == 0 else f"{res.name}-{key}"
        p = out / f"{stem}_{stamp}.csv"
        p.write_text(table.to_csv())
        paths.append(p)
    for key, obj in res.extra_json.items():
        p = out / f"{res.name}-{key}_{stamp}.json"
        p.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
        paths.append(p)
    return paths
