"""Command-line front door: `xferops <experiment> [options]`, `xferops run <experiment>`, `xferops serve`.

Exit codes: 0 when every verdict passes, 2 when a check fails, 1 on a
usage error.  Settings come from, in increasing priority, built-in
defaults, a key=value config file (--config), $XFEROPS_SEED (seed only)
and command-line flags.
"""
from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request

from pydantic import ValidationError

from .experiments import ALL, EXPERIMENTS, ExperimentConfig, ExperimentResult, run_all, run_experiment, write_reports
from .rng import SEED_ENV

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

# flag dest -> config key; also the keys accepted in config files
KEYS = ("op", "measure", "grid_level", "tol", "seed", "out_dir", "format", "N", "depth", "n_paths",
        "trials", "u", "n_samples", "n_max", "filter", "max_iter", "export_paths")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_options(p):
    g = p.add_argument_group("experiment options")
    d = argparse.SUPPRESS
    g.add_argument("--config", default=d, help="key=value file (flags override it)")
    g.add_argument("--op", default=d, help="operator fixture name or JSON descriptor")
    g.add_argument("--measure", default=d, help="reference measure name")
    g.add_argument("--grid-level", dest="grid_level", type=int, default=d, help="m in M = 2^m (4..20)")
    g.add_argument("--tol", type=float, default=d)
    g.add_argument("--seed", type=int, default=d)
    g.add_argument("--out", dest="out_dir", default=d, help="report directory (default: reports)")
    g.add_argument("--format", choices=("csv", "json"), default=d)
    g.add_argument("--N", dest="N", type=int, default=d, help="ergodic horizon")
    g.add_argument("--depth", type=int, default=d, help="path length n")
    g.add_argument("--n-paths", dest="n_paths", type=int, default=d)
    g.add_argument("--trials", type=int, default=d)
    g.add_argument("--u", default=d, help="u-family parameter, e.g. 1/4")
    g.add_argument("--n-samples", dest="n_samples", type=int, default=d)
    g.add_argument("--n-max", dest="n_max", type=int, default=d)
    g.add_argument("--filter", default=d, choices=("haar", "daubechies4"))
    g.add_argument("--max-iter", dest="max_iter", type=int, default=d)
    g.add_argument("--export-paths", dest="export_paths", action="store_true", default=d)
    g.add_argument("--remote", default=d, help="run on a service at this base URL")
    g.add_argument("--quiet", action="store_true", default=d)


def build_parser():
    p = _Parser(prog="xferops", description="Transfer-operator experiments.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in EXPERIMENTS + (ALL,):
        _add_options(sub.add_parser(name, help=f"run the {name} experiment"))
    r = sub.add_parser("run", help="run a named experiment (or all)")
    r.add_argument("experiment", choices=EXPERIMENTS + (ALL,))
    _add_options(r)
    s = sub.add_parser("serve", help="start the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def read_config(path):
    """Parse a flat key=value file; '#' starts a comment, dashes in keys become underscores."""
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from exc
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k == "out":
            k = "out_dir"
        if k not in KEYS:
            raise UsageError(f"{path}:{no}: unknown key {k!r}")
        out[k] = v
    return out


def _parse_op(value):
    if isinstance(value, str) and value.lstrip().startswith("{"):
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad operator descriptor {value!r}: {exc}") from exc
    return value


def resolve_config(experiment, flags, environ):
    """Merge defaults < config file < $XFEROPS_SEED < flags into an ExperimentConfig."""
    values = {}
    if "config" in flags:
        values.update(read_config(flags["config"]))
    env_seed = environ.get(SEED_ENV)
    if env_seed not in (None, ""):
        values["seed"] = env_seed
    values.update({k: v for k, v in flags.items() if k in KEYS})
    if "op" in values:
        values["op"] = _parse_op(values["op"])
    if isinstance(values.get("export_paths"), str):
        values["export_paths"] = values["export_paths"].lower() in ("1", "true", "yes", "on")
    try:
        return ExperimentConfig(experiment=experiment, **values)
    except ValidationError as exc:
        msgs = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        raise UsageError(f"invalid configuration: {msgs}") from exc


def _remote(url, cfg):
    body = cfg.model_dump(exclude={"experiment", "out_dir", "format"})
    req = urllib.request.Request(f"{url.rstrip('/')}/experiments/{cfg.experiment}",
                                 data=json.dumps(body).encode(), method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            data = json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        raise UsageError(f"service rejected the request: {exc.read().decode(errors='replace')}") from exc
    except urllib.error.URLError as exc:
        raise UsageError(f"cannot reach service at {url}: {exc.reason}") from exc
    return [ExperimentResult.from_payload(d) for d in data["results"]]


def execute(cfg, remote=None, quiet=False, out=None):
    """Run, write reports and return the exit code."""
    out = sys.stdout if out is None else out
    if remote:
        results = _remote(remote, cfg)
    else:
        try:
            results = run_all(cfg) if cfg.experiment == ALL else [run_experiment(cfg)]
        except ValueError as exc:
            raise UsageError(f"{exc} (descriptor: {json.dumps(cfg.op)})") from exc
    ok = True
    for res in results:
        paths = write_reports(res, cfg)
        ok = ok and res.passed
        if not quiet:
            print(f"{res.name}: {'PASS' if res.passed else 'FAIL'}  " + " ".join(str(p) for p in paths),
                  file=out)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None, environ=None):
    import os
    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if ns.command == "serve":
            import uvicorn
            uvicorn.run("xferops.service:app", host=ns.host, port=ns.port)
            return EXIT_OK
        flags = vars(ns)
        experiment = flags.pop("experiment", None) if ns.command == "run" else ns.command
        cfg = resolve_config(experiment, flags, environ)
        return execute(cfg, flags.get("remote"), bool(flags.get("quiet")))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
