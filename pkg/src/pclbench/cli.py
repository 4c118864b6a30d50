"""Command-line entry point: ``pclbench <subcommand> [options]``.

Exit codes: 0 normal stop, 1 configuration or I/O error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SUBCOMMANDS = ("helmholtz", "poisson-nn", "poisson-1d", "conditioning", "selftest")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("pclbench")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    method: str = "pcl"
    domain: str = "square"
    refine: int = 3
    k: float = 0.5
    lam: Optional[float] = None
    set_id: int = 1
    layers: int = 1
    seed: int = 0
    n: Optional[int] = None
    max_iters: Optional[int] = None
    memory: int = 10
    target_error: Optional[float] = None
    lambdas: list = field(default_factory=lambda: [10.0 ** k for k in range(2, 11, 2)])
    out: Optional[str] = None
    summary: Optional[str] = None
    plot: bool = False

    def validate(self) -> "RunConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.method not in ("pcl", "pm"):
            raise ConfigError(f"--method must be pcl or pm, got {self.method!r}")
        if self.subcommand in ("helmholtz", "poisson-nn", "poisson-1d"):
            if self.method == "pm" and self.lam is None:
                raise ConfigError("--lambda is required with --method pm")
            if self.method == "pcl" and self.lam is not None:
                raise ConfigError("--lambda only applies to --method pm")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("--lambda must be positive")
        if self.domain not in ("square", "pipe"):
            raise ConfigError(f"--domain must be square or pipe, got {self.domain!r}")
        if not 0 <= self.refine <= 6:
            raise ConfigError("--refine must be in 0..6")
        if not self.k >= 0:
            raise ConfigError("--k must be nonnegative")
        if self.set_id not in (1, 2, 3, 4):
            raise ConfigError("--set must be 1, 2, 3 or 4")
        if not 1 <= self.layers <= 5:
            raise ConfigError("--layers must be in 1..5")
        if self.n is not None and self.n < 3:
            raise ConfigError("--n must be at least 3")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("--max-iters must be positive")
        if self.memory < 1:
            raise ConfigError("--memory must be positive")
        if self.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        if self.subcommand == "conditioning":
            lams = [float(x) for x in self.lambdas]
            if not lams or any(x <= 0 for x in lams) or any(b <= a for a, b in zip(lams, lams[1:])):
                raise ConfigError("--lambdas must be positive and increasing")
            self.lambdas = lams
        if self.subcommand != "selftest" and not self.out:
            raise ConfigError("--out is required")
        return self


def _env_seed() -> int:
    raw = os.environ.get("PCLBENCH_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"PCLBENCH_SEED must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    # defaults are SUPPRESS so that only flags given on the command line override the config file
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values (flags win)")
    common.add_argument("--out", help="trace CSV (or conditioning CSV) path")
    common.add_argument("--summary", help="summary JSON path (default: next to --out)")
    common.add_argument("--plot", action="store_true", help="also render a PNG next to the CSV")
    common.add_argument("--seed", type=int)
    common.add_argument("--max-iters", dest="max_iters", type=int)
    common.add_argument("--memory", type=int, help="L-BFGS history length")
    common.add_argument("--jobs", type=int, help="worker threads for --sweep")
    common.add_argument("--sweep", help="JSON list of option overrides, one run each")
    common.add_argument("-v", "--verbose", action="store_true")

    method = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    method.add_argument("--method", choices=["pcl", "pm"])
    method.add_argument("--lambda", dest="lam", type=float, help="penalty weight (pm only)")
    method.add_argument("--target-error", dest="target_error", type=float,
                        help="stop once the parameter error drops below this")

    p = argparse.ArgumentParser(prog="pclbench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="subcommand", required=True)
    h = sub.add_parser("helmholtz", parents=[common, method],
                       argument_default=argparse.SUPPRESS, help="parametric Helmholtz inverse problem")
    h.add_argument("--domain", choices=["square", "pipe"])
    h.add_argument("--refine", type=int)
    h.add_argument("--k", type=float)
    pn = sub.add_parser("poisson-nn", parents=[common, method],
                       argument_default=argparse.SUPPRESS, help="learn a diffusivity network in 2D")
    pn.add_argument("--set", dest="set_id", type=int)
    pn.add_argument("--layers", type=int)
    pn.add_argument("--n", type=int, help="grid nodes per direction")
    p1 = sub.add_parser("poisson-1d", parents=[common, method],
                       argument_default=argparse.SUPPRESS, help="learn a diffusivity network in 1D")
    p1.add_argument("--layers", type=int)
    p1.add_argument("--n", type=int, help="number of intervals")
    c = sub.add_parser("conditioning", parents=[common],
                       argument_default=argparse.SUPPRESS, help="penalty condition-number sweep")
    c.add_argument("--n", type=int, help="size of A = diag(1..n)")
    c.add_argument("--lambdas", type=float, nargs="+")
    sub.add_parser("selftest", parents=[common],
                       argument_default=argparse.SUPPRESS, help="gradient and Jacobian oracle checks")
    return p


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__ if f != "subcommand"}
_ALIASES = {"lambda": "lam", "set": "set_id", "refinement": "refine", "hidden_layers": "layers"}


def _normalize(d: dict, source: str) -> dict:
    out = {}
    for key, value in d.items():
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{source}: unknown option {key!r}")
        out[key] = value
    return out


def _load_json(path, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {what} {path}: {exc}") from None


def _make_config(subcommand: str, file_opts: dict, flag_opts: dict) -> RunConfig:
    opts = {"seed": _env_seed()}
    opts.update(file_opts)
    opts.update(flag_opts)
    try:
        cfg = RunConfig(subcommand=subcommand, **opts)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def parse_args(argv=None) -> RunConfig:
    """Parse flags (merged over ``--config``) into a validated :class:`RunConfig`.

    Raises :class:`ConfigError`; argparse usage errors raise ``SystemExit``.
    """
    return _parse(argv)[0]


def _parse(argv):
    ns = vars(build_parser().parse_args(argv))
    subcommand = ns.pop("subcommand")
    extras = {k: ns.pop(k) for k in ("config", "jobs", "sweep", "verbose") if k in ns}
    file_opts = {}
    if "config" in extras:
        data = _load_json(extras["config"], "config")
        if not isinstance(data, dict):
            raise ConfigError(f"config {extras['config']} must hold a JSON object")
        data.pop("subcommand", None)
        file_opts = _normalize(data, extras["config"])
    flag_opts = _normalize(ns, "command line")
    if "sweep" in extras:
        cfg = _make_config(subcommand, file_opts, {**flag_opts, "out": flag_opts.get("out", "sweep")})
    else:
        cfg = _make_config(subcommand, file_opts, flag_opts)
    return cfg, extras, file_opts, flag_opts


# -- running ------------------------------------------------------------------

def _check_output(path: str):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise ConfigError(f"output directory {parent} does not exist")


def _summary_path(cfg: RunConfig) -> Path:
    return Path(cfg.summary) if cfg.summary else Path(cfg.out).with_suffix(".json")


def _run_benchmark(cfg: RunConfig):
    from . import benchmarks as bm

    if cfg.subcommand == "helmholtz":
        return bm.run_helmholtz(cfg.method, cfg.domain, cfg.refine, cfg.k, lam=cfg.lam,
                                max_iters=cfg.max_iters or 1000, memory=cfg.memory,
                                target_error=cfg.target_error)
    if cfg.subcommand == "poisson-nn":
        return bm.run_poisson_nn(cfg.method, cfg.set_id, cfg.layers, lam=cfg.lam, seed=cfg.seed,
                                 n=cfg.n or 31, max_iters=cfg.max_iters or 5000, memory=cfg.memory,
                                 target_error=cfg.target_error)
    return bm.run_poisson_1d(cfg.method, n=cfg.n or 31, hidden_layers=cfg.layers, lam=cfg.lam,
                             seed=cfg.seed, max_iters=cfg.max_iters or 2000, memory=cfg.memory,
                             target_error=cfg.target_error)


def _run_conditioning(cfg: RunConfig) -> int:
    from .conditioning import ConditioningStudy, verify_theorem, write_csv

    n = cfg.n or 10
    rows = verify_theorem(ConditioningStudy(np.diag(np.arange(1.0, n + 1)), np.ones(n), cfg.lambdas))
    write_csv(rows, cfg.out)
    for r in rows:
        log.info("lambda=%.3e kappa=%.6e ratio=%.6e", r.lam, r.kappa_A_lambda, r.ratio)
    if cfg.plot:
        from .plotting import plot_conditioning
        plot_conditioning(cfg.out, Path(cfg.out).with_suffix(".png"))
    return EXIT_OK


def run(cfg: RunConfig) -> int:
    """Execute one validated configuration and write its outputs."""
    from .iga import GeometryError
    from .jacprop import FieldDomainError
    from .pcl import NewtonError
    from .sparse import SingularMatrixError

    if cfg.subcommand == "selftest":
        from .selftest import run_selftest
        return EXIT_OK if run_selftest(print) else EXIT_SOLVER
    _check_output(cfg.out)
    if cfg.subcommand == "conditioning":
        return _run_conditioning(cfg)
    summary = _summary_path(cfg)
    _check_output(summary)
    try:
        trace = _run_benchmark(cfg)
    except (SingularMatrixError, NewtonError, GeometryError, FieldDomainError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    trace.write_csv(cfg.out)
    extra = {k: v for k, v in trace.config.items() if k == "source_scale"}
    trace.config = {**config_dict(cfg), **extra}
    trace.write_summary(summary)
    if cfg.plot:
        from .plotting import plot_traces
        plot_traces([cfg.out], Path(cfg.out).with_suffix(".png"),
                    labels=[f"{cfg.subcommand} {cfg.method}"])
    log.info("%s %s: %s after %d iterations, error %.3e", cfg.subcommand, cfg.method,
             trace.stop_reason, trace.iterations, trace.final_error)
    return EXIT_OK


_RELEVANT = {
    "helmholtz": ("method", "lam", "domain", "refine", "k"),
    "poisson-nn": ("method", "lam", "set_id", "layers", "seed", "n"),
    "poisson-1d": ("method", "lam", "layers", "seed", "n"),
}


def config_dict(cfg: RunConfig) -> dict:
    """Configuration echo for the run summary."""
    d = asdict(cfg)
    keep = ("subcommand",) + _RELEVANT.get(cfg.subcommand, ()) + (
        "max_iters", "memory", "target_error", "out", "summary")
    return {k: d[k] for k in keep}


def _run_sweep(sweep_path, jobs: int, subcommand: str, file_opts: dict, flag_opts: dict) -> int:
    entries = _load_json(sweep_path, "sweep file")
    if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
        raise ConfigError(f"sweep file {sweep_path} must hold a JSON list of objects")
    configs = []
    for i, entry in enumerate(entries):
        # an entry overrides the config file and any flag it repeats
        opts = {**file_opts, **_normalize(entry, f"{sweep_path}[{i}]")}
        opts.update({k: v for k, v in flag_opts.items() if k not in entry})
        configs.append(_make_config(subcommand, {}, opts))
    outs = [c.out for c in configs]
    if len(set(outs)) != len(outs):
        raise ConfigError("every sweep entry needs its own 'out' path")
    for c in configs:
        _check_output(c.out)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        codes = list(pool.map(run, configs))
    return max(codes)


def main(argv=None) -> int:
    try:
        cfg, extras, file_opts, flag_opts = _parse(argv)
        logging.basicConfig(level=logging.INFO if extras.get("verbose") else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if "sweep" in extras:
            return _run_sweep(extras["sweep"], extras.get("jobs", 1), cfg.subcommand, file_opts, flag_opts)
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        where = f" ({exc.filename})" if exc.filename else ""
        print(f"error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        # argparse usage errors
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
