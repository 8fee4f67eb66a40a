"""Command-line front end.

Subcommands::

    improx solve         run the outer method on an instance, write a JSON report
    improx gridsearch    grid baseline for the beam instance
    improx gen-scenarios sample and save a scenario file
    improx verify        run the invariant self-checks on an instance

Settings are resolved in this order, later entries winning: built-in
defaults (some depend on the instance), the JSON file given by ``--config``,
then explicit flags.  Every report echoes the resolved settings under
``"config"``; feeding that object back through ``--config`` reproduces the
run.  Reports keep everything that may vary between identical runs (timings,
thread count) under ``"runtime"``.

Reports go to ``--out`` or, if that is omitted, to ``$IMPROX_OUTPUT_DIR``
(default: the current directory).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import ConfigurationError, ImproxError, eval_improvement
from .models import build_dc_family, build_summax_family, check_b_stationarity
from .problems import (
    FOUR_NODE_TREE,
    BeamSpec,
    ScenarioSet,
    build_cantilever_instance,
    build_gas_instance,
    buffered_start,
    dc_toy_instance,
    gas_start,
    grid_search,
    load_scenarios,
    sample_scenarios,
    save_scenarios,
)
from .prox import CONVERGED, MAX_ITER, OuterParams, criticality_residual, solve

OUTPUT_ENV = "IMPROX_OUTPUT_DIR"
INSTANCES = ("beam", "gas", "dc-toy", "file")
EXIT_OK, EXIT_ERROR, EXIT_MAX_ITER = 0, 1, 2

# Instance-dependent defaults; "None" entries fall back to the generic table.
_INSTANCE_DEFAULTS = {
    "beam": {"N": 100000, "alpha": 0.999, "mu0": None},
    "gas": {"N": 10000, "alpha": 0.05, "mu0": 2.0},
    "dc-toy": {"N": None, "alpha": None, "mu0": None, "inner_tol": 1e-12},
}
_DEFAULTS = {
    "instance": "beam",
    "N": None,
    "alpha": None,
    "theta": 0.1,
    "seed": 42,
    "dist_param": "sd",
    "kappa": 0.3,
    "lambda": 0.1,
    "mu0": None,
    "tol": 1e-6,
    "gamma": 2.0,
    "max_iter": 10000,
    "inner_tol": None,
    "eps_dc": None,
    "tuples": 1,
    "grid": "1000x100",
    "scenarios": None,
    "storage": "inline",
    "starts": 20,
}
_RUNTIME_KEYS = ("threads",)


class UsageError(ImproxError):
    """Invalid command-line or config input."""


def _grid_shape(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        shape = int(a), int(b)
    except ValueError:
        raise UsageError(f"--grid expects AxB, got {text!r}") from None
    if min(shape) < 1:
        raise UsageError("grid dimensions must be positive")
    return shape


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", help="JSON file with settings (flags override it)")
    common.add_argument("--instance", choices=INSTANCES, default=S)
    common.add_argument("--scenarios", default=S, help="scenario file for --instance file (or to override sampling)")
    common.add_argument("--N", type=int, default=S, help="number of scenarios")
    common.add_argument("--alpha", type=float, default=S)
    common.add_argument("--theta", type=float, default=S, help="sigmoid smoothing (gas)")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--dist-param", dest="dist_param", choices=("sd", "var"), default=S,
                        help="read beam distribution spreads as standard deviations or variances")
    common.add_argument("--kappa", type=float, default=S)
    common.add_argument("--lambda", dest="lambda", type=float, default=S)
    common.add_argument("--mu0", type=float, default=S)
    common.add_argument("--tol", type=float, default=S)
    common.add_argument("--gamma", type=float, default=S, help="null-step growth factor")
    common.add_argument("--max-iter", dest="max_iter", type=int, default=S)
    common.add_argument("--inner-tol", dest="inner_tol", type=float, default=S)
    common.add_argument("--eps-dc", dest="eps_dc", type=float, default=S)
    common.add_argument("--tuples", type=int, default=S, help="max subgradient tuples per center")
    common.add_argument("--grid", default=S, help="grid shape, e.g. 1000x100")
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--storage", choices=("inline", "binary"), default=S)
    common.add_argument("--starts", type=int, default=S, help="random starts for verify on dc-toy")
    common.add_argument("--out", default=S, help="output file")
    common.add_argument("--quiet", action="store_true", default=S)

    parser = argparse.ArgumentParser(prog="improx", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "run the solver"), ("gridsearch", "grid-search baseline"),
                        ("gen-scenarios", "sample and save scenarios"), ("verify", "invariant self-checks")):
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def resolve_config(ns: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags."""
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    file_cfg = {}
    if ns.config:
        try:
            file_cfg = json.loads(Path(ns.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {ns.config}") from None
        except json.JSONDecodeError as err:
            raise UsageError(f"{ns.config}: {err.msg} (line {err.lineno}, column {err.colno})") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        file_cfg = {k.replace("-", "_") if k != "lambda" else k: v for k, v in file_cfg.items()}
        unknown = set(file_cfg) - set(_DEFAULTS) - {"threads", "out", "quiet"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = dict(_DEFAULTS, threads=1, out=None, quiet=False)
    cfg.update(file_cfg)
    cfg.update(flags)
    inst = cfg["instance"]
    if inst == "file":
        if not cfg["scenarios"]:
            raise UsageError("--instance file needs --scenarios PATH")
        inst = _file_instance(load_scenarios(cfg["scenarios"]))
    for k, v in _INSTANCE_DEFAULTS.get(inst, {}).items():
        if cfg.get(k) is None:
            cfg[k] = v
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    try:
        OuterParams(kappa=cfg["kappa"], lam=cfg["lambda"], mu0=cfg["mu0"], tol=cfg["tol"],
                    gamma=cfg["gamma"], max_iter=cfg["max_iter"], inner_tol=cfg["inner_tol"])
    except ConfigurationError as err:
        raise UsageError(str(err)) from None
    if cfg["N"] is not None and cfg["N"] < 1:
        raise UsageError("--N must be positive")
    if cfg["alpha"] is not None and not 0 < cfg["alpha"] < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if not cfg["theta"] > 0:
        raise UsageError("--theta must be positive")
    if cfg["tuples"] < 1:
        raise UsageError("--tuples must be at least 1")
    if cfg["threads"] < 1:
        raise UsageError("--threads must be at least 1")
    if cfg["eps_dc"] is not None and cfg["eps_dc"] < 0:
        raise UsageError("--eps-dc must be nonnegative")
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    _grid_shape(cfg["grid"])


def _file_instance(S: ScenarioSet) -> str:
    names = [d.name for d in S.distributions]
    if names == ["w_M", "w_T", "w_P"]:
        return "beam"
    if names and all(n.startswith("load") for n in names):
        return "gas"
    raise UsageError("cannot tell the instance type from the scenario file")


def _scenarios(cfg):
    return load_scenarios(cfg["scenarios"]) if cfg["scenarios"] else None


def build_instance(cfg: dict):
    """Return ``(problem, x0, model_builder, kind)`` for the configured instance."""
    inst = cfg["instance"]
    scen = _scenarios(cfg)
    if inst == "file":
        inst = _file_instance(scen)
    threads, tuples = cfg["threads"], cfg["tuples"]
    if inst == "beam":
        spec = BeamSpec(alpha=cfg["alpha"], N=cfg["N"], dist_param=cfg["dist_param"])
        P = build_cantilever_instance(spec, cfg["seed"], scenarios=scen)
        x0 = buffered_start(P, [spec.lower[0], spec.lower[1]])
        return P, x0, lambda p, c: build_summax_family(p, c, tuples, threads), inst
    if inst == "gas":
        P = build_gas_instance(FOUR_NODE_TREE, cfg["N"], cfg["theta"], cfg["alpha"], cfg["seed"], scenarios=scen)
        return P, gas_start(P), lambda p, c: build_summax_family(p, c, tuples, threads), inst
    if inst == "dc-toy":
        P = dc_toy_instance()
        eps = cfg["eps_dc"]
        return P, np.array([0.9]), lambda p, c: build_dc_family(p, c, eps), inst
    raise UsageError(f"unknown instance {inst!r}")


def _params(cfg) -> OuterParams:
    return OuterParams(kappa=cfg["kappa"], lam=cfg["lambda"], mu0=cfg["mu0"], tol=cfg["tol"],
                       gamma=cfg["gamma"], max_iter=cfg["max_iter"], inner_tol=cfg["inner_tol"])


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in _RUNTIME_KEYS + ("out", "quiet")}


def _out_path(cfg: dict, command: str) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    base = Path(os.environ.get(OUTPUT_ENV, "."))
    return base / f"{command}-{cfg['instance']}-seed{cfg['seed']}.json"


def _write(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def summary_table(rows) -> str:
    """Plain-text table with columns Iter, SS, CPU, c(x), f(x)."""
    head = f"{'instance':<10} {'Iter':>6} {'SS':>6} {'CPU':>9} {'c(x)':>12} {'f(x)':>12}"
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        cpu = rep.timing.get("cpu_seconds", math.nan)
        lines.append(f"{name:<10} {rep.iterations:>6d} {rep.serious_steps:>6d} {cpu:>8.2f}s "
                     f"{rep.c:>12.4e} {rep.f:>12.6g}")
    return "\n".join(lines)


def cmd_solve(cfg: dict) -> int:
    P, x0, builder, kind = build_instance(cfg)
    rep = solve(P, builder, x0, _params(cfg))
    doc = {"config": _echo(cfg), "result": rep.to_dict(timing=False),
           "runtime": {"threads": cfg["threads"], **rep.timing}}
    if kind == "dc-toy":
        ok, res = check_b_stationarity(P, rep.x, tol=cfg["tol"])
        # the certificate presumes Slater's condition, which is not checked;
        # flag points where the constraint is nearly active
        doc["result"]["b_stationarity"] = {
            "certified": ok, "residuals": {f"{j},{l}": v for (j, l), v in res.items()},
            "slater_assumed": abs(rep.c) <= cfg["tol"]}
    path = _out_path(cfg, "solve")
    _write(path, doc)
    if not cfg["quiet"]:
        print(summary_table([(kind, rep)]))
        print(f"status {rep.status}; x = {np.array2string(rep.x, precision=6)}; "
              f"criticality residual {rep.criticality_residual:.3e}")
        print(f"report: {path}")
    return EXIT_OK if rep.status == CONVERGED else EXIT_MAX_ITER


def cmd_gridsearch(cfg: dict) -> int:
    P, _, _, kind = build_instance(cfg)
    if kind != "beam":
        raise UsageError("gridsearch supports the beam instance only")
    t0, c0 = time.perf_counter(), time.process_time()
    res = grid_search(P, _grid_shape(cfg["grid"]))
    timing = {"wall_seconds": time.perf_counter() - t0, "cpu_seconds": time.process_time() - c0}
    doc = {"config": _echo(cfg), "result": res.to_dict(), "runtime": {"threads": cfg["threads"], **timing}}
    path = _out_path(cfg, "gridsearch")
    _write(path, doc)
    if not cfg["quiet"]:
        if res.feasible:
            print(f"best grid point {np.array2string(res.point, precision=3)} cost {res.cost:.3f} "
                  f"(AVaR {res.avar:.3e}, {res.evaluations} evaluations, {timing['cpu_seconds']:.1f}s CPU)")
        else:
            print("infeasible grid: no grid point satisfies the constraint")
        print(f"report: {path}")
    return EXIT_OK


def cmd_gen_scenarios(cfg: dict) -> int:
    inst = cfg["instance"]
    if inst == "beam":
        spec = BeamSpec(alpha=cfg["alpha"], N=cfg["N"], dist_param=cfg["dist_param"])
        S = sample_scenarios(spec.distributions(), cfg["N"], cfg["seed"])
    elif inst == "gas":
        S = sample_scenarios(FOUR_NODE_TREE.load_distributions(), cfg["N"], cfg["seed"])
    else:
        raise UsageError("gen-scenarios supports the beam and gas instances")
    path = Path(cfg["out"]) if cfg.get("out") else Path(os.environ.get(OUTPUT_ENV, ".")) / \
        f"scenarios-{inst}-N{cfg['N']}-seed{cfg['seed']}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_scenarios(S, path, cfg["storage"])
    if not cfg["quiet"]:
        print(f"wrote {S.N} scenarios x {S.n_vars} variables to {path}")
    return EXIT_OK


def _verify_family(P, builder, centers, rng, kind) -> list[tuple[str, bool, str]]:
    checks = []
    worst_a, worst_b, worst_conv = 0.0, -math.inf, -math.inf
    for x in centers:
        fam = builder(P, x)
        H = fam.H_center
        worst_a = max(worst_a, abs(fam.value(x) - H) / (1 + abs(H)))
        for m in fam.models:
            for _ in range(5):
                y = P.X.clip(x + rng.normal(scale=0.5, size=x.size))
                z = P.X.clip(x + rng.normal(scale=0.5, size=x.size))
                mid = 0.5 * (y + z)
                worst_conv = max(worst_conv, m(mid)[0] - 0.5 * (m(y)[0] + m(z)[0]))
        for _ in range(5):
            y = P.X.clip(x + rng.normal(scale=0.5, size=x.size))
            worst_b = max(worst_b, eval_improvement(P, x, y) - fam.value(y))
    checks.append(("model equals H at the center", worst_a <= 1e-10, f"max rel. gap {worst_a:.2e}"))
    checks.append(("models are convex (midpoint test)", worst_conv <= 1e-9, f"max excess {worst_conv:.2e}"))
    if kind == "dc-toy":
        checks.append(("model overestimates H", worst_b <= 1e-9, f"max H - M {worst_b:.2e}"))
    return checks


def cmd_verify(cfg: dict) -> int:
    P, x0, builder, kind = build_instance(cfg)
    rng = np.random.default_rng(cfg["seed"])
    params = _params(cfg)
    checks = []
    if kind == "dc-toy":
        P = P.with_rho(0.0)
        centers = [np.array([v]) for v in rng.uniform(-1, 1, 20)]
        checks += _verify_family(P, builder, centers, rng, kind)
        t0 = time.perf_counter()
        errs = []
        for s in rng.uniform(-1, 1, cfg["starts"]):
            rep = solve(P, builder, [s], params, certify=False)
            errs.append(abs(abs(rep.x[0]) - 0.5))
        dt = time.perf_counter() - t0
        checks.append((f"{cfg['starts']} random starts reach +-0.5", max(errs) <= 1e-5,
                       f"max error {max(errs):.2e} in {dt:.2f}s"))
        ok_half, _ = check_b_stationarity(P, [0.5])
        ok_zero, _ = check_b_stationarity(P, [0.0])
        checks.append(("0.5 certified B-stationary", ok_half, ""))
        checks.append(("0 rejected as B-stationary", not ok_zero, ""))
        r = criticality_residual(lambda c: build_dc_family(P, c, 0.0), [0.5], 1.0)
        checks.append(("criticality residual at 0.5", r <= 1e-6, f"{r:.2e}"))
    else:
        n = P.dimension
        centers = [x0] + [P.X.clip(x0 + rng.normal(scale=1.0, size=n)) for _ in range(2)]
        checks += _verify_family(P, builder, centers, rng, kind)
    ok = all(c[1] for c in checks)
    if not cfg["quiet"]:
        for name, passed, detail in checks:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {"solve": cmd_solve, "gridsearch": cmd_gridsearch, "gen-scenarios": cmd_gen_scenarios,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage error
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        cfg = resolve_config(ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as err:
        print(f"improx: error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (ImproxError, OSError, ValueError) as err:
        print(f"improx: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
