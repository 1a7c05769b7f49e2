"""Command-line front end: ``twoscale {list,reference,train,evaluate,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 reference-solver failure.  Run directories go under ``--out`` or, by
default, under ``$TWOSCALE_OUTPUT`` (``./runs`` when unset).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .experiments import (DEFAULT_BUDGET_SCALE, PRESETS, ExperimentConfig, evaluate_checkpoint,
                          median_norms, preset, reference_for, run_experiment)
from .jets import DivergenceError
from .metrics import uniform_grid
from .network import ConfigError
from .problems import REGISTRY, DomainError, make_problem
from .refsolve import SolverError

OUTPUT_ENV = "TWOSCALE_OUTPUT"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("twoscale")


def output_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "runs")


def _apply_overrides(text: str, overrides: list[str]) -> str:
    """Apply ``section.key=value`` overrides to INI text."""
    import configparser

    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    for item in overrides:
        lhs, eq, value = item.partition("=")
        section, dot, key = lhs.partition(".")
        if not eq or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key.strip()] = value.strip()
    lines = []
    for s in cp.sections():
        lines.append(f"[{s}]")
        lines += [f"{k} = {v}" for k, v in cp[s].items()]
    return "\n".join(lines) + "\n"


def load_configs(args) -> list[ExperimentConfig]:
    """Configs from ``--preset`` or ``--config`` (or ``--problem``), with
    ``--set`` overrides and budget flags applied, all validated."""
    scale = 1.0 if getattr(args, "full_budget", False) else getattr(args, "budget_scale", None)
    if getattr(args, "preset", None):
        cfgs = preset(args.preset, DEFAULT_BUDGET_SCALE if scale is None else scale)
        if getattr(args, "variant", None):
            cfgs = [c for c in cfgs if c.label == args.variant or c.label.endswith("-" + args.variant)]
            if not cfgs:
                raise ConfigError(f"preset {args.preset} has no variant {args.variant!r}")
        texts = [c.to_ini() for c in cfgs]
    elif getattr(args, "config", None):
        try:
            texts = [Path(args.config).read_text()]
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    elif getattr(args, "problem", None):
        texts = [f"[problem]\nname = {args.problem}\n"]
    else:
        raise ConfigError("give --preset, --config or --problem")
    out = []
    for text in texts:
        if getattr(args, "set", None):
            text = _apply_overrides(text, args.set)
        cfg = ExperimentConfig.from_ini(text)
        if scale is not None:
            cfg.budget_scale = scale
        if getattr(args, "seeds", None):
            cfg.seeds = [int(s) for s in args.seeds.split(",")]
        out.append(cfg.validate())
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_list(args) -> int:
    print("problems:")
    for name, (factory, key, default) in REGISTRY.items():
        p = make_problem(name)
        params = ", ".join(f"{k}={v:g}" for k, v in p.params.items())
        print(f"  {name:<11s} n={p.n} order={p.order} components={','.join(p.components)} "
              f"varied={key} params: {params}")
    print("presets:")
    for name, (_, desc) in PRESETS.items():
        print(f"  {name:<22s} {desc}")
    return EXIT_OK


def cmd_reference(args) -> int:
    cfg = load_configs(args)[0]
    problem = cfg.target_problem()
    method = args.method or cfg.reference
    if method == "rk4":
        from .refsolve import reference_solution
        sol = reference_solution(problem, "rk4", h=args.h)
    else:
        sol = reference_for(problem, method)
    path = Path(args.out) if args.out else output_root(None) / f"reference_{problem.name}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    times = uniform_grid(args.grid_points) if args.grid_points else None
    sol.to_csv(path, names=problem.components, times=times)
    print(f"{problem.describe()}: {sol.method} reference written to {path}")
    return EXIT_OK


def _run_one(job):
    cfg_text, seed, out_dir = job
    cfg = ExperimentConfig.from_ini(cfg_text)
    res = run_experiment(cfg, seed, out_dir)
    return seed, res.report.final_loss, res.errors.summary()


def _print_errors(label, seed, final_loss, summary):
    print(f"{label} seed={seed} final_loss={final_loss:.4g}")
    for name, c in summary["components"].items():
        print(f"  {name}: linf={c['scaled_linf']:.4g} l2={c['scaled_l2']:.4g} rel_linf={c['rel_linf']:.4g}"
              + (f" (scaled by {c['scale']:g})" if c["scale"] != 1 else ""))


def cmd_train(args) -> int:
    root = output_root(args.out)
    for cfg in load_configs(args):
        seeds = cfg.seeds if args.seeds else cfg.seeds[:1]
        for seed in seeds:
            out = root / cfg.label / f"seed-{seed}"
            log.info("training %s seed %d into %s", cfg.label, seed, out)
            res = run_experiment(cfg, seed, out)
            _print_errors(cfg.label, seed, res.report.final_loss, res.errors.summary())
    return EXIT_OK


def cmd_sweep(args) -> int:
    root = output_root(args.out)
    for cfg in load_configs(args):
        jobs = [(cfg.to_ini(), s, str(root / cfg.label / f"seed-{s}")) for s in cfg.seeds]
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                rows = list(pool.map(_run_one, jobs))
        else:
            rows = [_run_one(j) for j in jobs]
        for seed, final_loss, summary in rows:
            _print_errors(cfg.label, seed, final_loss, summary)
        names = list(rows[0][2]["components"])
        med = {key: {n: float(np.median([r[2]["components"][n][key] for r in rows])) for n in names}
               for key in ("scaled_linf", "scaled_l2")}
        (root / cfg.label).mkdir(parents=True, exist_ok=True)
        (root / cfg.label / "sweep.json").write_text(json.dumps(
            {"seeds": cfg.seeds, "median": med, "runs": {str(r[0]): r[2] for r in rows}}, indent=2))
        print(f"{cfg.label} median over seeds {cfg.seeds}: "
              + " ".join(f"{n}: linf={med['scaled_linf'][n]:.4g} l2={med['scaled_l2'][n]:.4g}" for n in names))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_configs(args)[0]
    rep = evaluate_checkpoint(args.checkpoint, cfg, args.grid_points)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rep.to_json(out / "errors.json")
        rep.to_csv(out / "errors.csv")
    _print_errors(cfg.label, "-", float("nan"), rep.summary())
    return EXIT_OK


# ---------------------------------------------------------------------------


def _config_args(p, budget=True):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="INI experiment file")
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--problem", choices=sorted(REGISTRY), help="catalog problem with defaults")
    p.add_argument("--variant", help="select one config of a multi-config preset by label suffix")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    if budget:
        b = p.add_mutually_exclusive_group()
        b.add_argument("--budget-scale", type=float, help=f"iteration multiplier (preset default {DEFAULT_BUDGET_SCALE})")
        b.add_argument("--full-budget", action="store_true", help="run presets at full iteration budgets")
        p.add_argument("--seeds", help="comma-separated seeds, overriding the config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoscale", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("list", help="list problems and presets")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("reference", help="write a reference solution CSV")
    _config_args(p, budget=False)
    p.add_argument("--method", choices=["auto", "radau", "rk4", "exact"])
    p.add_argument("--h", type=float, default=1e-5, help="RK4 step size")
    p.add_argument("--grid-points", type=int, help="resample on a uniform grid instead of solver nodes")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("train", help="train, evaluate and write run artifacts")
    _config_args(p)
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="recompute errors of a checkpoint")
    _config_args(p, budget=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid-points", type=int)
    p.add_argument("--out", help="directory for errors.json / errors.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train every seed of a config, report medians")
    _config_args(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel processes")
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SolverError as exc:
        print(f"reference solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
