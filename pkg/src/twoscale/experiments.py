"""Experiment configuration, presets and the train / evaluate pipeline.

An :class:`ExperimentConfig` is a complete description of one run: problem,
network, training hyperparameters, curriculum and evaluation settings.  It
round-trips through a flat INI text (see ``README.md`` for the grammar) so the
file stored next to every run is enough to repeat it bit for bit.
"""

from __future__ import annotations

import configparser
import csv
import inspect
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import DEFAULT_GRID_POINTS, ErrorReport, error_report, uniform_grid
from .network import (ConfigError, NetworkParams, TwoScaleConfig, default_widths, forward,
                      load_checkpoint, save_checkpoint, _check_widths)
from .problems import REGISTRY, ProblemSpec, make_problem, resolve_epsilon
from .refsolve import GridSolution, reference_solution
from .training import (CurriculumSchedule, RunReport, Stage, TrainConfig, curriculum_train,
                       manifest_hash, reduction_epsilons)

DEFAULT_BUDGET_SCALE = 0.1
EPSILON_CHOICES = ("geometric-mean", "smallest", "largest")


@dataclass(frozen=True)
class StageSpec:
    """One curriculum stage: the value of the varied problem parameter and its
    training overrides (``lr=None`` is the piecewise schedule)."""

    value: float
    n_colloc: int
    iterations: int
    lr: float | None = None


@dataclass
class ExperimentConfig:
    problem: str
    problem_params: dict = field(default_factory=dict)
    vanilla: bool = False
    widths: tuple[int, ...] | None = None
    gamma: float = -0.5
    tau_c: float = 0.5
    effective_epsilon: str | float = "geometric-mean"
    alpha: float = 1.0
    n_colloc: int = 300
    iterations: int = 1000
    lr: float | None = None
    n_boundary: int | None = None
    resample: str = "per-stage"
    residual_form: str = "as-written"
    budget_scale: float = 1.0
    # None trains directly on the target problem
    stages: list[StageSpec] | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    grid_points: int = DEFAULT_GRID_POINTS
    reference: str = "auto"
    label: str = "run"

    def __post_init__(self):
        self.problem_params = {k: float(v) for k, v in self.problem_params.items()}
        if self.widths is not None:
            self.widths = tuple(int(w) for w in self.widths)
        self.seeds = [int(s) for s in self.seeds]

    # ------------------------------------------------------------------
    @property
    def varied_key(self) -> str:
        return REGISTRY[self.problem][1]

    def target_problem(self) -> ProblemSpec:
        return make_problem(self.problem, **self.problem_params)

    def stage_problem(self, value: float) -> ProblemSpec:
        return make_problem(self.problem, **{**self.problem_params, self.varied_key: value})

    def resolved_widths(self) -> tuple[int, ...]:
        return self.widths or default_widths(self.target_problem().n, self.vanilla)

    def stage_specs(self) -> list[StageSpec]:
        """Explicit stage list; a direct run is a single stage at the target."""
        if self.stages is None:
            value = self.target_problem().params[self.varied_key]
            return [StageSpec(value, self.n_colloc, self.iterations, self.lr)]
        return list(self.stages)

    def train_config(self, spec: StageSpec, seed: int) -> TrainConfig:
        cfg = TrainConfig(alpha=self.alpha, n_colloc=spec.n_colloc, iterations=spec.iterations,
                          lr=spec.lr, seed=seed, n_boundary=self.n_boundary, resample=self.resample,
                          residual_form=self.residual_form)
        return cfg.scaled(self.budget_scale)

    def schedule(self, seed: int) -> CurriculumSchedule:
        eps = None if self.effective_epsilon == "geometric-mean" else self.effective_epsilon
        return CurriculumSchedule([Stage(self.stage_problem(s.value), self.train_config(s, seed), eps)
                                   for s in self.stage_specs()])

    def final_epsilon(self) -> float:
        return resolve_epsilon(self.target_problem(), self.effective_epsilon)

    def validate(self) -> "ExperimentConfig":
        """Raise :class:`ConfigError` on any inconsistency, before compute."""
        if self.problem not in REGISTRY:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(REGISTRY)}")
        allowed = set(inspect.signature(REGISTRY[self.problem][0]).parameters)
        unknown = set(self.problem_params) - allowed
        if unknown:
            raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for {self.problem}; "
                              f"allowed: {sorted(allowed)}")
        problem = self.target_problem()
        widths = self.resolved_widths()
        _check_widths(widths)
        if widths[0] != (1 if self.vanilla else 3):
            raise ConfigError(f"widths {widths} do not match mode {'vanilla' if self.vanilla else '2snn'}")
        if widths[-1] != problem.n:
            raise ConfigError(f"last width {widths[-1]} but {self.problem} has {problem.n} components")
        TwoScaleConfig(1.0, self.gamma, self.tau_c)
        if isinstance(self.effective_epsilon, str) and self.effective_epsilon not in EPSILON_CHOICES:
            raise ConfigError(f"effective_epsilon must be one of {EPSILON_CHOICES} or a number")
        if not self.budget_scale > 0:
            raise ConfigError(f"budget_scale must be positive, got {self.budget_scale}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2")
        if self.reference not in ("auto", "radau", "rk4", "exact"):
            raise ConfigError(f"unknown reference method {self.reference!r}")
        specs = self.stage_specs()
        target = problem.params[self.varied_key]
        if not math.isclose(specs[-1].value, target, rel_tol=1e-12):
            raise ConfigError(f"last curriculum value {specs[-1].value} differs from "
                              f"{self.varied_key} = {target}")
        self.schedule(self.seeds[0])  # checks every stage config and the epsilon ordering
        return self

    # ------------------------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["problem"] = {"name": self.problem, **{k: repr(v) for k, v in self.problem_params.items()}}
        cp["network"] = {
            "mode": "vanilla" if self.vanilla else "2snn",
            "widths": ",".join(map(str, self.widths)) if self.widths else "default",
            "gamma": repr(self.gamma),
            "tau_c": repr(self.tau_c),
            "effective_epsilon": str(self.effective_epsilon) if isinstance(self.effective_epsilon, str)
            else repr(float(self.effective_epsilon)),
        }
        cp["training"] = {
            "alpha": repr(self.alpha),
            "n_colloc": str(self.n_colloc),
            "iterations": str(self.iterations),
            "lr": _fmt_lr(self.lr),
            "n_boundary": "auto" if self.n_boundary is None else str(self.n_boundary),
            "resample": self.resample,
            "residual_form": self.residual_form,
            "budget_scale": repr(self.budget_scale),
        }
        if self.stages is None:
            cp["curriculum"] = {"mode": "direct"}
        else:
            cp["curriculum"] = {
                "mode": "list",
                "values": ", ".join(repr(s.value) for s in self.stages),
                "n_colloc": ", ".join(str(s.n_colloc) for s in self.stages),
                "iterations": ", ".join(str(s.iterations) for s in self.stages),
                "lr": ", ".join(_fmt_lr(s.lr) for s in self.stages),
            }
        cp["evaluate"] = {"grid_points": str(self.grid_points), "reference": self.reference}
        cp["run"] = {"seeds": ", ".join(map(str, self.seeds)), "label": self.label}
        buf = _StringWriter()
        cp.write(buf)
        return buf.text

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable configuration: {exc}") from None
        unknown = set(cp.sections()) - set(SECTION_KEYS)
        if unknown:
            raise ConfigError(f"unknown section(s) {sorted(unknown)}")
        for name, keys in SECTION_KEYS.items():
            if name in cp and keys is not None:
                extra = set(cp[name]) - keys
                if extra:
                    raise ConfigError(f"unknown key(s) {sorted(extra)} in [{name}]")
        if "problem" not in cp or "name" not in cp["problem"]:
            raise ConfigError("[problem] name is required")
        try:
            return _parse_sections(cp)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_ini(text)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.resolved_widths())
        return d


SECTION_KEYS = {
    "problem": None,  # name plus problem parameters, checked in validate()
    "network": {"mode", "widths", "gamma", "tau_c", "effective_epsilon"},
    "training": {"alpha", "n_colloc", "iterations", "lr", "n_boundary", "resample", "residual_form",
                 "budget_scale"},
    "curriculum": {"mode", "values", "n_colloc", "iterations", "lr", "start", "factor"},
    "evaluate": {"grid_points", "reference"},
    "run": {"seeds", "label"},
}


class _StringWriter:
    def __init__(self):
        self.text = ""

    def write(self, s):
        self.text += s


def _fmt_lr(lr):
    return "ps" if lr is None else repr(float(lr))


def _parse_lr(s: str):
    s = s.strip().lower()
    return None if s in ("ps", "piecewise", "p-s") else float(s)


def _list(s: str, conv) -> list:
    return [conv(x) for x in s.replace(";", ",").split(",") if x.strip()]


def _broadcast(values: list, n: int, what: str) -> list:
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise ConfigError(f"curriculum {what} has {len(values)} entries for {n} stages")
    return values


def _parse_sections(cp) -> ExperimentConfig:
    p = cp["problem"]
    kw: dict = {"problem": p["name"].strip(),
                "problem_params": {k: float(v) for k, v in p.items() if k != "name"}}
    if "network" in cp:
        n = cp["network"]
        mode = n.get("mode", "2snn").strip().lower()
        if mode not in ("2snn", "vanilla"):
            raise ConfigError(f"network mode must be 2snn or vanilla, got {mode!r}")
        kw["vanilla"] = mode == "vanilla"
        w = n.get("widths", "default").strip()
        kw["widths"] = None if w == "default" else tuple(_list(w, int))
        kw["gamma"] = float(n.get("gamma", -0.5))
        kw["tau_c"] = float(n.get("tau_c", 0.5))
        e = n.get("effective_epsilon", "geometric-mean").strip()
        kw["effective_epsilon"] = e if e in EPSILON_CHOICES else float(e)
    if "training" in cp:
        t = cp["training"]
        for key, conv in (("alpha", float), ("n_colloc", int), ("iterations", _int),
                          ("budget_scale", float)):
            if key in t:
                kw[key] = conv(t[key])
        if "lr" in t:
            kw["lr"] = _parse_lr(t["lr"])
        if "n_boundary" in t:
            kw["n_boundary"] = None if t["n_boundary"].strip() == "auto" else int(t["n_boundary"])
        if "resample" in t:
            kw["resample"] = t["resample"].strip()
        if "residual_form" in t:
            kw["residual_form"] = t["residual_form"].strip()
    if "evaluate" in cp:
        ev = cp["evaluate"]
        if "grid_points" in ev:
            kw["grid_points"] = int(ev["grid_points"])
        if "reference" in ev:
            kw["reference"] = ev["reference"].strip()
    if "run" in cp:
        r = cp["run"]
        if "seeds" in r:
            kw["seeds"] = _list(r["seeds"], int)
        if "label" in r:
            kw["label"] = r["label"].strip()
    cfg = ExperimentConfig(**kw)
    if "curriculum" in cp:
        cfg.stages = _parse_curriculum(cp["curriculum"], cfg)
    return cfg


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ConfigError(f"iteration count must be an integer, got {s}")
    return int(v)


def _parse_curriculum(c, cfg: ExperimentConfig) -> list[StageSpec] | None:
    mode = c.get("mode", "direct").strip().lower()
    unused = {"direct": set(c) - {"mode"}, "list": set(c) & {"start", "factor"},
              "reduction": set(c) & {"values"}}.get(mode, set())
    if unused:
        raise ConfigError(f"curriculum mode {mode!r} does not use {sorted(unused)}")
    if mode == "direct":
        return None
    if mode == "list":
        if "values" not in c:
            raise ConfigError("curriculum mode 'list' needs values")
        values = _list(c["values"], float)
    elif mode == "reduction":
        if "start" not in c or "factor" not in c:
            raise ConfigError("curriculum mode 'reduction' needs start and factor")
        target = cfg.target_problem().params[cfg.varied_key]
        values = reduction_epsilons(float(c["start"]), target, float(c["factor"]))
    else:
        raise ConfigError(f"curriculum mode must be direct, list or reduction, got {mode!r}")
    n = len(values)
    ncs = _broadcast(_list(c.get("n_colloc", str(cfg.n_colloc)), int), n, "n_colloc")
    its = _broadcast(_list(c.get("iterations", str(cfg.iterations)), _int), n, "iterations")
    lrs = _broadcast(_list(c.get("lr", _fmt_lr(cfg.lr)), _parse_lr), n, "lr")
    return [StageSpec(v, nc, it, lr) for v, nc, it, lr in zip(values, ncs, its, lrs)]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

PS = None  # piecewise learning-rate schedule
MEDIAN_SEEDS = [0, 1, 2]  # comparison presets report medians over these


def _stages(values, n_colloc, iterations, lrs):
    return [StageSpec(v, nc, int(it), lr) for v, nc, it, lr in zip(values, n_colloc, iterations, lrs)]


def _preset_table3():
    values = [1e-1, 1e-2, 1e-3, 1e-4, 5e-5, 2.5e-5, 1.25e-5]
    return [ExperimentConfig(
        "mm-ivp", {"eps": 1.25e-5}, alpha=1.0, label="table3",
        stages=_stages(values, [300, 300, 450, 450, 450, 450, 450],
                       [3e4, 6e4, 6e4, 6e4, 3.5e4, 3.5e4, 3.5e4], [PS, PS, PS, 1e-4, 1e-4, 1e-4, 1e-4]))]


def _preset_table5():
    values = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    return [ExperimentConfig(
        "linear-bvp", {"eps": 1e-5}, alpha=100.0, label="table5",
        stages=_stages(values, [300, 300, 450, 450, 450], [3e4, 6e4, 6e4, 6e4, 6e4],
                       [PS, 1e-4, 1e-4, 1e-4, 1e-4]))]


def _preset_table7():
    return [ExperimentConfig(
        "robertson", {"k2": 100.0}, alpha=1e4, label="table7",
        stages=_stages([10.0, 50.0, 60.0, 100.0], [300] * 4, [5e4, 5e4, 5e4, 7e4], [PS, PS, 1e-4, 1e-4]))]


FHN_EPS2 = [1e-2, 1e-2 / 4, 1e-2 / 8, 1e-2 / 16, 1e-2 / 32, 2.5e-4]


def _preset_table11():
    return [ExperimentConfig(
        "fhn", {"eps2": 2.5e-4}, alpha=1000.0, label="table11",
        stages=_stages(FHN_EPS2, [450] * 6, [5e4, 5e4, 5e4, 5e4, 1.5e5, 1.5e5], [PS] + [1e-4] * 5))]


def _preset_fhn_curriculum_8():
    return [ExperimentConfig(
        "fhn", {"eps2": 1e-2 / 8}, alpha=1000.0, label="fhn-curriculum-1e-2-8",
        seeds=list(MEDIAN_SEEDS),
        stages=_stages(FHN_EPS2[:3], [450] * 3, [5e4] * 3, [PS, 1e-4, 1e-4]))]


def _preset_fhn_direct_8():
    base = ExperimentConfig("fhn", {"eps2": 1e-2 / 8}, alpha=1000.0, n_colloc=450, iterations=50_000,
                            seeds=list(MEDIAN_SEEDS), label="fhn-direct-1e-2-8-2snn")
    return [base, replace(base, vanilla=True, label="fhn-direct-1e-2-8-vanilla")]


def _preset_table10():
    base = ExperimentConfig("robertson", {"k2": 10.0}, alpha=1e4, n_colloc=300, iterations=50_000,
                            seeds=list(MEDIAN_SEEDS), label="table10-geometric-mean")
    return [base,
            replace(base, effective_epsilon="smallest", label="table10-smallest"),
            replace(base, vanilla=True, label="table10-vanilla")]


def _preset_mm_direct():
    return [ExperimentConfig("mm-ivp", {"eps": 1e-2}, alpha=1.0, n_colloc=300, iterations=30_000,
                             label="mm-direct-1e-2")]


PRESETS = {
    "table3": (_preset_table3, "mm-ivp curriculum 1e-1 -> 1.25e-5"),
    "table5": (_preset_table5, "linear-bvp curriculum 1e-1 -> 1e-5"),
    "table7": (_preset_table7, "robertson curriculum over k2 = 10, 50, 60, 100"),
    "table11": (_preset_table11, "fhn curriculum over eps2 = 1e-2 -> 2.5e-4"),
    "fhn-curriculum-1e-2-8": (_preset_fhn_curriculum_8, "fhn curriculum eps2 = 1e-2, 1e-2/4, 1e-2/8"),
    "fhn-direct-1e-2-8": (_preset_fhn_direct_8, "fhn eps2 = 1e-2/8 without curriculum, 2snn and vanilla"),
    "table10": (_preset_table10, "robertson k2 = 10 with geometric-mean, smallest, vanilla"),
    "mm-direct-1e-2": (_preset_mm_direct, "mm-ivp eps = 1e-2, stage-0 settings, direct"),
}


def preset(name: str, budget_scale: float = DEFAULT_BUDGET_SCALE, seeds=None) -> list[ExperimentConfig]:
    """Configs of a named preset with the iteration budget multiplied by
    ``budget_scale`` (1.0 is the full budget)."""
    try:
        build = PRESETS[name][0]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    out = []
    for cfg in build():
        cfg.budget_scale = float(budget_scale)
        if seeds is not None:
            cfg.seeds = [int(s) for s in seeds]
        out.append(cfg.validate())
    return out


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    config: ExperimentConfig
    seed: int
    report: RunReport
    errors: ErrorReport
    reference: GridSolution
    manifest: dict


_REF_CACHE: dict = {}


def reference_for(problem: ProblemSpec, method: str = "auto") -> GridSolution:
    """Reference solution, memoized per problem parameters within a process."""
    key = (problem.name, tuple(sorted(problem.params.items())), method)
    if key not in _REF_CACHE:
        _REF_CACHE[key] = reference_solution(problem, method=method)
    return _REF_CACHE[key]


def evaluate(params: NetworkParams, problem: ProblemSpec, epsilon: float | None, gamma: float = -0.5,
             tau_c: float = 0.5, grid_points: int = DEFAULT_GRID_POINTS, reference: str = "auto",
             ref: GridSolution | None = None) -> ErrorReport:
    """Errors of the network against the reference on a uniform grid."""
    if params.n_out != problem.n:
        raise ConfigError(f"network has {params.n_out} outputs, {problem.name} has {problem.n} components")
    grid = uniform_grid(grid_points)
    ref = reference_for(problem, reference) if ref is None else ref
    cfg = None if params.vanilla else TwoScaleConfig(epsilon, gamma, tau_c)
    nn = forward(params, grid, cfg).v
    return error_report(nn, ref(grid), grid, problem.scale_exponents, problem.components)


def run_manifest(cfg: ExperimentConfig, seed: int, report: RunReport) -> dict:
    return {
        "version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        "config_ini": cfg.to_ini(),
        "training": report.manifest,
        "training_hash": report.manifest_hash,
        "status": report.status,
    }


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, out_dir=None,
                   callback=None) -> RunResult:
    """Train one seed of ``cfg``, evaluate it and optionally write artifacts."""
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else int(seed)
    problem = cfg.target_problem()
    ref = reference_for(problem, cfg.reference)
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.to_ini())
    try:
        report = curriculum_train(cfg.schedule(seed), vanilla=cfg.vanilla, widths=cfg.resolved_widths(),
                                  gamma=cfg.gamma, tau_c=cfg.tau_c, callback=callback)
    except Exception as exc:
        partial = getattr(exc, "report", None)
        if out is not None and partial is not None:
            write_history(out / "loss_history.csv", partial)
            _write_json(out / "manifest.json", run_manifest(cfg, seed, partial))
        raise
    eps = report.epsilons[-1]
    errors = evaluate(report.params, problem, eps, cfg.gamma, cfg.tau_c, cfg.grid_points, ref=ref)
    manifest = run_manifest(cfg, seed, report)
    if out is not None:
        write_run_artifacts(out, cfg, report, errors, manifest)
    return RunResult(cfg, seed, report, errors, ref, manifest)


def write_history(path, report: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "stage", "lr"])
        for i, l, s, lr in report.history_rows():
            w.writerow([i, repr(l), s, repr(lr)])


def read_history(path) -> np.ndarray:
    """Loss column of a history CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["loss"]) for r in rows])


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))


def write_run_artifacts(out: Path, cfg: ExperimentConfig, report: RunReport, errors: ErrorReport,
                        manifest: dict) -> None:
    write_history(out / "loss_history.csv", report)
    for j, (params, eps) in enumerate(zip(report.stage_params, report.epsilons)):
        ts = None if params.vanilla else TwoScaleConfig(eps, cfg.gamma, cfg.tau_c)
        save_checkpoint(out / f"stage_{j}.ckpt", params, ts)
    errors.to_json(out / "errors.json")
    errors.to_csv(out / "errors.csv")
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "summary.json", {"seed": manifest["seed"], "final_loss": report.final_loss,
                                       "wall_clock": report.wall_clock,
                                       "manifest_hash": manifest_hash(manifest),
                                       "errors": errors.summary()})


def evaluate_checkpoint(path, cfg: ExperimentConfig, grid_points: int | None = None) -> ErrorReport:
    """Recompute errors of a stored checkpoint against a fresh reference."""
    cfg.validate()
    params, ts = load_checkpoint(path)
    if params.widths != cfg.resolved_widths():
        raise ConfigError(f"checkpoint widths {params.widths} differ from config {cfg.resolved_widths()}")
    eps = ts.epsilon if ts is not None else None
    gamma = ts.gamma if ts is not None else cfg.gamma
    tau_c = ts.tau_c if ts is not None else cfg.tau_c
    return evaluate(params, cfg.target_problem(), eps, gamma, tau_c,
                    grid_points or cfg.grid_points, cfg.reference)


def median_norms(results: list[RunResult]) -> dict:
    """Per-component medians over seeds of the scaled l-infinity and l2 norms."""
    linf = np.median([r.errors.scaled_linf for r in results], axis=0)
    l2 = np.median([r.errors.scaled_l2 for r in results], axis=0)
    names = results[0].errors.names
    return {"linf": dict(zip(names, linf.tolist())), "l2": dict(zip(names, l2.tolist()))}
