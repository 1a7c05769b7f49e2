"""Physics-informed loss, Adam, and single-stage / successive training."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .jets import AdjointRecorder, DivergenceError, Node, param_gradient
from .network import (ConfigError, NetworkParams, TwoScaleConfig, default_widths,
                      forward_recorded, init_xavier)
from .problems import ProblemSpec, resolve_epsilon

# (upper step bound inclusive, learning rate)
PIECEWISE_SCHEDULE = ((10_000, 1e-3), (30_000, 5e-3), (50_000, 1e-3), (70_000, 5e-4), (math.inf, 1e-4))


def lr_at(step: int) -> float:
    """Default piecewise-constant learning rate at optimizer step ``step``."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    for bound, lr in PIECEWISE_SCHEDULE:
        if step <= bound:
            return lr
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training stage.

    ``lr=None`` selects the piecewise schedule (its step counter restarts at
    every stage); a float fixes the rate.  ``n_boundary=None`` uses the number
    of boundary conditions of the problem.  ``residual_form="unit-leading"``
    divides each residual equation by its leading coefficient before squaring;
    the default keeps the equations as written.
    """

    alpha: float = 1.0
    n_colloc: int = 300
    iterations: int = 1000
    lr: float | None = None
    seed: int = 0
    n_boundary: int | None = None
    resample: str = "per-stage"
    residual_form: str = "as-written"

    def __post_init__(self):
        if not self.alpha >= 1:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        if self.n_colloc < 1:
            raise ConfigError(f"n_colloc must be >= 1, got {self.n_colloc}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.n_boundary is not None and self.n_boundary < 1:
            raise ConfigError(f"n_boundary must be >= 1, got {self.n_boundary}")
        if self.resample not in ("per-stage", "per-iteration"):
            raise ConfigError(f"unknown resample policy {self.resample!r}")
        if self.residual_form not in RESIDUAL_FORMS:
            raise ConfigError(f"unknown residual form {self.residual_form!r}")

    def learning_rate(self, step: int) -> float:
        return lr_at(step) if self.lr is None else self.lr

    def scaled(self, factor: float) -> "TrainConfig":
        """Same config with the iteration budget multiplied by ``factor``."""
        return replace(self, iterations=max(1, int(round(self.iterations * factor))) if self.iterations else 0)


RESIDUAL_FORMS = ("as-written", "unit-leading")


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *key])


def sample_collocation(n: int, seed: int | np.random.Generator) -> np.ndarray:
    """``n`` sorted i.i.d. uniform points in the open interval (0, 1)."""
    if n < 1:
        raise ValueError(f"need at least one collocation point, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts = rng.random(n)
    while np.any(pts == 0.0):
        pts[pts == 0.0] = rng.random(int(np.sum(pts == 0.0)))
    return np.sort(pts)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


@dataclass
class LossEval:
    value: float
    residual_term: float
    boundary_term: float
    recorder: AdjointRecorder
    node: Node

    def gradient(self) -> np.ndarray:
        return param_gradient(self.recorder, self.node)


def loss_points(problem: ProblemSpec, points: np.ndarray) -> tuple[np.ndarray, list[float]]:
    """Interior points followed by the distinct boundary locations."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ConfigError("loss needs at least one collocation point")
    bpts = sorted({bc.tau for bc in problem.conditions})
    return np.concatenate([points, bpts]), bpts


def collocation_loss(out: Node, problem: ProblemSpec, points: np.ndarray, alpha: float,
                     n_boundary: int | None = None, residual_form: str = "as-written") -> LossEval:
    """Loss from recorded model output ``out`` of shape ``(N_c + n_bpts, n)``
    evaluated on :func:`loss_points`."""
    rec = out.rec
    points = np.asarray(points, dtype=float)
    _, bpts = loss_points(problem, points)
    nc = points.size
    interior = rec.take(out, slice(0, nc))
    slots = [rec.slot(interior, k) for k in range(problem.order + 1)]
    u = [slots[0][j] for j in range(problem.n)]
    du = [slots[1][j] for j in range(problem.n)]
    ddu = [slots[2][j] for j in range(problem.n)] if problem.order == 2 else None
    res = problem.residual(points, u, du, ddu)
    if residual_form == "unit-leading":
        res = [r * (1.0 / c) for r, c in zip(res, problem.leading)]
    res_sq = None
    for r in res:
        term = rec.sum(r * r)
        res_sq = term if res_sq is None else res_sq + term
    res_term = res_sq * (1.0 / nc)

    boundary = rec.slot(rec.take(out, slice(nc, nc + len(bpts))), 0)
    nb = len(problem.conditions) if n_boundary is None else n_boundary
    bnd_sq = None
    for bc in problem.conditions:
        row = bpts.index(bc.tau)
        diff = rec.take(boundary, (row, bc.component)) - bc.value
        term = diff * diff
        bnd_sq = term if bnd_sq is None else bnd_sq + term
    bnd_term = bnd_sq * (alpha / nb)
    total = res_term + bnd_term
    value = float(total.v)
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value!r}")
    return LossEval(value, float(res_term.v), float(bnd_term.v), rec, total)


def record_loss(params: NetworkParams, problem: ProblemSpec, points: np.ndarray,
                cfg: TwoScaleConfig | None, alpha: float, n_boundary: int | None = None,
                rec: AdjointRecorder | None = None, residual_form: str = "as-written") -> LossEval:
    """Discrete collocation loss of the network.

    ``mean_i |r(t_i)|^2 + alpha / N_b * sum_c (u_c(t_c) - g_c)^2`` where the
    boundary sum runs over the problem's conditions.
    """
    if params.n_out != problem.n:
        raise ConfigError(f"network outputs {params.n_out} components, {problem.name} has {problem.n}")
    if not problem.conditions:
        raise ConfigError("loss needs at least one boundary condition")
    rec = AdjointRecorder() if rec is None else rec
    taus, _ = loss_points(problem, points)
    out = forward_recorded(params, taus, cfg, rec)
    return collocation_loss(out, problem, points, alpha, n_boundary, residual_form)


def loss(params: NetworkParams, problem: ProblemSpec, cfg: TwoScaleConfig | None,
         points: np.ndarray, alpha: float = 1.0, n_boundary: int | None = None) -> LossEval:
    return record_loss(params, problem, points, cfg, alpha, n_boundary)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient; Adam step rejected")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("non-finite parameters after Adam step")
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# training runs
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    losses: np.ndarray
    lrs: np.ndarray
    stage_index: np.ndarray
    stage_boundaries: list[int]
    params: NetworkParams
    stage_params: list[NetworkParams]
    epsilons: list[float]
    wall_clock: float
    manifest: dict
    status: str = "ok"

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1]) if len(self.losses) else math.nan

    @property
    def manifest_hash(self) -> str:
        return manifest_hash(self.manifest)

    def history_rows(self):
        """``(iteration, loss, stage, lr)`` rows for CSV export."""
        for i, (l, s, lr) in enumerate(zip(self.losses, self.stage_index, self.lrs)):
            yield i, float(l), int(s), float(lr)


def manifest_hash(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _problem_manifest(problem: ProblemSpec) -> dict:
    return {"name": problem.name, "params": dict(problem.params), "eps_vec": list(problem.eps_vec)}


class TrainingDiverged(DivergenceError):
    def __init__(self, message, iteration, stage, report: RunReport):
        super().__init__(message, iteration, stage)
        self.report = report


def train_stage(problem: ProblemSpec, cfg: TrainConfig, init_params: NetworkParams,
                epsilon=None, gamma: float = -0.5, tau_c: float = 0.5, stage: int = 0,
                callback: Callable | None = None) -> RunReport:
    """Run ``cfg.iterations`` Adam steps on the collocation loss.

    ``epsilon`` is the effective parameter of the feature map (a value or a
    :func:`resolve_epsilon` choice; default geometric mean).  It is ignored for
    vanilla networks.
    """
    eps = resolve_epsilon(problem, epsilon if epsilon is not None else "geometric-mean")
    ts_cfg = None if init_params.vanilla else TwoScaleConfig(eps, gamma, tau_c)
    theta = init_params.flat().copy()
    params = init_params.copy()
    state = AdamState.zeros(theta.size)
    rng = _rng(cfg.seed, 1, stage)
    points = sample_collocation(cfg.n_colloc, rng)
    losses = np.empty(cfg.iterations)
    lrs = np.empty(cfg.iterations)
    start = time.perf_counter()
    manifest = {
        "version": __version__,
        "problem": _problem_manifest(problem),
        "epsilon": eps,
        "feature_map": "vanilla" if init_params.vanilla else "two-scale",
        "gamma": gamma,
        "tau_c": tau_c,
        "widths": list(init_params.widths),
        "config": asdict(cfg),
        "n_boundary": cfg.n_boundary or len(problem.conditions),
        "leading_coefficients": list(problem.leading),
        "lr_schedule": "piecewise (step counter restarts per stage)" if cfg.lr is None else f"fixed {cfg.lr!r}",
        "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "init": dict(init_params.meta),
    }

    def report(n_done, status):
        return RunReport(losses[:n_done].copy(), lrs[:n_done].copy(), np.full(n_done, stage),
                         [0], params, [params], [eps], time.perf_counter() - start,
                         {"stages": [manifest]}, status)

    for it in range(cfg.iterations):
        if cfg.resample == "per-iteration" and it > 0:
            points = sample_collocation(cfg.n_colloc, rng)
        lr = cfg.learning_rate(it)
        try:
            ev = record_loss(params, problem, points, ts_cfg, cfg.alpha, cfg.n_boundary,
                             residual_form=cfg.residual_form)
            grad = ev.gradient()
            theta, state = adam_step(theta, grad, state, lr)
        except DivergenceError as exc:
            raise TrainingDiverged(f"stage {stage}, iteration {it}: {exc}", it, stage,
                                   report(it, "diverged")) from exc
        losses[it] = ev.value
        lrs[it] = lr
        params = params.with_flat(theta)
        if callback is not None:
            callback(stage, it, ev.value)
    return report(cfg.iterations, "ok")


# ---------------------------------------------------------------------------
# successive training
# ---------------------------------------------------------------------------


def reduction_epsilons(eps0: float, eps: float, ell: float) -> list[float]:
    """Stage epsilons of the successive-training loop.

    Start at ``eps0``, divide by ``ell`` while the current value is at least
    ``ell * eps``, then finish at exactly ``eps`` unless the loop already
    landed there.
    """
    if not (eps0 > 0 and eps > 0):
        raise ConfigError("epsilons must be positive")
    if not ell > 1:
        raise ConfigError(f"reduction factor must exceed 1, got {ell}")
    if eps0 <= eps:
        return [float(eps)]
    seq = [float(eps0)]
    cur = float(eps0)
    while cur >= ell * eps * (1.0 - 1e-12):
        cur = cur / ell
        seq.append(cur)
    if math.isclose(seq[-1], eps, rel_tol=1e-9):
        seq[-1] = float(eps)
    else:
        seq.append(float(eps))
    return seq


@dataclass
class Stage:
    problem: ProblemSpec
    config: TrainConfig
    epsilon: float | str | None = None  # None: geometric mean of the stage problem

    def resolved_epsilon(self) -> float:
        return resolve_epsilon(self.problem, self.epsilon if self.epsilon is not None else "geometric-mean")


@dataclass
class CurriculumSchedule:
    stages: list[Stage] = field(default_factory=list)

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("a schedule needs at least one stage")
        eps = self.epsilons
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"stage epsilons must strictly decrease, got {eps}")

    @property
    def epsilons(self) -> list[float]:
        return [s.resolved_epsilon() for s in self.stages]

    @classmethod
    def from_values(cls, factory: Callable[[float], ProblemSpec], values: Sequence[float],
                    configs: Sequence[TrainConfig] | TrainConfig, epsilon=None) -> "CurriculumSchedule":
        """One stage per problem-parameter value (``factory(value)``)."""
        if isinstance(configs, TrainConfig):
            configs = [configs] * len(values)
        if len(configs) != len(values):
            raise ConfigError("need one TrainConfig per stage")
        return cls([Stage(factory(v), c, epsilon) for v, c in zip(values, configs)])

    @classmethod
    def from_reduction(cls, factory: Callable[[float], ProblemSpec], eps0: float, eps: float,
                       ell: float, base: TrainConfig, small_lr: float | None = 1e-4,
                       small_lr_below: float = 1e-2) -> "CurriculumSchedule":
        """Single-parameter schedule by repeated division; stages whose epsilon
        drops below ``small_lr_below`` switch to the fixed rate ``small_lr``."""
        values = reduction_epsilons(eps0, eps, ell)
        configs = [replace(base, lr=small_lr) if (small_lr is not None and v < small_lr_below) else base
                   for v in values]
        return cls.from_values(factory, values, configs)


def curriculum_train(schedule: CurriculumSchedule, init_params: NetworkParams | None = None,
                     vanilla: bool = False, widths=None, gamma: float = -0.5, tau_c: float = 0.5,
                     callback: Callable | None = None) -> RunReport:
    """Train stage by stage, warm-starting each from the previous one.

    Stage 0 starts from Xavier initialization seeded by its config (unless
    ``init_params`` is given).
    """
    first = schedule.stages[0]
    if init_params is None:
        widths = widths or default_widths(first.problem.n, vanilla)
        init_params = init_xavier(widths, [first.config.seed, 0], vanilla=vanilla)
        init_params.seed = first.config.seed
    params = init_params
    reports = []
    start = time.perf_counter()
    for j, st in enumerate(schedule.stages):
        try:
            rep = train_stage(st.problem, st.config, params, st.resolved_epsilon(), gamma, tau_c,
                              stage=j, callback=callback)
        except TrainingDiverged as exc:
            reports.append(exc.report)
            exc.report = _merge(reports, time.perf_counter() - start, "diverged")
            raise
        reports.append(rep)
        params = rep.params
    return _merge(reports, time.perf_counter() - start, "ok")


def _merge(reports: list[RunReport], wall: float, status: str) -> RunReport:
    bounds, k = [], 0
    for r in reports:
        bounds.append(k)
        k += len(r.losses)
    stage_index = np.concatenate([np.full(len(r.losses), j) for j, r in enumerate(reports)])
    return RunReport(
        np.concatenate([r.losses for r in reports]),
        np.concatenate([r.lrs for r in reports]),
        stage_index.astype(int),
        bounds,
        reports[-1].params,
        [r.params for r in reports],
        [r.epsilons[0] for r in reports],
        wall,
        {"stages": [r.manifest["stages"][0] for r in reports]},
        status,
    )
