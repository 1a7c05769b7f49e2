import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale.jets import AdjointRecorder, DivergenceError, Jet2
from twoscale.network import ConfigError, TwoScaleConfig, default_widths, init_xavier
from twoscale.problems import fitzhugh_nagumo, linear_bvp, linear_bvp_exact, michaelis_menten
from twoscale.training import (AdamState, CurriculumSchedule, Stage, TrainConfig, adam_step,
                               collocation_loss, curriculum_train, loss, loss_points, lr_at, record_loss,
                               reduction_epsilons, sample_collocation, train_stage)

# --- sampling -------------------------------------------------------------------


def test_single_point_in_open_interval():
    for seed in range(20):
        p = sample_collocation(1, seed)
        assert p.shape == (1,) and 0.0 < p[0] < 1.0


def test_sampling_deterministic_and_sorted():
    a, b = sample_collocation(450, 3), sample_collocation(450, 3)
    assert np.array_equal(a, b)
    assert np.all(np.diff(a) >= 0)
    assert not np.array_equal(a, sample_collocation(450, 4))


def test_sampling_mean():
    means = [sample_collocation(450, s).mean() for s in range(100)]
    assert all(abs(m - 0.5) <= 0.05 for m in means)


def test_sampling_rejects_empty():
    with pytest.raises(ValueError):
        sample_collocation(0, 0)


# --- loss ---------------------------------------------------------------------------


def test_loss_vanishes_on_exact_bvp_solution():
    eps = 1e-1
    problem = linear_bvp(eps)
    points = sample_collocation(300, 0)
    taus, _ = loss_points(problem, points)
    u, du, ddu = linear_bvp_exact(eps, taus)
    rec = AdjointRecorder()
    ev = collocation_loss(rec.constant(Jet2(u, du, ddu)), problem, points, alpha=100.0)
    assert ev.value <= 1e-12


def _zero_params(n):
    p = init_xavier(default_widths(n), 0)
    return p.with_flat(np.zeros(p.n_params))


def test_zero_network_fhn_boundary_term():
    problem = fitzhugh_nagumo(1e-2)
    cfg = TwoScaleConfig(problem.effective_epsilon)
    for alpha in (1.0, 1000.0):
        ev = loss(_zero_params(3), problem, cfg, sample_collocation(50, 0), alpha=alpha)
        assert ev.boundary_term == pytest.approx(alpha * 2.29 / 3, rel=1e-14)
        assert ev.residual_term == 0.0


def test_boundary_term_linear_in_alpha():
    problem = michaelis_menten(1e-2)
    params = init_xavier(default_widths(2), 5)
    cfg = TwoScaleConfig(1e-2)
    pts = sample_collocation(40, 1)
    a = loss(params, problem, cfg, pts, alpha=3.0)
    b = loss(params, problem, cfg, pts, alpha=6.0)
    assert b.boundary_term == 2 * a.boundary_term
    assert b.residual_term == a.residual_term


def test_n_boundary_override():
    problem = fitzhugh_nagumo(1e-2)
    cfg = TwoScaleConfig(problem.effective_epsilon)
    ev = loss(_zero_params(3), problem, cfg, sample_collocation(10, 0), alpha=1.0, n_boundary=1)
    assert ev.boundary_term == pytest.approx(2.29)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 1e4))
def test_loss_nonnegative(seed, alpha):
    problem = fitzhugh_nagumo(1e-2)
    params = init_xavier(default_widths(3), seed)
    ev = loss(params, problem, TwoScaleConfig(0.02), sample_collocation(20, seed), alpha=alpha)
    assert ev.value >= 0 and ev.residual_term >= 0 and ev.boundary_term >= 0


def test_loss_rejects_mismatched_network():
    with pytest.raises(ConfigError):
        loss(init_xavier(default_widths(2), 0), fitzhugh_nagumo(1e-2), TwoScaleConfig(0.1),
             sample_collocation(5, 0))


def test_loss_rejects_empty_points():
    with pytest.raises(ConfigError):
        loss(init_xavier(default_widths(2), 0), michaelis_menten(0.1), TwoScaleConfig(0.1), np.array([]))


# --- learning rate and Adam -----------------------------------------------------


@pytest.mark.parametrize("step,lr", [(0, 1e-3), (5000, 1e-3), (10_000, 1e-3), (10_001, 5e-3),
                                     (20_000, 5e-3), (30_001, 1e-3), (50_000, 1e-3), (60_000, 5e-4),
                                     (70_001, 1e-4), (80_000, 1e-4)])
def test_lr_schedule(step, lr):
    assert lr_at(step) == lr


@given(st.integers(0, 10 ** 7))
def test_lr_total_and_piecewise_constant(step):
    assert lr_at(step) in (1e-3, 5e-3, 5e-4, 1e-4)
    if step not in (10_000, 30_000, 50_000, 70_000):
        assert lr_at(step) == lr_at(step + 1)


def test_lr_rejects_negative():
    with pytest.raises(ValueError):
        lr_at(-1)


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=10),
       st.sampled_from([1e-3, 5e-3, 1e-4]))
def test_first_adam_step_magnitude(grads, lr):
    g = np.array(grads)
    theta = np.zeros_like(g)
    new, state = adam_step(theta, g, AdamState.zeros(g.size), lr)
    step = np.abs(new - theta)
    assert np.all(step <= lr) and np.all(step >= 0.99 * lr)
    assert state.t == 1


def test_adam_zero_gradient():
    theta = np.array([1.0, -2.0])
    new, _ = adam_step(theta, np.zeros(2), AdamState.zeros(2), 1e-3)
    assert np.array_equal(new, theta)


def test_adam_rejects_nonfinite():
    with pytest.raises(DivergenceError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2), 1e-3)


def test_train_config_validation():
    for kw in (dict(alpha=0.5), dict(n_colloc=0), dict(iterations=-1), dict(lr=0.0),
               dict(n_boundary=0), dict(resample="never")):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)
    assert TrainConfig(iterations=50_000).scaled(0.1).iterations == 5000


# --- stages ----------------------------------------------------------------------


def test_zero_iterations():
    p0 = init_xavier(default_widths(2), 0)
    rep = train_stage(michaelis_menten(0.1), TrainConfig(iterations=0), p0)
    assert rep.losses.size == 0
    assert np.array_equal(rep.params.flat(), p0.flat())


def test_identical_runs_identical_trajectories():
    problem = michaelis_menten(0.1)
    cfg = TrainConfig(iterations=30, n_colloc=20, seed=2)
    p0 = init_xavier(default_widths(2), 2)
    a, b = train_stage(problem, cfg, p0), train_stage(problem, cfg, p0)
    assert np.array_equal(a.losses, b.losses)
    assert np.array_equal(a.params.flat(), b.params.flat())
    assert a.manifest_hash == b.manifest_hash


def test_bvp_desk_scale_decay():
    problem = linear_bvp(1e-1)
    cfg = TrainConfig(alpha=100.0, n_colloc=300, iterations=3000, seed=0)
    rep = train_stage(problem, cfg, init_xavier(default_widths(2), 0))
    assert rep.losses.size == 3000
    assert rep.final_loss <= rep.losses[0] / 10


def _warm_start(problem, alpha, iterations):
    cfg = TrainConfig(alpha=alpha, n_colloc=100, iterations=iterations, seed=1)
    first = train_stage(problem, cfg, init_xavier(default_widths(problem.n), 1))
    second = train_stage(problem, replace(cfg, iterations=100, lr=1e-4), first.params)
    return first.final_loss, second.losses


def test_warm_start_continuity():
    start, losses = _warm_start(michaelis_menten(0.1), 1.0, 5000)
    assert np.max(losses) <= 1.05 * start


def test_warm_start_window_end_stiff_bvp():
    # fresh Adam moments give sign-steps of size lr at first, so only the window end is checked
    start, losses = _warm_start(linear_bvp(1e-1), 100.0, 3000)
    assert losses[-1] <= 1.05 * start


def test_per_iteration_resampling_changes_points():
    problem = michaelis_menten(0.1)
    p0 = init_xavier(default_widths(2), 0)
    a = train_stage(problem, TrainConfig(n_colloc=30, iterations=5), p0)
    b = train_stage(problem, TrainConfig(n_colloc=30, iterations=5, resample="per-iteration"), p0)
    assert a.losses[0] == b.losses[0]
    assert not np.array_equal(a.losses, b.losses)


def test_divergence_carries_partial_report():
    problem = michaelis_menten(0.1)
    p0 = init_xavier(default_widths(2), 0)
    p0 = p0.with_flat(p0.flat() * 1e200)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train_stage(problem, TrainConfig(iterations=5), p0, stage=2)
    assert info.value.stage == 2 and info.value.iteration == 0
    assert info.value.report.status == "diverged"


# --- curriculum ---------------------------------------------------------------------


def test_reduction_trace():
    assert reduction_epsilons(1e-1, 1e-3, 10) == pytest.approx([1e-1, 1e-2, 1e-3])
    assert reduction_epsilons(1e-1, 3e-3, 10) == pytest.approx([1e-1, 1e-2, 3e-3])
    assert reduction_epsilons(1e-3, 1e-3, 10) == [1e-3]
    with pytest.raises(ConfigError):
        reduction_epsilons(1e-1, 1e-3, 1.0)


@settings(max_examples=100)
@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0), st.floats(1.5, 20.0))
def test_reduction_strictly_decreasing_to_target(a, b, ell):
    eps0, eps = max(a, b), min(a, b)
    seq = reduction_epsilons(eps0, eps, ell)
    assert seq[-1] == eps
    assert all(x > y for x, y in zip(seq, seq[1:]))


def test_mm_curriculum_schedule_epsilons():
    values = [1e-1, 1e-2, 1e-3, 1e-4, 5e-5, 2.5e-5, 1.25e-5]
    sched = CurriculumSchedule.from_values(michaelis_menten, values, TrainConfig(iterations=0))
    assert sched.epsilons == values


def test_schedule_rejects_non_decreasing():
    with pytest.raises(ConfigError):
        CurriculumSchedule.from_values(michaelis_menten, [1e-2, 1e-2], TrainConfig())
    with pytest.raises(ConfigError):
        CurriculumSchedule.from_values(michaelis_menten, [1e-3, 1e-2], TrainConfig())
    with pytest.raises(ConfigError):
        CurriculumSchedule([])


def test_from_reduction_lr_override():
    sched = CurriculumSchedule.from_reduction(michaelis_menten, 1e-1, 1e-3, 10, TrainConfig(iterations=1))
    assert [s.config.lr for s in sched.stages] == [None, None, 1e-4]


def test_single_stage_curriculum_equals_train_stage():
    problem = michaelis_menten(0.05)
    cfg = TrainConfig(n_colloc=30, iterations=40, seed=4)
    rep = curriculum_train(CurriculumSchedule([Stage(problem, cfg)]))
    direct = train_stage(problem, cfg, init_xavier(default_widths(2), [4, 0]))
    assert np.array_equal(rep.losses, direct.losses)
    assert np.array_equal(rep.params.flat(), direct.params.flat())


def test_curriculum_visits_stages_in_order():
    values = [1e-1, 3e-2, 1e-2]
    cfgs = [TrainConfig(n_colloc=20, iterations=n, seed=1) for n in (5, 7, 3)]
    sched = CurriculumSchedule.from_values(michaelis_menten, values, cfgs)
    seen = []
    rep = curriculum_train(sched, callback=lambda stage, it, value: seen.append(stage))
    assert rep.epsilons == values
    assert rep.stage_boundaries == [0, 5, 12]
    assert rep.losses.size == 15 == len(seen)
    assert list(rep.stage_index) == [0] * 5 + [1] * 7 + [2] * 3
    assert [m["epsilon"] for m in rep.manifest["stages"]] == values
    assert len(rep.stage_params) == 3
    # the learning rate column restarts the piecewise clock per stage
    assert all(lr == 1e-3 for lr in rep.lrs)


def test_curriculum_vanilla_and_hash():
    values = [1e-1, 1e-2]
    sched = CurriculumSchedule.from_values(michaelis_menten, values, TrainConfig(n_colloc=20, iterations=5))
    a = curriculum_train(sched, vanilla=True)
    b = curriculum_train(sched, vanilla=True)
    assert a.params.vanilla
    assert a.manifest_hash == b.manifest_hash
    other = CurriculumSchedule.from_values(michaelis_menten, values,
                                           TrainConfig(n_colloc=20, iterations=5, seed=9))
    assert curriculum_train(other, vanilla=True).manifest_hash != a.manifest_hash


def test_history_rows():
    rep = train_stage(michaelis_menten(0.1), TrainConfig(n_colloc=10, iterations=3),
                      init_xavier(default_widths(2), 0))
    rows = list(rep.history_rows())
    assert [r[0] for r in rows] == [0, 1, 2]
    assert all(r[2] == 0 and r[3] == 1e-3 for r in rows)


def test_unit_leading_residual_form():
    problem = michaelis_menten(1e-2)
    params = init_xavier(default_widths(2), 5)
    cfg = TwoScaleConfig(1e-2)
    pts = sample_collocation(40, 1)
    plain = loss(params, problem, cfg, pts, alpha=10.0)
    scaled = replace(problem, residual=lambda t, u, du, ddu: [r * (1.0 / c) for r, c in zip(
        problem.residual(t, u, du, ddu), problem.leading)])
    expect = loss(params, scaled, cfg, pts, alpha=10.0)
    got = record_loss(params, problem, pts, cfg, 10.0, residual_form="unit-leading")
    assert got.value == expect.value and got.boundary_term == plain.boundary_term
    np.testing.assert_array_equal(got.gradient(), expect.gradient())


def test_unknown_residual_form():
    with pytest.raises(ConfigError):
        TrainConfig(residual_form="divided")
