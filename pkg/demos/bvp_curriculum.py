"""Successive training on the linear boundary-layer BVP: start at eps0 and
divide by a reduction factor until the target is reached, warm-starting each
stage from the last.

    python3 demos/bvp_curriculum.py --target 1e-3 --iterations 2000
"""
import argparse

from twoscale import CurriculumSchedule, TrainConfig, curriculum_train, linear_bvp
from twoscale.experiments import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--start", type=float, default=1e-1)
    ap.add_argument("--target", type=float, default=1e-3)
    ap.add_argument("--factor", type=float, default=10.0)
    ap.add_argument("--iterations", type=int, default=2000, help="per stage")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = TrainConfig(alpha=100.0, n_colloc=300, iterations=args.iterations, seed=args.seed)
    schedule = CurriculumSchedule.from_reduction(linear_bvp, args.start, args.target, args.factor, cfg)
    report = curriculum_train(schedule)
    for j, (eps, params) in enumerate(zip(report.epsilons, report.stage_params)):
        errors = evaluate(params, linear_bvp(eps), eps)
        end = report.stage_boundaries[j + 1] if j + 1 < len(report.stage_boundaries) else report.losses.size
        print(f"stage {j}  eps {eps:.1e}  loss {report.losses[end - 1]:.3e}  "
              f"linf u {errors.linf[0]:.3e}  v {errors.linf[1]:.3e}")


if __name__ == "__main__":
    main()
