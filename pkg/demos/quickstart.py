"""Train a two-scale network on the Michaelis-Menten IVP and compare it with
the stiff reference solution.

    python3 demos/quickstart.py --iterations 3000
"""
import argparse

from twoscale import TrainConfig, init_xavier, default_widths, michaelis_menten, train_stage
from twoscale.experiments import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, default=1e-2)
    ap.add_argument("--iterations", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="write the pointwise errors here")
    args = ap.parse_args()

    problem = michaelis_menten(args.eps)
    cfg = TrainConfig(alpha=1.0, n_colloc=300, iterations=args.iterations, seed=args.seed)
    init = init_xavier(default_widths(problem.n), args.seed)
    report = train_stage(problem, cfg, init,
                         callback=lambda stage, it, loss: it % 500 == 0 and print(f"iter {it:6d}  loss {loss:.3e}"))
    errors = evaluate(report.params, problem, problem.effective_epsilon)
    print(f"final loss {report.final_loss:.3e} after {report.wall_clock:.1f} s")
    for name, linf, l2, rel in zip(errors.names, errors.linf, errors.l2, errors.rel_linf):
        print(f"{name}: linf {linf:.3e}  l2 {l2:.3e}  relative linf {rel:.3e}")
    if args.csv:
        errors.to_csv(args.csv)


if __name__ == "__main__":
    main()
