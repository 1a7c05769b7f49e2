"""Direct training on FitzHugh-Nagumo at eps2 = 1e-2/8 with the two-scale
and the vanilla network, reporting per-component medians over seeds.

The full budget (50000 iterations per run) takes about 2.5 minutes per run
on one core; the default here is a tenth of that.

    python3 demos/fhn_2snn_vs_vanilla.py --budget-scale 0.1 --seeds 0,1,2
"""
import argparse

from twoscale.experiments import median_norms, preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget-scale", type=float, default=0.1)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    for cfg in preset("fhn-direct-1e-2-8", args.budget_scale, seeds):
        results = [run_experiment(cfg, s) for s in seeds]
        med = median_norms(results)
        print(cfg.label)
        for name in med["linf"]:
            print(f"  {name}: median linf {med['linf'][name]:.3e}  median l2 {med['l2'][name]:.3e}")


if __name__ == "__main__":
    main()
