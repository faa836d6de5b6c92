"""Train snn-tiny with and without attention on two-class blobs and compare firing.

    python3 scripts/toy_fsta_vs_baseline.py --epochs 6 --seeds 0 1 2 --out reports/toy
"""
import argparse
from pathlib import Path

from fsta_snn.experiments import toy_comparison
from fsta_snn.io import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--out", type=Path, default=Path("reports/toy"))
    args = ap.parse_args()

    def show(r):
        tag = "fsta" if r.fsta else "base"
        print(f"seed {r.seed} {tag}: acc {r.accuracy:.4f} rate {r.firing.network_rate:.4f} ({r.seconds:.0f}s)",
              flush=True)

    cmp = toy_comparison(args.seeds, args.epochs, lr=args.lr, log=show)
    write_csv(args.out / "runs.csv", ["seed", "fsta", "accuracy", "network_rate", "seconds"],
              [(r.seed, int(r.fsta), r.accuracy, r.firing.network_rate, r.seconds) for r in cmp.results])
    rep = cmp.report
    write_csv(args.out / "reduction.csv", ["layer", "base_rate", "fsta_rate", "reduction"],
              list(zip(rep.layers, rep.base, rep.fsta, rep.reduction))
              + [("network", rep.network_base, rep.network_fsta, rep.network_reduction)])
    print(f"mean accuracy  base {cmp.mean_accuracy(False):.4f}  fsta {cmp.mean_accuracy(True):.4f}")
    print(f"network rate   base {rep.network_base:.4f}  fsta {rep.network_fsta:.4f}  "
          f"reduction {100 * (rep.network_reduction or 0):.2f}%")
    print(f"total {cmp.seconds:.0f}s; tables in {args.out}")


if __name__ == "__main__":
    main()
