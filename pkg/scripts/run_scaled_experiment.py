"""Train NODE, PNODE, HyperPNODE and HyperPNODE+PI on the 32x32 study, then fine-tune.

    python3 scripts/run_scaled_experiment.py --out runs/scaled
"""
import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from inrrom.experiment import ScaledSettings, run_finetune, run_models, summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/scaled")
    ap.add_argument("--epochs", type=int, default=None, help="override the 3000-epoch budget")
    ap.add_argument("--workers", type=int, default=1, help="parallel FOM solves")
    ap.add_argument("--skip-finetune", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    s = ScaledSettings()
    if args.epochs is not None:
        s = replace(s, epochs=args.epochs)
    ds, reports = run_models(args.out, s, args.workers)
    ft = None if args.skip_finetune else run_finetune(args.out, ds, s)
    result = summary(s, reports, ft)
    Path(args.out, "summary.json").write_text(json.dumps(result, indent=2, sort_keys=True))

    print(f"{'model':<16}{'params':>9}{'train avg':>12}{'train max':>12}{'test avg':>12}{'test max':>12}")
    for name, r in result["models"].items():
        print(f"{name:<16}{r['forecaster_parameters']:>9}{r['train_avg']:>12.4e}{r['train_max']:>12.4e}"
              f"{r['test_avg']:>12.4e}{r['test_max']:>12.4e}")
    if ft is not None:
        print(f"fine-tune {ft.model} at mu={ft.mu:g}: {ft.before:.4e} -> "
              + ", ".join(f"{a:.4e}" for a in ft.after))


if __name__ == "__main__":
    main()
