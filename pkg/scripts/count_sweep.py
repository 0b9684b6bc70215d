"""Fixed-node error of H4 versus shadow count for the three Clifford ensembles.

Collects one archive of the largest count per (ensemble, seed), runs gamma=0
FCIQMC on nested prefixes and writes per-seed rows plus seed medians.

    python scripts/count_sweep.py --out results/count_sweep [--seeds 1 2 3] [--workers 4]
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from shadowfn.cli import RunConfig, ShadowSpec, load_problem, resolve_params, shadow_error_curve

ENSEMBLES = {"C8": ("Cn", None), "C4x2": ("Cpartitioned", 4), "C1x8": ("C1_tensor", None)}
COUNTS = (15625, 31250, 62500, 125000)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("results/count_sweep"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    parser.add_argument("--counts", type=int, nargs="+", default=list(COUNTS))
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()
    rows = []
    for label, (ens, bs) in ENSEMBLES.items():
        for seed in args.seeds:
            cfg = RunConfig(seed=seed, oracle="shadow", output=str(args.out),
                            shadows=ShadowSpec(ensemble=ens, block_size=bs, workers=args.workers))
            prob = load_problem(cfg)
            for row in shadow_error_curve(cfg, prob, resolve_params(cfg, prob), seed, args.counts):
                rows.append({"label": label, **row})
                print(f"{label:5s} seed {seed} {row['records']:7d}  {row['error_mha']:8.3f} mHa")
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "count_sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    medians = {label: {n: float(np.median([r["error_mha"] for r in rows if r["label"] == label and r["records"] == n]))
                       for n in sorted(args.counts)} for label in ENSEMBLES}
    (args.out / "count_sweep_medians.json").write_text(json.dumps(medians, indent=2) + "\n")
    print("median error (mHa)")
    for label, m in medians.items():
        print(f"{label:5s} " + "  ".join(f"{v:8.3f}" for v in m.values()))


if __name__ == "__main__":
    main()
