"""Optimize LUCJ parameters for the H4 fixture and store them as package data.

    python scripts/make_h4_params.py [--seed 0]
"""

import argparse
import shutil
import tempfile
from pathlib import Path

from shadowfn.cli import RunConfig, cmd_optimize, default_fcidump

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "shadowfn" / "data" / "h4_lucj_params.json"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        cfg = RunConfig(seed=args.seed, system=str(default_fcidump()), output=tmp)
        report = cmd_optimize(cfg)
        shutil.copyfile(report["params"], args.out)
    print(f"E = {report['energy']:.10f} Ha ({report['error_mha']:.3f} mHa above FCI) -> {args.out}")


if __name__ == "__main__":
    main()
