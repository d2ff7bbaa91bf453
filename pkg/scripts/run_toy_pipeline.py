#!/usr/bin/env python3
"""Run the desk-scale two-stage recipe and print the summary table.

    python3 scripts/run_toy_pipeline.py --work-dir exp/toy [--set key=value ...]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from lipvsr.cli import parse_and_dispatch

REPO = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=REPO / "configs" / "toy.conf")
    parser.add_argument("--work-dir", type=Path, default=Path("exp/toy"))
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    args = parser.parse_args()

    work = args.work_dir
    argv = ["pipeline", "--config", str(args.config),
            "--set", f"data.data_dir={work}/data",
            "--set", f"paths.work_dir={work}",
            "--set", f"paths.checkpoint_dir={work}/checkpoints"]
    for item in args.overrides:
        argv += ["--set", item]
    start = time.time()
    rc = parse_and_dispatch(argv)
    if rc:
        return rc
    summary = json.loads((work / "summary.json").read_text())
    print(f"\n{'system':<12}{'train CER':>11}{'dev CER':>10}{'eval CER':>10}{'dev loss':>10}")
    for name in ("stage1_avg", "stage2_avg", "rover"):
        if f"{name}_train_cer" not in summary:
            continue
        loss = summary.get(f"{name}_dev_loss")
        print(f"{name:<12}" + "".join(f"{summary[f'{name}_{s}_cer']:>10.2%} " for s in ("train", "dev", "eval"))
              + (f"{loss:>9.4f}" if loss is not None else f"{'-':>9}"))
    print(f"\nfinished in {time.time() - start:.0f}s; artifacts in {work}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
