#!/usr/bin/env python3
"""Train one system per encoder variant on the same toy corpus, then fuse them.

Each system runs stage 1, top-k averaging, fine-tuning and averaging of all
fine-tuned epochs.  The stage-1 averages are fused into R1, and R1 is fused
with the fine-tuned averages into R2 (system order = the order of
``--variants``).

    python3 scripts/multi_encoder_rover.py --work-dir exp/multi
"""

import argparse
import sys
from pathlib import Path

from lipvsr.cli import (
    cmd_average,
    cmd_decode,
    cmd_finetune,
    cmd_gen_data,
    cmd_rover,
    cmd_score,
    cmd_train,
    ref_path,
)
from lipvsr.config import load_config

REPO = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=REPO / "configs" / "toy.conf")
    parser.add_argument("--work-dir", type=Path, default=Path("exp/multi"))
    parser.add_argument("--variants", nargs="+", default=["e_branchformer", "conformer", "branchformer"])
    parser.add_argument("--split", default="eval")
    parser.add_argument("--set", dest="overrides", action="append", default=[])
    args = parser.parse_args()

    data_dir = args.work_dir / "data"
    hyps = {1: [], 2: []}
    rows = []
    for i, variant in enumerate(args.variants):
        sys_dir = args.work_dir / variant
        cfg = load_config(args.config, [
            *args.overrides,
            f"model.encoder.variant={variant}",
            f"data.data_dir={data_dir}",
            f"paths.work_dir={sys_dir}",
            f"paths.checkpoint_dir={sys_dir}/checkpoints",
        ]).validate()
        if i == 0:
            cmd_gen_data(cfg)
        cmd_train(cfg)
        cmd_average(cfg, stage=1)
        cmd_finetune(cfg)
        cmd_average(cfg, stage=2)
        row = [f"M{i + 1} {variant}"]
        for stage in (1, 2):
            hyp = cmd_decode(cfg, sys_dir / "checkpoints" / f"stage{stage}_avg.ckpt", args.split)
            hyps[stage].append(hyp)
            row.append(cmd_score(ref_path(cfg, args.split), hyp))
        rows.append(row)

    ref = data_dir / f"{args.split}.ref"
    r1 = cmd_rover(hyps[1], args.work_dir / "rover" / f"R1_{args.split}.hyp")
    r2 = cmd_rover(hyps[1], args.work_dir / "rover" / f"R2_{args.split}.hyp", stage2=hyps[2])
    print(f"\n{'system':<20}{args.split + ' CER':>12}{'after FT':>12}")
    for name, cer1, cer2 in rows:
        print(f"{name:<20}{cer1:>12.2%}{cer2:>12.2%}")
    print(f"{'R1 (stage-1 ROVER)':<20}{cmd_score(ref, r1):>12.2%}")
    print(f"{'R2 (R1 + FT ROVER)':<20}{'':>12}{cmd_score(ref, r2):>12.2%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
