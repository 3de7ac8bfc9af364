"""End-to-end desk-scale run: data -> stage 1 -> stage 2 -> eval -> report.

Writes everything under --out (default runs/desk). Expect roughly an hour
on a 2-core CPU with the default step counts; shrink --ae-steps/--img-steps
for a quicker smoke pass.
"""

import argparse
import json
import sys
from pathlib import Path

from scenerecon.cli import main as cli


def run(argv) -> int:
    rc = cli(argv)
    if rc != 0:
        print(f"command failed ({rc}): {' '.join(argv)}", file=sys.stderr)
    return rc


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ae-steps", type=int, default=2500)
    ap.add_argument("--img-steps", type=int, default=2000)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_cfg = out / "data.json"
    data_cfg.write_text(json.dumps({
        "data": {"train": 64, "val": 8, "k_choices": [1, 2],
                 "n_complete": 2048, "image_size": 64, "base_seed": args.seed},
    }, indent=1))
    train_cfg = out / "train.json"
    train_cfg.write_text(json.dumps({
        "stage1": {"m_tokens": 64, "channels": 64},
        "stage2": {"image_size": 64, "patch_size": 8, "layers": 4, "channels": 64},
        "flow": {"step_size": 0.04},
        "train": {"batch_size": 4, "n_train": 2048, "checkpoint_every": 250},
    }, indent=1))

    manifest = out / "data" / "manifest.jsonl"
    ae = out / "stage1.nck"
    img = out / "stage2.nck"
    steps = [
        ["gen-data", "--config", str(data_cfg), "--out", str(out / "data")],
        ["train-ae", "--config", str(train_cfg), "--data", str(manifest),
         "--out", str(ae), "--steps", str(args.ae_steps), "--seed", str(args.seed)],
        ["train-img", "--config", str(train_cfg), "--data", str(manifest),
         "--stage1", str(ae), "--out", str(img), "--steps", str(args.img_steps),
         "--seed", str(args.seed)],
        ["eval", "--data", str(manifest), "--stage1", str(ae), "--stage2", str(img),
         "--points", "2048", "--out", str(out / "eval"), "--seed", str(args.seed)],
        ["report", "--runs", f"desk={out / 'eval'}", "--out", str(out / "report")],
    ]
    for argv in steps:
        rc = run(argv)
        if rc != 0:
            return rc
    print(f"done: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
