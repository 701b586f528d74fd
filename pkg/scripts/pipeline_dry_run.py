"""Corpus -> 50 training iterations at width 1/8 -> ensemble evaluation, via the CLI.

    python3 scripts/pipeline_dry_run.py --out runs/dry
"""
from __future__ import annotations

import argparse
import time
from pathlib import Path

from jstegcnn.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/dry")
    ap.add_argument("--iters", type=int, default=50)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "desk.cfg").write_text(f"max_iters={args.iters}\ncheckpoint_every={max(1, args.iters // 5)}\n")

    t0 = time.time()
    steps = [
        ["corpus", str(out / "data"), "--pairs", "64", "--size", "64", "--change-rate", "0.4", "--seed", "0"],
        ["train", "--manifest", str(out / "data/train.tsv"), "--val", str(out / "data/val.tsv"),
         "--config", str(out / "desk.cfg"), "--out", str(out / "run"), "--arch", "net20", "--width", "1/8"],
        ["eval", "--manifest", str(out / "data/test.tsv"), "--dir", str(out / "run"),
         "--checkpoints", ",".join(f"ck{args.iters - i * max(1, args.iters // 5)}" for i in range(3)),
         "--out", str(out / "report.csv")],
    ]
    for argv in steps:
        print("$ jstegcnn " + " ".join(argv), flush=True)
        rc = cli(argv)
        if rc:
            raise SystemExit(rc)
    print(f"dry run finished in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
