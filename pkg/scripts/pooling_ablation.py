"""Compare average pooling, max pooling and stride-2 conv pooling on a synthetic corpus.

Trains net6-avg, net6-max and net11 under one budget, then joins their
validation curves into one table:

    python3 scripts/pooling_ablation.py --out runs/pooling --iters 600
"""
from __future__ import annotations

import argparse
from fractions import Fraction
from pathlib import Path

from jstegcnn.arch import arch_by_name
from jstegcnn.ensemble import compare_runs, write_table
from jstegcnn.network import build_network
from jstegcnn.sim import SimConfig, make_synthetic_corpus
from jstegcnn.train import PlaneStore, TrainConfig, Trainer

ARCH_NAMES = ("net6-avg", "net6-max", "net11")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pooling")
    ap.add_argument("--iters", type=int, default=600)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--width", type=Fraction, default=Fraction(1, 3))
    ap.add_argument("--pairs", type=int, default=320)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--change-rate", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    n_val = args.pairs // 5
    ms = make_synthetic_corpus(out / "corpus", args.pairs, args.size,
                               SimConfig(change_rate=args.change_rate, rng_seed=args.seed),
                               splits=(("train", args.pairs - n_val), ("val", n_val)))
    train, val = PlaneStore(ms["train"]), PlaneStore(ms["val"])
    logs = {}
    for name in ARCH_NAMES:
        cfg = TrainConfig(max_iters=args.iters, checkpoint_every=args.every, rng_seed=args.seed)
        net = build_network(arch_by_name(name, args.width), rng_seed=args.seed)
        Trainer(net, train, cfg, out / name, val).run()
        logs[name] = out / name / "metrics.csv"
        print(f"{name}: done", flush=True)
    header, rows = compare_runs(logs)
    write_table(out / "val_error.csv", header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r))


if __name__ == "__main__":
    main()
