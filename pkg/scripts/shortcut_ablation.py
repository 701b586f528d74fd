"""Train net20 with and without shortcuts under one budget and compare training error.

    python3 scripts/shortcut_ablation.py --out runs/shortcut --seeds 0 1 2 --iters 300
"""
from __future__ import annotations

import argparse
import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from jstegcnn.arch import build_net20_spec
from jstegcnn.network import build_network
from jstegcnn.sim import SimConfig, make_synthetic_corpus
from jstegcnn.train import PlaneStore, TrainConfig, Trainer, error_on


def run_pair(train, val, iters, seed, width, window, out_dir=None):
    result = {}
    for short in (True, False):
        name = "net20" if short else "net20-noshort"
        cfg = TrainConfig(max_iters=iters, checkpoint_every=max(1, iters // 6), rng_seed=seed)
        net = build_network(build_net20_spec(width, shortcuts=short), rng_seed=seed)
        run_dir = None if out_dir is None else Path(out_dir) / f"seed{seed}" / name
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        tr = Trainer(net, train, cfg, run_dir, val).run()
        result[name] = {
            "train_error": tr.training_error(window),
            "train_loss": float(np.mean(tr.losses[-window:])),
            "val_error": error_on(net, val),
            "seconds": time.time() - t0,
        }
        print(f"seed {seed} {name:<14} " + " ".join(f"{k}={v:.4f}" for k, v in result[name].items()), flush=True)
    return result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/shortcut")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--window", type=int, default=100)
    ap.add_argument("--width", type=Fraction, default=Fraction(1, 3))
    ap.add_argument("--pairs", type=int, default=320)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--change-rate", type=float, default=0.3)
    ap.add_argument("--corpus-seed", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    n_val = args.pairs // 5
    ms = make_synthetic_corpus(out / "corpus", args.pairs, args.size,
                               SimConfig(change_rate=args.change_rate, rng_seed=args.corpus_seed),
                               splits=(("train", args.pairs - n_val), ("val", n_val)))
    train, val = PlaneStore(ms["train"]), PlaneStore(ms["val"])
    summary = {s: run_pair(train, val, args.iters, s, args.width, args.window, out) for s in args.seeds}
    wins = sum(r["net20"]["train_error"] < r["net20-noshort"]["train_error"] for r in summary.values())
    print(f"shortcut net lower training error in {wins}/{len(summary)} seeds")
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
