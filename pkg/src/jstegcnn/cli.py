"""Command-line entry point: ``jstegcnn <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .arch import ARCHS, ArchError, ArchSpec, arch_by_name
from .checkpoint import CheckpointError, CheckpointStore, load_checkpoint, network_from_checkpoint
from .ensemble import compare_runs, evaluate, write_table
from .frontend import PreprocConfig, decompress_no_round, preprocess, read_jcf, write_jcf
from .gradcheck import run_suite
from .manifest import read_manifest
from .network import Network, build_network
from .sim import SimConfig, make_synthetic_corpus, simulate_stego
from .train import ConfigError, DivergenceError, PlaneStore, TrainConfig, Trainer, finetune_init

log = logging.getLogger("jstegcnn")


class UsageError(Exception):
    pass


def _width(text: str) -> Fraction:
    try:
        return Fraction(text).limit_denominator(24)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad width {text!r}") from None


def _splits(text: str):
    out = []
    for part in text.split(","):
        name, _, val = part.partition("=")
        out.append((name.strip(), float(val)))
    return tuple(out)


def _spec_from_args(args) -> ArchSpec:
    if args.arch_file:
        return ArchSpec.from_text(Path(args.arch_file).read_text())
    return arch_by_name(args.arch, args.width)


def _load_config(args) -> TrainConfig:
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_preprocess(args):
    plane = read_jcf(args.input)
    if args.bands:
        arr = preprocess(plane, PreprocConfig(truncation_threshold=args.threshold))
    else:
        arr = decompress_no_round(plane)
    np.save(args.output, arr)
    print(f"{args.output}: {arr.shape}")


def cmd_simulate(args):
    cover = read_jcf(args.input)
    stego = simulate_stego(cover, SimConfig(args.change_rate, args.payload, args.seed))
    write_jcf(args.output, stego)
    changed = int(np.abs(stego.coeffs.astype(int) - cover.coeffs).sum())
    print(f"{args.output}: {changed} coefficients changed")


def cmd_corpus(args):
    cfg = SimConfig(args.change_rate, args.payload, args.seed)
    manifests = make_synthetic_corpus(args.out, args.pairs, args.size, cfg, args.quality, _splits(args.splits))
    for name, m in manifests.items():
        print(f"{Path(args.out) / (name + '.tsv')}: {len(m)} pairs")


def _train(args, init_from=None):
    spec = _spec_from_args(args)
    cfg = _load_config(args)
    net = build_network(spec, rng_seed=cfg.rng_seed)
    if init_from is not None:
        finetune_init(net, load_checkpoint(init_from))
    train = PlaneStore(read_manifest(args.manifest), args.cache)
    val = PlaneStore(read_manifest(args.val), args.cache) if args.val else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "arch.txt").write_text(spec.to_text())
    (out / "config.txt").write_text(cfg.to_text())
    trainer = Trainer(net, train, cfg, out, val)
    if args.resume:
        trainer.resume(load_checkpoint(CheckpointStore(out).resolve(args.resume)))
    trainer.run()
    print(f"{out}: {len(trainer.ckpts.iterations())} checkpoints, final loss {trainer.losses[-1]:.4f}"
          if trainer.losses else f"{out}: nothing to do")


def cmd_train(args):
    _train(args)


def cmd_finetune(args):
    _train(args, init_from=args.init_from)


def cmd_eval(args):
    dirs = args.dir or ["."]
    names = [c for c in args.checkpoints.split(",") if c]
    nets, used = [], []
    for d in dirs:
        store = CheckpointStore(d)
        for name in names:
            path = store.resolve(name)
            nets.append(network_from_checkpoint(path))
            used.append(str(path))
    report = evaluate(nets, PlaneStore(read_manifest(args.manifest), args.cache), checkpoints=used)
    if args.out:
        report.write_csv(args.out)
    print(report.summary())


def cmd_gradcheck(args):
    reports = run_suite(args.seed)
    for r in reports:
        print(r.line())
    ok = all(r.passed for r in reports)
    print("gradcheck:", "all passed" if ok else "FAILED")
    return 0 if ok else 1


def cmd_compare(args):
    logs = {}
    for item in args.logs:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).parent.name or item, item
        logs[name] = path
    header, rows = compare_runs(logs, args.column)
    if args.out:
        write_table(args.out, header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) for v in r))


def cmd_arch(args):
    spec = _spec_from_args(args)
    sys.stdout.write(spec.to_text())
    print(f"# conv layers={spec.conv_layer_count()} longest={spec.longest_conv_path()} "
          f"shortest={spec.shortest_conv_path()} features={spec.feature_dim()} params={spec.param_count()}")


# ---------------------------------------------------------------------------

def _add_arch_args(p):
    p.add_argument("--arch", default="net20", help=f"one of: {', '.join(ARCHS)}")
    p.add_argument("--width", type=_width, default=None, help="width multiplier, e.g. 1, 0.667, 1/8")
    p.add_argument("--arch-file", help="ArchSpec text file (overrides --arch)")


def _add_train_args(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--val")
    p.add_argument("--config", help="flat key=value TrainConfig file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--resume", help="checkpoint name in --out to resume from")
    p.add_argument("--cache", help="directory for cached decompressed planes")
    _add_arch_args(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jstegcnn", description="CNN steganalysis of JPEG coefficient planes")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="JCF file -> decompressed plane (.npy)")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--bands", action="store_true", help="save the truncated 16-band tensor instead")
    p.add_argument("--threshold", type=float, default=8.0)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("simulate", help="cover JCF -> simulated stego JCF")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--change-rate", type=float, default=0.4)
    p.add_argument("--payload", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("corpus", help="write a synthetic cover/stego corpus")
    p.add_argument("out")
    p.add_argument("--pairs", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--change-rate", type=float, default=0.4)
    p.add_argument("--payload", type=float, default=0.4)
    p.add_argument("--quality", type=int, default=75)
    p.add_argument("--splits", default="train=0.5,val=0.25,test=0.25",
                   help="name=fraction (or name=count) list")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_corpus)

    p = sub.add_parser("train", help="train a network, checkpointing periodically")
    _add_train_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune", help="train starting from another run's checkpoint")
    _add_train_args(p)
    p.add_argument("--init-from", required=True)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate one checkpoint or an ensemble")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoints", required=True, help="comma separated, e.g. ck80000,ck85000,ck90000")
    p.add_argument("--dir", action="append", help="run directory; repeat to ensemble several runs")
    p.add_argument("--out", help="EvalReport CSV")
    p.add_argument("--cache")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("compare", help="join metrics CSVs on iteration")
    p.add_argument("logs", nargs="+", help="name=metrics.csv")
    p.add_argument("--column", default="val_error")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("arch", help="print an ArchSpec and its graph audit")
    _add_arch_args(p)
    p.set_defaults(fn=cmd_arch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.fn(args)
    except (ArchError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, DivergenceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
