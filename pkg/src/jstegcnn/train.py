"""Pair-aware SGD training with periodic checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, CheckpointStore, restore, snapshot
from .ensemble import classification_error, predict_probs
from .frontend import PreprocConfig, decompress_no_round, read_jcf, spatial_to_input
from .layers import softmax_cross_entropy
from .manifest import DatasetManifest
from .network import Network
from .optim import sgd_momentum_step

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.001
    lr_decay_factor: float = 0.9
    lr_decay_every: int = 5000
    momentum: float = 0.9
    batch_pairs: int = 16
    checkpoint_every: int = 5000
    max_iters: int = 90000
    weight_decay: float = 5e-4
    rng_seed: int = 0
    augment: bool = True
    # recompute BN population statistics before each checkpoint; 0 disables
    bn_refresh_batches: int = 64

    def __post_init__(self):
        for f in ("base_lr", "lr_decay_factor", "lr_decay_every", "batch_pairs",
                  "checkpoint_every", "max_iters"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"{f} must be positive, got {getattr(self, f)}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.bn_refresh_batches < 0:
            raise ConfigError("bn_refresh_batches must be non-negative")

    @property
    def batch_size(self) -> int:
        return 2 * self.batch_pairs

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(types[key], value)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _parse_value(typ, value: str):
    if typ in (bool, "bool"):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    if typ in (int, "int"):
        return int(value)
    return float(value)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return cfg.base_lr * cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


def checkpoint_schedule(cfg: TrainConfig) -> list[int]:
    return list(range(cfg.checkpoint_every, cfg.max_iters + 1, cfg.checkpoint_every))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

class PlaneStore:
    """Decompressed spatial planes for every pair of a manifest, held in memory.

    The filter bank is fixed, so only the decompressed plane needs caching;
    augmentation acts on it before the filter bank runs.  With ``cache_dir``
    set, planes are also kept on disk as ``.npy``.
    """

    def __init__(self, manifest: DatasetManifest, cache_dir=None):
        self.manifest = manifest
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.covers: list[np.ndarray] = []
        self.stegos: list[np.ndarray] = []
        for rec in manifest.records:
            c = self._load(rec.cover_path)
            s = self._load(rec.stego_path)
            if c.shape != s.shape:
                raise ValueError(f"pair {rec.pair_id}: cover {c.shape} and stego {s.shape} differ in size")
            self.covers.append(c)
            self.stegos.append(s)

    def _load(self, rel: str) -> np.ndarray:
        src = self.manifest.resolve(rel)
        if self.cache_dir is not None:
            key = hashlib.sha1(str(src.resolve()).encode()).hexdigest()[:16]
            cached = self.cache_dir / f"{key}.npy"
            if cached.exists():
                return np.load(cached)
        plane = decompress_no_round(read_jcf(src))[0, 0]
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            np.save(cached, plane)
        return plane

    def __len__(self):
        return len(self.covers)

    def labelled_images(self):
        names, planes, labels = [], [], []
        for rec, c, s in zip(self.manifest.records, self.covers, self.stegos):
            names += [f"{rec.pair_id}/cover", f"{rec.pair_id}/stego"]
            planes += [c, s]
            labels += [0, 1]
        return names, planes, np.array(labels, dtype=np.int64)


class PairSampler:
    """Epoch-wise shuffled pair order; a batch may run into the next epoch."""

    def __init__(self, n_pairs: int, batch_pairs: int, rng: np.random.Generator):
        if n_pairs < 1:
            raise ValueError("training split is empty")
        self.n_pairs, self.batch_pairs, self.rng = n_pairs, batch_pairs, rng
        self.epoch = 0
        self.order = rng.permutation(n_pairs)
        self.cursor = 0
        if n_pairs < batch_pairs:
            log.warning("only %d pairs for batches of %d; batches wrap around the pair list",
                        n_pairs, batch_pairs)

    def next_batch(self) -> np.ndarray:
        picked = []
        while len(picked) < self.batch_pairs:
            if self.cursor == self.n_pairs:
                self.order = self.rng.permutation(self.n_pairs)
                self.cursor = 0
                self.epoch += 1
            take = min(self.batch_pairs - len(picked), self.n_pairs - self.cursor)
            picked += self.order[self.cursor:self.cursor + take].tolist()
            self.cursor += take
        return np.array(picked)

    def state(self) -> dict:
        return {"epoch": self.epoch, "cursor": self.cursor, "order": self.order.tolist()}

    def load_state(self, st: dict) -> None:
        self.epoch, self.cursor = st["epoch"], st["cursor"]
        self.order = np.array(st["order"], dtype=np.int64)


def rigid_transform(x: np.ndarray, mirror: bool, k: int) -> np.ndarray:
    """Horizontal mirror then ``k`` quarter turns on the last two axes."""
    if mirror:
        x = x[..., ::-1]
    return np.rot90(x, k, axes=(-2, -1))


def augment_pair(cover: np.ndarray, stego: np.ndarray, rng: np.random.Generator):
    """Apply one random mirror/rot90 draw to both members of a pair."""
    if cover.shape != stego.shape:
        raise ValueError(f"pair shapes differ: {cover.shape} vs {stego.shape}")
    mirror = bool(rng.integers(2))
    k = int(rng.integers(4))
    return (np.ascontiguousarray(rigid_transform(cover, mirror, k)),
            np.ascontiguousarray(rigid_transform(stego, mirror, k)))


def make_batch(store: PlaneStore, pairs, rng, augment=True,
               preproc: PreprocConfig = PreprocConfig(), dtype=np.float32):
    """Pair-interleaved batch ``[c0, s0, c1, s1, ...]`` and its labels."""
    planes = []
    for j in pairs:
        c, s = store.covers[j], store.stegos[j]
        if augment:
            c, s = augment_pair(c, s, rng)
        planes += [c, s]
    x = spatial_to_input(np.stack(planes)[:, None], preproc).astype(dtype)
    labels = np.tile(np.array([0, 1], dtype=np.int64), len(pairs))
    return x, labels


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _step(net, x, labels, cfg, iteration):
    logits = net.forward(x, "train")
    loss, probs, grad = softmax_cross_entropy(logits, labels)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss} at iteration {iteration}")
    net.backward(grad)
    sgd_momentum_step(net.parameters(), lr_at(iteration, cfg), cfg.momentum, cfg.weight_decay)
    return loss, classification_error(probs, labels)


def train_step(net: Network, x: np.ndarray, labels: np.ndarray, cfg: TrainConfig, iteration: int) -> float:
    """One forward/backward/update at ``lr_at(iteration)``; returns the batch loss."""
    return _step(net, x, labels, cfg, iteration)[0]


def refresh_bn_statistics(net: Network, store: PlaneStore, batch_pairs: int = 16, max_batches: int = 64,
                          preproc: PreprocConfig = PreprocConfig()) -> None:
    """Replace BN running statistics by averages of per-batch statistics.

    Batches are pair-interleaved like training batches, taken in manifest
    order without augmentation, so the refresh consumes no randomness.
    Parameters are untouched.
    """
    bns = net.batchnorms()
    saved = [(b.state.momentum, b.state.mode) for b in bns]
    sums_m = [np.zeros(b.state.channels) for b in bns]
    sums_v = [np.zeros(b.state.channels) for b in bns]
    n = 0
    for start in range(0, len(store), batch_pairs):
        if n == max_batches:
            break
        pairs = np.arange(start, min(len(store), start + batch_pairs))
        x, _ = make_batch(store, pairs, None, False, preproc, net.dtype)
        for b in bns:
            b.state.momentum = 1.0
        net.forward(x, "train")
        for i, b in enumerate(bns):
            sums_m[i] += b.state.running_mean
            sums_v[i] += b.state.running_var
        n += 1
    for i, b in enumerate(bns):
        b.state.momentum, b.state.mode = saved[i]
        if n:
            b.state.running_mean[...] = sums_m[i] / n
            b.state.running_var[...] = sums_v[i] / n


class Trainer:
    """Owns the network, optimizer state, RNG and sampler of one run."""

    def __init__(self, net: Network, train_store: PlaneStore, cfg: TrainConfig, out_dir=None,
                 val_store: PlaneStore | None = None, preproc: PreprocConfig = PreprocConfig()):
        self.net, self.store, self.cfg = net, train_store, cfg
        self.val_store, self.preproc = val_store, preproc
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.sampler = PairSampler(len(train_store), cfg.batch_pairs, self.rng)
        self.iteration = 0
        self.losses: list[float] = []
        self.batch_errors: list[float] = []
        self.ckpts = CheckpointStore(out_dir) if out_dir is not None else None
        self.metrics_path = Path(out_dir) / "metrics.csv" if out_dir is not None else None
        if self.metrics_path is not None and not self.metrics_path.exists():
            self.metrics_path.write_text("iter,lr,train_loss,val_error\n")

    # -- state -------------------------------------------------------------
    def trainer_state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "sampler": self.sampler.state()}

    def snapshot(self) -> Checkpoint:
        return snapshot(self.net, self.iteration, self.cfg.hash(), self.trainer_state())

    def resume(self, ckpt: Checkpoint) -> None:
        restore(self.net, ckpt)
        self.iteration = ckpt.iteration
        self.rng.bit_generator.state = ckpt.trainer_state["rng"]
        self.sampler.load_state(ckpt.trainer_state["sampler"])

    # -- loop --------------------------------------------------------------
    def step(self) -> float:
        pairs = self.sampler.next_batch()
        x, y = make_batch(self.store, pairs, self.rng, self.cfg.augment, self.preproc, self.net.dtype)
        lr = lr_at(self.iteration, self.cfg)
        loss, err = _step(self.net, x, y, self.cfg, self.iteration)
        self.iteration += 1
        self.losses.append(loss)
        self.batch_errors.append(err)
        val = ""
        if self.iteration % self.cfg.checkpoint_every == 0:
            self.refresh_bn()
            if self.val_store is not None:
                val = f"{self.validation_error():.6f}"
            if self.ckpts is not None:
                self.save()
        if self.metrics_path is not None:
            with open(self.metrics_path, "a") as f:
                f.write(f"{self.iteration},{lr:.10g},{loss:.8g},{val}\n")
        return loss

    def refresh_bn(self):
        if self.cfg.bn_refresh_batches:
            refresh_bn_statistics(self.net, self.store, self.cfg.batch_pairs,
                                  self.cfg.bn_refresh_batches, self.preproc)

    def training_error(self, window: int) -> float:
        """Mean train-mode batch error over the last ``window`` iterations."""
        return float(np.mean(self.batch_errors[-window:]))

    def save(self):
        try:
            self.ckpts.save(self.snapshot())
        except CheckpointError:
            log.error("checkpoint write failed at iteration %d; last good checkpoint kept", self.iteration)
            raise

    def run(self, n_iters: int | None = None) -> "Trainer":
        stop = self.cfg.max_iters if n_iters is None else min(self.cfg.max_iters, self.iteration + n_iters)
        while self.iteration < stop:
            self.step()
        return self

    def validation_error(self) -> float:
        return error_on(self.net, self.val_store, self.preproc)


def error_on(net: Network, store: PlaneStore, preproc: PreprocConfig = PreprocConfig()) -> float:
    _, planes, labels = store.labelled_images()
    return classification_error(predict_probs(net, planes, preproc), labels)


def train_loop(net: Network, manifest: DatasetManifest | PlaneStore, cfg: TrainConfig, out_dir,
               val: DatasetManifest | PlaneStore | None = None) -> CheckpointStore:
    """Train for ``cfg.max_iters`` iterations, checkpointing every ``checkpoint_every``."""
    store = manifest if isinstance(manifest, PlaneStore) else PlaneStore(manifest)
    vstore = val if (val is None or isinstance(val, PlaneStore)) else PlaneStore(val)
    trainer = Trainer(net, store, cfg, out_dir, vstore).run()
    recent = trainer.losses[-max(1, len(trainer.losses) // 10):]
    if np.mean(recent) > math.log(2) - 0.01:
        log.warning("training loss stayed at chance level (%.4f): the network did not learn",
                    float(np.mean(recent)))
    return trainer.ckpts


def finetune_init(net: Network, source: Checkpoint) -> Network:
    """Copy parameters and BN statistics; momentum and iteration restart from zero."""
    return restore(net, source, with_momentum=False)
