"""Classification error, probability-averaging ensembles and run comparison."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .frontend import PreprocConfig, spatial_to_input
from .layers import softmax_cross_entropy
from .network import Network

log = logging.getLogger(__name__)


@dataclass
class ProbTable:
    """Per-image class posteriors, rows aligned with ``images``."""
    images: list[str]
    probs: np.ndarray  # (n_images, 2)
    labels: np.ndarray  # (n_images,)


@dataclass
class EvalReport:
    images: list[str]
    probs: np.ndarray
    labels: np.ndarray
    preds: np.ndarray
    error: float
    checkpoints: list[str] = field(default_factory=list)
    ensemble_size: int = 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["image", "prob_cover", "prob_stego", "label", "pred"])
            for name, p, y, yh in zip(self.images, self.probs, self.labels, self.preds):
                w.writerow([name, f"{p[0]:.9g}", f"{p[1]:.9g}", int(y), int(yh)])
            f.write(self.summary() + "\n")

    def summary(self) -> str:
        ck = ",".join(self.checkpoints) if self.checkpoints else "-"
        return (f"# error={self.error:.4f} images={len(self.images)} "
                f"ensemble_size={self.ensemble_size} checkpoints={ck}")


def predict(probs: np.ndarray) -> np.ndarray:
    # a tie goes to cover
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def classification_error(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(probs) != np.asarray(labels)))


def predict_probs(net: Network, planes, cfg: PreprocConfig = PreprocConfig(),
                  batch_size: int = 32) -> np.ndarray:
    """Eval-mode posteriors for decompressed ``(H, W)`` spatial planes."""
    out = []
    for s in range(0, len(planes), batch_size):
        chunk = np.stack(planes[s:s + batch_size])[:, None]
        x = spatial_to_input(chunk, cfg).astype(net.dtype)
        logits = net.forward(x, "eval")
        _, p, _ = softmax_cross_entropy(logits, np.zeros(len(chunk), dtype=np.int64))
        out.append(p)
    return np.concatenate(out)


def prob_table(net: Network, store, cfg: PreprocConfig = PreprocConfig()) -> ProbTable:
    """Posteriors on every cover and stego of a :class:`PlaneStore`."""
    names, planes, labels = store.labelled_images()
    return ProbTable(names, predict_probs(net, planes, cfg), labels)


def ensemble_probs(tables: Sequence[ProbTable]) -> ProbTable:
    """Uniform mean of the per-image posteriors of several tables."""
    if not tables:
        raise ValueError("ensemble_probs needs at least one table")
    ref = tables[0]
    for t in tables[1:]:
        if t.images != ref.images:
            raise ValueError("probability tables cover different image lists")
    # accumulate in list order, then divide once
    total = tables[0].probs.astype(np.float64)
    for t in tables[1:]:
        total = total + t.probs
    probs = total / len(tables)
    return ProbTable(list(ref.images), probs, ref.labels.copy())


def report_from_table(table: ProbTable, checkpoints=(), ensemble_size=1) -> EvalReport:
    if not table.images:
        raise ValueError("cannot evaluate an empty split")
    preds = predict(table.probs)
    return EvalReport(table.images, table.probs, table.labels, preds,
                      float(np.mean(preds != table.labels)), list(checkpoints), ensemble_size)


def evaluate(nets, store, cfg: PreprocConfig = PreprocConfig(), checkpoints=()) -> EvalReport:
    """Evaluate one network, or average posteriors over a list of them."""
    if len(store) == 0:
        raise ValueError("cannot evaluate an empty split")
    nets = [nets] if isinstance(nets, Network) else list(nets)
    tables = [prob_table(n, store, cfg) for n in nets]
    return report_from_table(ensemble_probs(tables), checkpoints, len(tables))


# ---------------------------------------------------------------------------
# metrics logs
# ---------------------------------------------------------------------------

def read_metrics(path, column: str = "val_error") -> dict[int, float]:
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            v = row.get(column, "")
            if v not in ("", None):
                out[int(row["iter"])] = float(v)
    return out


def compare_runs(logs: dict[str, str | Path], column: str = "val_error") -> tuple[list[str], list[list]]:
    """Inner-join several metrics CSVs on iteration.

    Returns ``(header, rows)`` with one column per run.
    """
    if len(logs) < 2:
        raise ValueError("compare_runs needs at least two logs")
    series = {name: read_metrics(p, column) for name, p in logs.items()}
    grids = [set(s) for s in series.values()]
    common = sorted(set.intersection(*grids))
    if not common:
        raise ValueError("metrics logs share no iterations")
    if any(g != grids[0] for g in grids):
        log.warning("iteration grids differ; keeping %d shared iterations", len(common))
    header = ["iter"] + list(series)
    rows = [[it] + [series[n][it] for n in series] for it in common]
    return header, rows


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
