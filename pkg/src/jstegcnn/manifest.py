"""Cover/stego pair manifests.

Format: ``#key=value`` header lines (``qf``, ``rate``, ``split``) followed by
``pair_id<TAB>cover_path<TAB>stego_path`` records.  Relative paths resolve
against the manifest's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    cover_path: str
    stego_path: str


@dataclass
class DatasetManifest:
    records: list[PairRecord]
    quality_factor: int | None = None
    embedding_rate: float | None = None
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [r.pair_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate pair ids in manifest: {dup[:5]}")

    def __len__(self):
        return len(self.records)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p


def write_manifest(path, manifest: DatasetManifest) -> None:
    lines = []
    if manifest.quality_factor is not None:
        lines.append(f"#qf={manifest.quality_factor}")
    if manifest.embedding_rate is not None:
        lines.append(f"#rate={manifest.embedding_rate}")
    lines.append(f"#split={manifest.split}")
    lines += [f"{r.pair_id}\t{r.cover_path}\t{r.stego_path}" for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    meta: dict[str, str] = {}
    records = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        records.append(PairRecord(*parts))
    return DatasetManifest(
        records,
        quality_factor=int(meta["qf"]) if "qf" in meta else None,
        embedding_rate=float(meta["rate"]) if "rate" in meta else None,
        split=meta.get("split", "train"),
        root=path.parent,
    )
