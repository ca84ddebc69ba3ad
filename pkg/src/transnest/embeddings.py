"""Per-site embedding container and its CSV format ("id,site,d1..dr")."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import fmt
from .errors import ConfigError

FRAMES = ("raw", "aligned-to-site-1", "refined", "benchmark")


@dataclass
class EmbeddingSet:
    """Feature embeddings for each site.

    ``ids[k]`` lists the features with a vector at site ``k`` (sorted) and
    ``vectors[k]`` holds them row-wise, shape ``(len(ids[k]), rank)``.
    """

    rank: int
    ids: dict
    vectors: dict
    frame: str = "raw"

    def __post_init__(self):
        for k in list(self.ids):
            ids = tuple(self.ids[k])
            V = np.asarray(self.vectors[k], dtype=float)
            if V.shape != (len(ids), self.rank):
                raise ConfigError(
                    f"site {k}: vectors shape {V.shape} != ({len(ids)}, {self.rank})"
                )
            if not np.all(np.isfinite(V)):
                raise ConfigError(f"site {k}: non-finite embedding entries")
            if list(ids) != sorted(ids):
                order = np.argsort(ids, kind="stable")
                ids = tuple(ids[i] for i in order)
                V = V[order]
            self.ids[k] = ids
            self.vectors[k] = V
        self._pos = {k: {fid: p for p, fid in enumerate(ids)} for k, ids in self.ids.items()}

    @classmethod
    def from_dicts(cls, rank, per_site, frame="refined") -> "EmbeddingSet":
        """Build from ``{site: {id: vector}}``."""
        ids, vectors = {}, {}
        for k, d in per_site.items():
            keys = sorted(d)
            ids[k] = tuple(keys)
            vectors[k] = (
                np.vstack([d[fid] for fid in keys]) if keys else np.zeros((0, rank))
            )
        return cls(rank, ids, vectors, frame)

    @property
    def sites(self):
        return tuple(sorted(self.ids))

    def has(self, site, fid) -> bool:
        return fid in self._pos.get(site, ())

    def vector(self, site, fid) -> np.ndarray:
        return self.vectors[site][self._pos[site][fid]]

    def matrix(self, site, ids) -> np.ndarray:
        pos = self._pos[site]
        return self.vectors[site][[pos[fid] for fid in ids]]

    def as_dict(self, site) -> dict:
        return {fid: self.vectors[site][p] for p, fid in enumerate(self.ids[site])}

    def rotated(self, site, R, frame=None) -> "EmbeddingSet":
        vectors = dict(self.vectors)
        vectors[site] = vectors[site] @ R
        return EmbeddingSet(self.rank, dict(self.ids), vectors, frame or self.frame)


def write_embeddings_csv(path, emb: EmbeddingSet) -> None:
    buf = io.StringIO()
    buf.write("id,site," + ",".join(f"d{c + 1}" for c in range(emb.rank)) + "\n")
    rows = []
    for k in emb.sites:
        for fid, v in zip(emb.ids[k], emb.vectors[k]):
            rows.append((fid, k, v))
    rows.sort(key=lambda t: (t[0], t[1]))
    for fid, k, v in rows:
        buf.write(f"{fid},{k}," + ",".join(fmt(x) for x in v) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_embeddings_csv(path, frame="raw") -> EmbeddingSet:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "site"]:
            raise ConfigError(f"{path}: header must start with 'id,site'")
        rank = len(header) - 2
        per_site = {}
        for row in reader:
            if not row:
                continue
            if len(row) != rank + 2:
                raise ConfigError(f"{path}: row for {row[0]!r} has {len(row) - 2} values")
            k = int(row[1])
            if row[0] in per_site.setdefault(k, {}):
                raise ConfigError(f"{path}: duplicate entry ({row[0]}, site {k})")
            per_site[k][row[0]] = np.array([float(x) for x in row[2:]])
    return EmbeddingSet.from_dicts(rank, per_site, frame=frame)
