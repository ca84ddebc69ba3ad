"""Labelled feature pairs used for AUC evaluation and threshold tuning.

File format (CSV, header required)::

    id_a,id_b,label,category,freq_tag,transfer_tag,split

``freq_tag`` and ``transfer_tag`` hold one tag per endpoint joined by ``;``
in ``(id_a, id_b)`` order, e.g. ``freq;rare`` and ``Tr;NTr``. They may be
empty for real data without frequency or transfer information.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

HEADER = ["id_a", "id_b", "label", "category", "freq_tag", "transfer_tag", "split"]
SPLITS = ("tune", "eval")


@dataclass(frozen=True)
class Pair:
    id_a: str
    id_b: str
    label: int
    category: str = ""
    freq_tags: tuple = ()
    transfer_tags: tuple = ()
    split: str = "eval"

    def endpoint_classes(self):
        """(freq-tag, transfer-tag) for each endpoint that carries both."""
        return list(zip(self.freq_tags, self.transfer_tags))


class PairLabelSet:
    """Positive / negative pairs over unordered, distinct feature ids."""

    def __init__(self, pairs):
        cleaned = []
        seen = set()
        for p in pairs:
            a, b = (p.id_a, p.id_b)
            if a == b:
                raise ConfigError(f"self-pair ({a}, {a}) is not allowed")
            if a > b:
                p = Pair(b, a, p.label, p.category, tuple(reversed(p.freq_tags)),
                         tuple(reversed(p.transfer_tags)), p.split)
            key = (p.id_a, p.id_b)
            if key in seen:
                raise ConfigError(f"duplicate pair {key}")
            if p.label not in (0, 1):
                raise ConfigError(f"pair {key}: label must be 0 or 1")
            if p.split not in SPLITS:
                raise ConfigError(f"pair {key}: split must be one of {SPLITS}")
            seen.add(key)
            cleaned.append(p)
        cleaned.sort(key=lambda p: (p.split, -p.label, p.id_a, p.id_b))
        self.pairs = tuple(cleaned)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def select(self, split=None, label=None) -> list:
        return [
            p for p in self.pairs
            if (split is None or p.split == split) and (label is None or p.label == label)
        ]

    def ids(self) -> set:
        return {p.id_a for p in self.pairs} | {p.id_b for p in self.pairs}

    def check_catalog(self, known_ids) -> None:
        missing = sorted(self.ids() - set(known_ids))
        if missing:
            raise ConfigError(f"{len(missing)} labelled ids absent from catalog, e.g. {missing[:3]}")


def write_labels_csv(path, labels: PairLabelSet) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for p in labels:
        writer.writerow([
            p.id_a, p.id_b, "pos" if p.label else "neg", p.category,
            ";".join(p.freq_tags), ";".join(p.transfer_tags), p.split,
        ])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_labels_csv(path) -> PairLabelSet:
    pairs = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != HEADER[:3]:
            raise ConfigError(f"{path}: header must start with {','.join(HEADER[:3])}")
        col = {name: i for i, name in enumerate(header)}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            lab = row[col["label"]].strip().lower()
            if lab not in ("pos", "neg", "1", "0"):
                raise ConfigError(f"{path}:{lineno}: label must be pos/neg, got {lab!r}")

            def get(name, default=""):
                return row[col[name]] if name in col and col[name] < len(row) else default

            tags = lambda s: tuple(t for t in s.split(";") if t)  # noqa: E731
            pairs.append(Pair(
                row[0], row[1], int(lab in ("pos", "1")), get("category"),
                tags(get("freq_tag")), tags(get("transfer_tag")), get("split", "eval") or "eval",
            ))
    return PairLabelSet(pairs)
