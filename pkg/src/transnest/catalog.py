"""Feature registry, per-site similarity matrices and co-occurrence ingestion.

Feature order is lexicographic by id everywhere: matrices, embedding files
and index arrays all follow ``FeatureCatalog.ids``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .numerics import as_symmetric

SITES = (1, 2)


@dataclass(frozen=True)
class Feature:
    id: str
    group: str | None
    sites: tuple[int, ...]
    weights: dict[int, float] = field(default_factory=dict)


class FeatureCatalog:
    """Global feature registry with derived site / overlap / group index sets.

    Attributes
    ----------
    ids : tuple of str
        Feature ids in canonical (sorted) order; position is the global index.
    present : (n, 2) bool array
        ``present[i, k-1]`` is True when feature ``i`` is observed at site ``k``.
    weights : (n, 2) float array
        Feature-site weights ``w_{k,i}``; NaN where the feature is absent.
    group_codes : (n,) int array
        Index into ``group_names``, or -1 for ungrouped features.
    """

    def __init__(self, features):
        features = sorted(features, key=lambda f: f.id)
        self.features = tuple(features)
        self.ids = tuple(f.id for f in features)
        self.index = {fid: i for i, fid in enumerate(self.ids)}
        n = len(self.ids)
        self.present = np.zeros((n, 2), dtype=bool)
        self.weights = np.full((n, 2), np.nan)
        for i, f in enumerate(features):
            for k in f.sites:
                self.present[i, k - 1] = True
                self.weights[i, k - 1] = f.weights.get(k, 1.0)
        self.group_names = tuple(sorted({f.group for f in features if f.group is not None}))
        code = {g: c for c, g in enumerate(self.group_names)}
        self.group_codes = np.array(
            [code[f.group] if f.group is not None else -1 for f in features], dtype=int
        )
        self.groups = {
            g: tuple(self.ids[i] for i in np.flatnonzero(self.group_codes == c))
            for g, c in code.items()
        }

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, FeatureCatalog):
            return NotImplemented
        return self.to_document() == other.to_document()

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def site_index(self, site: int) -> np.ndarray:
        """Global indices of features observed at ``site`` (canonical order)."""
        return np.flatnonzero(self.present[:, site - 1])

    def site_ids(self, site: int) -> list[str]:
        return [self.ids[i] for i in self.site_index(site)]

    def local_index(self, site: int) -> np.ndarray:
        """Map global index -> row in the site matrix (-1 where absent)."""
        loc = np.full(self.n, -1, dtype=int)
        idx = self.site_index(site)
        loc[idx] = np.arange(idx.size)
        return loc

    @property
    def overlap_index(self) -> np.ndarray:
        return np.flatnonzero(self.present.all(axis=1))

    @property
    def nonoverlap_index(self) -> np.ndarray:
        return np.flatnonzero(~self.present.all(axis=1))

    def counts(self) -> dict:
        return {
            "n": self.n,
            "n1": int(self.present[:, 0].sum()),
            "n2": int(self.present[:, 1].sum()),
            "n_o": int(self.present.all(axis=1).sum()),
            "G": self.n_groups,
        }

    def to_document(self) -> dict:
        return {
            "features": [
                {
                    "id": f.id,
                    "group": f.group,
                    "sites": list(f.sites),
                    "weights": {str(k): float(self.weights[i, k - 1]) for k in f.sites},
                }
                for i, f in enumerate(self.features)
            ]
        }


def validate_catalog(raw) -> FeatureCatalog:
    """Build a :class:`FeatureCatalog` from a parsed catalog document.

    Raises ``ConfigError`` naming the offending id for duplicate ids,
    features present at no site, unknown sites and nonpositive weights.
    """
    if not isinstance(raw, dict) or not isinstance(raw.get("features"), list):
        raise ConfigError('catalog document must be an object with a "features" list')
    seen = set()
    features = []
    for entry in raw["features"]:
        if not isinstance(entry, dict) or "id" not in entry:
            raise ConfigError(f"catalog entry without an id: {entry!r}")
        fid = str(entry["id"])
        if fid in seen:
            raise ConfigError(f"duplicate feature id: {fid}")
        seen.add(fid)
        sites = entry.get("sites") or []
        try:
            sites = tuple(sorted({int(s) for s in sites}))
        except (TypeError, ValueError):
            raise ConfigError(f"feature {fid}: sites must be integers") from None
        if not sites:
            raise ConfigError(f"feature {fid} is present in no site")
        if any(s not in SITES for s in sites):
            raise ConfigError(f"feature {fid}: unknown site in {list(sites)}")
        weights = {}
        for key, value in (entry.get("weights") or {}).items():
            k = int(key)
            if k not in sites:
                raise ConfigError(f"feature {fid}: weight given for absent site {k}")
            w = float(value)
            if not (w > 0 and math.isfinite(w)):
                raise ConfigError(f"feature {fid}: weight at site {k} must be positive, got {value}")
            weights[k] = w
        group = entry.get("group")
        features.append(Feature(fid, None if group is None else str(group), sites, weights))
    return FeatureCatalog(features)


def load_catalog(path) -> FeatureCatalog:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return validate_catalog(doc)


def dump_catalog(catalog: FeatureCatalog, path) -> None:
    Path(path).write_text(dumps_json(catalog.to_document()), encoding="utf-8")


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def fmt(x: float) -> str:
    """Round-trip float formatting (17 significant digits)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SiteMatrix:
    """Symmetric similarity matrix ``S_k`` over one site's features."""

    site: int
    feature_order: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        if self.site not in SITES:
            raise ConfigError(f"site must be 1 or 2, got {self.site}")
        m = as_symmetric(self.matrix, name=f"S{self.site}")
        if m.shape[0] != len(self.feature_order):
            raise ConfigError(
                f"S{self.site}: dimension {m.shape[0]} != {len(self.feature_order)} features"
            )
        object.__setattr__(self, "feature_order", tuple(self.feature_order))
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return len(self.feature_order)


def site_matrix(catalog: FeatureCatalog, site: int, matrix, feature_order) -> SiteMatrix:
    """Check ``feature_order`` against the catalog and permute to canonical order."""
    expected = catalog.site_ids(site)
    order = list(feature_order)
    if len(set(order)) != len(order):
        raise ConfigError(f"S{site}: duplicate ids in feature order")
    if set(order) != set(expected):
        missing = sorted(set(expected) - set(order))[:5]
        extra = sorted(set(order) - set(expected))[:5]
        raise ConfigError(
            f"S{site}: feature set differs from catalog site {site} "
            f"(missing {missing}, unexpected {extra})"
        )
    matrix = np.asarray(matrix, dtype=float)
    pos = {fid: p for p, fid in enumerate(order)}
    perm = np.array([pos[fid] for fid in expected], dtype=int)
    return SiteMatrix(site, tuple(expected), matrix[np.ix_(perm, perm)])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a labelled square matrix file ("id,<id1>,...", "<idi>,v1,...")."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "id":
        raise ConfigError(f"{path}: first line must start with 'id'")
    ids = rows[0][1:]
    body = [r for r in rows[1:] if r]
    if len(body) != len(ids):
        raise ConfigError(f"{path}: {len(body)} data rows for {len(ids)} columns")
    values = np.empty((len(ids), len(ids)))
    for p, row in enumerate(body):
        if row[0] != ids[p]:
            raise ConfigError(f"{path}: row {p + 1} id {row[0]!r} != column id {ids[p]!r}")
        if len(row) != len(ids) + 1:
            raise ConfigError(f"{path}: row {row[0]!r} has {len(row) - 1} values")
        try:
            values[p] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ConfigError(f"{path}: row {row[0]!r}: {exc}") from exc
    return ids, values


def write_matrix_csv(path, ids, matrix) -> None:
    buf = io.StringIO()
    buf.write("id," + ",".join(ids) + "\n")
    for fid, row in zip(ids, np.asarray(matrix)):
        buf.write(fid + "," + ",".join(fmt(v) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_site_matrix(path, catalog: FeatureCatalog, site: int) -> SiteMatrix:
    ids, values = read_matrix_csv(path)
    return site_matrix(catalog, site, values, ids)


@dataclass(frozen=True)
class CooccurrenceTable:
    """Symmetric co-occurrence counts over ``ids`` (dense, canonical order)."""

    ids: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.shape != (len(self.ids), len(self.ids)):
            raise ConfigError("counts shape does not match ids")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ConfigError("counts must be finite and nonnegative")
        if not np.array_equal(c, c.T):
            raise ConfigError("co-occurrence counts must be symmetric")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "counts", c)

    @property
    def marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @classmethod
    def from_pairs(cls, triples, ids=None) -> "CooccurrenceTable":
        """Build from ``(id_a, id_b, count)`` triples; each unordered pair once."""
        triples = list(triples)
        if ids is None:
            ids = sorted({t[0] for t in triples} | {t[1] for t in triples})
        ids = tuple(sorted(ids))
        pos = {fid: p for p, fid in enumerate(ids)}
        counts = np.zeros((len(ids), len(ids)))
        seen = set()
        for a, b, c in triples:
            if a not in pos or b not in pos:
                continue
            key = (a, b) if a <= b else (b, a)
            if key in seen:
                raise ConfigError(f"pair ({a}, {b}) listed more than once")
            seen.add(key)
            c = float(c)
            if c < 0:
                raise ConfigError(f"negative count for pair ({a}, {b})")
            counts[pos[a], pos[b]] = c
            counts[pos[b], pos[a]] = c
        return cls(ids, counts)


def read_cooccurrence_csv(path, ids=None) -> CooccurrenceTable:
    """Read "id_a,id_b,count" rows (header optional)."""
    triples = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[:3] == ["id_a", "id_b", "count"]:
                continue
            if len(row) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                triples.append((row[0], row[1], float(row[2])))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return CooccurrenceTable.from_pairs(triples, ids=ids)


def sppmi_from_cooccurrence(table: CooccurrenceTable, shift: float = 1) -> np.ndarray:
    """Shifted positive PMI matrix.

    ``max(log(c_ij * T / (m_i * m_j)) - log(shift), 0)`` with ``T`` the grand
    total and ``m`` the marginals; zero counts map to zero.
    """
    if not shift > 0:
        raise ConfigError(f"shift must be positive, got {shift}")
    total = table.total
    if total <= 0:
        raise ConfigError("co-occurrence table is empty")
    m = table.marginals
    zero = np.flatnonzero(m <= 0)
    if zero.size:
        raise ConfigError(f"feature {table.ids[zero[0]]} has zero marginal count")
    c = table.counts
    out = np.zeros_like(c)
    nz = c > 0
    with np.errstate(over="ignore"):
        pmi = np.log(c[nz]) + math.log(total) - np.log(np.outer(m, m)[nz])
    out[nz] = np.maximum(pmi - math.log(shift), 0.0)
    return (out + out.T) / 2.0
