"""Pair-similarity AUC, Frobenius error against the truth, threshold tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .embeddings import EmbeddingSet
from .errors import ConfigError, StageError, TransNESTError
from .labels import PairLabelSet

logger = logging.getLogger(__name__)

TARGET_SITE = 2
AUC_KEYS = ("auc", "auc_freq", "auc_rare", "auc_freq_tr", "auc_freq_ntr", "auc_rare_tr", "auc_rare_ntr")


def auc(pos_scores, neg_scores, category: str = "all") -> float:
    """Mann-Whitney AUC: P(pos > neg) with ties counted as 1/2."""
    pos = np.asarray(pos_scores, dtype=float).ravel()
    neg = np.asarray(neg_scores, dtype=float).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ConfigError(
            f"category {category!r}: AUC needs both classes "
            f"({pos.size} positive, {neg.size} negative scores)"
        )
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def cosine(u, v) -> float:
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def score_pairs(emb: EmbeddingSet, site: int, pairs):
    """Cosine similarity for each pair with two nonzero vectors at ``site``.

    Returns ``(scores, kept_pairs, skipped)`` where ``skipped`` counts pairs
    dropped for a missing or a zero vector.
    """
    pairs = list(pairs)
    skipped = {"missing": 0, "zero": 0}
    if site not in emb.ids:
        skipped["missing"] = len(pairs)
        return np.zeros(0), [], skipped
    V = emb.vectors[site]
    norms = np.linalg.norm(V, axis=1)
    pos = {f: p for p, f in enumerate(emb.ids[site])}
    a_idx, b_idx, kept = [], [], []
    for p in pairs:
        ia, ib = pos.get(p.id_a), pos.get(p.id_b)
        if ia is None or ib is None:
            skipped["missing"] += 1
        elif norms[ia] == 0 or norms[ib] == 0:
            skipped["zero"] += 1
        else:
            a_idx.append(ia)
            b_idx.append(ib)
            kept.append(p)
    if skipped["missing"] or skipped["zero"]:
        logger.info("skipped %d pairs without vectors and %d with zero vectors",
                    skipped["missing"], skipped["zero"])
    a = np.array(a_idx, dtype=int)
    b = np.array(b_idx, dtype=int)
    scores = np.einsum("ij,ij->i", V[a], V[b]) / (norms[a] * norms[b])
    return scores, kept, skipped


def _in_category(pair, key: str) -> bool:
    if key == "auc":
        return True
    parts = key.split("_")[1:]
    freq = parts[0]
    want_tr = {"tr": "Tr", "ntr": "NTr"}.get(parts[1]) if len(parts) > 1 else None
    for f, t in zip(pair.freq_tags, pair.transfer_tags or (None,) * len(pair.freq_tags)):
        if f == freq and (want_tr is None or t == want_tr):
            return True
    return False


@dataclass
class EvalReport:
    auc_by_category: dict
    counts: dict
    skipped: dict
    f_err: float | None = None
    f_rare_err: float | None = None
    f_freq_err: float | None = None
    notes: list = field(default_factory=list)

    def to_document(self) -> dict:
        doc = {key: self.auc_by_category.get(key) for key in AUC_KEYS}
        if self.f_err is not None:
            doc.update(f_err=self.f_err, f_rare_err=self.f_rare_err, f_freq_err=self.f_freq_err)
        doc["counts"] = self.counts
        doc["skipped"] = self.skipped
        if self.notes:
            doc["notes"] = self.notes
        return doc


def auc_report(emb: EmbeddingSet, labels: PairLabelSet, split="eval", site=TARGET_SITE):
    """AUCs for the seven pair categories; ``None`` where a class is empty."""
    pairs = labels.select(split=split) if split else list(labels)
    scores, kept, skipped = score_pairs(emb, site, pairs)
    result, counts = {}, {}
    is_pos = np.array([p.label == 1 for p in kept], dtype=bool)
    for key in AUC_KEYS:
        mask = np.array([_in_category(p, key) for p in kept], dtype=bool)
        pos, neg = scores[mask & is_pos], scores[mask & ~is_pos]
        counts[key] = {"pos": int(pos.size), "neg": int(neg.size)}
        result[key] = auc(pos, neg, key) if pos.size and neg.size else None
    return result, counts, skipped


@dataclass
class TargetTruth:
    """Target-site population embeddings and the rare-feature mask.

    Built from a :class:`transnest.simgen.GroundTruth` or from the truth
    JSON written by ``transnest simulate``.
    """

    ids: tuple
    X: np.ndarray
    rare: np.ndarray

    @property
    def M(self) -> np.ndarray:
        return self.X @ self.X.T

    @classmethod
    def from_ground_truth(cls, truth) -> "TargetTruth":
        idx = truth.site_index(TARGET_SITE)
        return cls(tuple(truth.ids[i] for i in idx), np.asarray(truth.X[TARGET_SITE], dtype=float),
                   np.asarray(truth.rare[idx], dtype=bool))

    @classmethod
    def from_document(cls, doc) -> "TargetTruth":
        try:
            block = doc["embeddings"][str(TARGET_SITE)]
            ids = tuple(block["ids"])
            X = np.asarray(block["vectors"], dtype=float)
            rare_ids = set(doc["rare"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"truth document lacks target embeddings or rare list ({exc})") from exc
        if X.ndim != 2 or X.shape[0] != len(ids):
            raise ConfigError("truth document: target vectors do not match ids")
        return cls(ids, X, np.array([f in rare_ids for f in ids], dtype=bool))


def as_target_truth(truth) -> TargetTruth:
    if isinstance(truth, TargetTruth):
        return truth
    if isinstance(truth, dict):
        return TargetTruth.from_document(truth)
    return TargetTruth.from_ground_truth(truth)


def frobenius_report(emb: EmbeddingSet, truth) -> tuple:
    """``(f_err, f_rare_err, f_freq_err)`` for the target-site reconstruction.

    Each is ``||M - Xhat Xhat^T||_F`` on the relevant submatrix divided by
    the number of features in it.
    """
    if truth is None:
        raise ConfigError("Frobenius errors need the simulation truth")
    tt = as_target_truth(truth)
    missing = [f for f in tt.ids if not emb.has(TARGET_SITE, f)]
    if missing:
        raise ConfigError(f"{len(missing)} target features have no embedding, e.g. {missing[:3]}")
    X = emb.matrix(TARGET_SITE, list(tt.ids))
    R = tt.M - X @ X.T
    rare = tt.rare

    def err(mask):
        n = int(mask.sum())
        return float(np.linalg.norm(R[np.ix_(mask, mask)]) / n) if n else float("nan")

    return (float(np.linalg.norm(R) / len(tt.ids)), err(rare), err(~rare))


def evaluate(emb: EmbeddingSet, labels: PairLabelSet | None = None, truth=None, split="eval") -> EvalReport:
    result, counts, skipped = ({}, {}, {})
    notes = []
    if labels is not None:
        result, counts, skipped = auc_report(emb, labels, split=split)
        empty = [k for k, v in result.items() if v is None]
        if empty:
            notes.append(f"no AUC for categories lacking a class: {empty}")
    report = EvalReport(result, counts, skipped, notes=notes)
    if truth is not None:
        report.f_err, report.f_rare_err, report.f_freq_err = frobenius_report(emb, truth)
    return report


# ---------------------------------------------------------------------------
# threshold tuning


def _log_grid(values, count: int) -> list:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    pos = v[v > 0]
    if pos.size == 0:
        return []
    lo = np.percentile(v, 5.0)
    hi = np.percentile(v, 99.5)
    lo = lo if lo > 0 else pos.min()
    hi = max(hi, lo)
    return np.geomspace(lo, hi, count).tolist() if hi > lo else [float(lo)]


def default_grid(prep, count: int = 12) -> tuple:
    """``(lambdas, mus)``: ``count`` log-spaced values between the 5th and
    99.5th percentiles of the observed statistics, plus 0 and +inf."""
    lams = [0.0] + _log_grid(prep.cross_stats.values(), count) + [math.inf]
    _, mu_stats = prep.group_stats(frozenset())
    mus = [0.0] + _log_grid(mu_stats.values(), count) + [math.inf]
    return lams, mus


def tuning_auc(emb: EmbeddingSet, labels: PairLabelSet) -> float:
    pairs = labels.select(split="tune")
    scores, kept, _ = score_pairs(emb, TARGET_SITE, pairs)
    is_pos = np.array([p.label == 1 for p in kept], dtype=bool)
    return auc(scores[is_pos], scores[~is_pos], "tune")


@dataclass
class TuningResult:
    lam: float
    mu: float
    score: float
    table: list

    def to_document(self) -> dict:
        def num(x):
            return None if x is None else (x if math.isfinite(x) else str(x))

        return {
            "lambda": num(self.lam),
            "mu": num(self.mu),
            "tuning_auc": self.score,
            "grid": [
                {"lambda": num(r["lambda"]), "mu": num(r["mu"]), "auc": r["auc"], "error": r["error"]}
                for r in self.table
            ],
        }


def tune_thresholds(prep, labels: PairLabelSet, lambdas=None, mus=None) -> TuningResult:
    """Grid search over ``(lambda, mu)`` maximizing tuning-split AUC.

    ``prep`` is a :class:`transnest.pipeline.PreparedSites`. Ties go to the
    smaller ``lambda`` and then the smaller ``mu`` (less transfer).
    """
    from .pipeline import fit_prepared

    if not labels.select(split="tune"):
        raise ConfigError("labels have no tuning split")
    if lambdas is None or mus is None:
        d_l, d_m = default_grid(prep)
        lambdas = d_l if lambdas is None else lambdas
        mus = d_m if mus is None else mus
    lambdas = sorted(set(float(x) for x in lambdas))
    mus = sorted(set(float(x) for x in mus))
    if not lambdas or not mus:
        raise ConfigError("empty tuning grid")
    table = []
    best = None
    for lam in lambdas:
        for mu in mus:
            try:
                res = fit_prepared(prep, lam, mu)
                score = tuning_auc(res.embeddings, labels)
                table.append({"lambda": lam, "mu": mu, "auc": score, "error": None})
            except (StageError, TransNESTError) as exc:
                table.append({"lambda": lam, "mu": mu, "auc": None, "error": str(exc)})
                continue
            if best is None or score > best[2]:
                best = (lam, mu, score)
    if best is None:
        errors = "; ".join(f"({r['lambda']}, {r['mu']}): {r['error']}" for r in table)
        raise StageError("tune_thresholds", f"every grid point failed: {errors}")
    return TuningResult(best[0], best[1], best[2], table)
