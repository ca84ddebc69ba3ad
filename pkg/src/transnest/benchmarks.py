"""Comparison estimators: SSVD, SSG, DP and a simplified BONMI.

All return an :class:`EmbeddingSet`; evaluation reads the site-2 (target)
vectors.
"""

from __future__ import annotations

import numpy as np

from .catalog import FeatureCatalog, SiteMatrix
from .embeddings import EmbeddingSet
from .errors import NumericalError
from .numerics import procrustes, truncated_psd_factorization

METHODS = ("ssvd", "ssg", "dp", "bonmi", "transnest")


def ssvd(S_target: SiteMatrix, r: int) -> EmbeddingSet:
    """Single-site truncated PSD factorization of the target matrix."""
    fac = truncated_psd_factorization(S_target.matrix, r)
    return EmbeddingSet(r, {S_target.site: S_target.feature_order}, {S_target.site: fac.X}, "benchmark")


def group_mean_replace(emb: EmbeddingSet, site: int, catalog: FeatureCatalog) -> EmbeddingSet:
    """Replace every grouped feature's vector with its group's mean at ``site``."""
    ids = emb.ids[site]
    V = emb.vectors[site]
    codes = np.array([catalog.group_codes[catalog.index[f]] for f in ids], dtype=int)
    out = V.copy()
    for g in np.unique(codes[codes >= 0]):
        rows = codes == g
        out[rows] = V[rows].mean(axis=0)
    vectors = dict(emb.vectors)
    vectors[site] = out
    return EmbeddingSet(emb.rank, dict(emb.ids), vectors, "benchmark")


def ssg(S_target: SiteMatrix, catalog: FeatureCatalog, r: int, base: EmbeddingSet | None = None) -> EmbeddingSet:
    """SSVD followed by group-mean replacement; ungrouped features unchanged."""
    base = base if base is not None else ssvd(S_target, r)
    return group_mean_replace(base, S_target.site, catalog)


def dp(S1: SiteMatrix, S2: SiteMatrix, catalog: FeatureCatalog, r: int, site_weights) -> EmbeddingSet:
    """Data pooling on the overlap, then Procrustes-rotated site-specific SSVD vectors.

    Overlap features get the factorization of ``sum_k w_k S_k`` on the
    overlap. Each site's SSVD vectors are rotated by
    ``procrustes(ssvd_overlap, pooled_overlap)`` and used for that site's
    specific features.
    """
    overlap = [catalog.ids[i] for i in catalog.overlap_index]
    if len(overlap) < r:
        raise NumericalError(f"overlap of {len(overlap)} features is smaller than rank {r}")
    w1, w2 = site_weights
    sub = {}
    for k, S in ((1, S1), (2, S2)):
        pos = {f: p for p, f in enumerate(S.feature_order)}
        sub[k] = [pos[f] for f in overlap]
    pooled_S = (w1 * S1.matrix[np.ix_(sub[1], sub[1])] + w2 * S2.matrix[np.ix_(sub[2], sub[2])]) / (w1 + w2)
    pooled = dict(zip(overlap, truncated_psd_factorization(pooled_S, r).X))
    ids, vectors = {}, {}
    for k, S in ((1, S1), (2, S2)):
        X = truncated_psd_factorization(S.matrix, r).X
        P = np.vstack([pooled[f] for f in overlap])
        try:
            Q = procrustes(X[sub[k]], P)
        except NumericalError as exc:
            raise NumericalError(f"DP: degenerate overlap alignment at site {k}: {exc}") from exc
        V = X @ Q
        for p in sub[k]:
            V[p] = pooled[S.feature_order[p]]
        ids[k] = S.feature_order
        vectors[k] = V
    return EmbeddingSet(r, ids, vectors, "benchmark")


def bonmi_completed_matrix(S1: SiteMatrix, S2: SiteMatrix, catalog: FeatureCatalog, r: int, site_weights) -> np.ndarray:
    """Full ``n x n`` matrix over the catalog (canonical order).

    Entries observed at both sites take the ``w``-weighted average; entries
    observed at one site take that site's value; the unobserved
    site-1-only x site-2-only block is ``X1_s Q X2_s^T`` with ``Q`` the
    Procrustes rotation of site-1 onto site-2 SSVD vectors on the overlap.
    """
    n = catalog.n
    w = np.asarray(site_weights, dtype=float)
    num = np.zeros((n, n))
    den = np.zeros((n, n))
    cnt = np.zeros((n, n))
    unweighted = np.zeros((n, n))
    X = {}
    for k, S in ((1, S1), (2, S2)):
        idx = np.array([catalog.index[f] for f in S.feature_order])
        blk = np.ix_(idx, idx)
        num[blk] += w[k - 1] * S.matrix
        den[blk] += w[k - 1]
        unweighted[blk] += S.matrix
        cnt[blk] += 1
        X[k] = truncated_psd_factorization(S.matrix, r).X
    full = np.zeros((n, n))
    weighted = den > 0
    full[weighted] = num[weighted] / den[weighted]
    # observed only at a zero-weight site: fall back to the plain average
    fallback = (~weighted) & (cnt > 0)
    full[fallback] = unweighted[fallback] / cnt[fallback]

    overlap = [catalog.ids[i] for i in catalog.overlap_index]
    pos = {k: {f: p for p, f in enumerate(S.feature_order)} for k, S in ((1, S1), (2, S2))}
    X1o = X[1][[pos[1][f] for f in overlap]]
    X2o = X[2][[pos[2][f] for f in overlap]]
    Q = procrustes(X1o, X2o)
    only1 = [i for i in catalog.site_index(1) if not catalog.present[i, 1]]
    only2 = [i for i in catalog.site_index(2) if not catalog.present[i, 0]]
    if only1 and only2:
        A = X[1][[pos[1][catalog.ids[i]] for i in only1]] @ Q
        B = X[2][[pos[2][catalog.ids[i]] for i in only2]]
        block = A @ B.T
        full[np.ix_(only1, only2)] = block
        full[np.ix_(only2, only1)] = block.T
    return full


def bonmi(S1: SiteMatrix, S2: SiteMatrix, catalog: FeatureCatalog, r: int, site_weights) -> EmbeddingSet:
    """BONMI (simplified): rotation-based block completion, then one factorization."""
    full = bonmi_completed_matrix(S1, S2, catalog, r, site_weights)
    Xall = truncated_psd_factorization(full, r).X
    ids, vectors = {}, {}
    for k in (1, 2):
        idx = catalog.site_index(k)
        ids[k] = tuple(catalog.ids[i] for i in idx)
        vectors[k] = Xall[idx]
    return EmbeddingSet(r, ids, vectors, "benchmark")
