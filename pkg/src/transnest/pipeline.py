"""Two-site transfer estimator for feature embeddings.

The fit runs in four stages:

1. per-site rank-r PSD factorization of ``S_k`` (initial embeddings);
2. Procrustes alignment of site 2 onto site 1 over the overlapping
   features, then a weighted threshold ``lambda`` splitting the overlap
   into cross-site consistent and divergent features;
3. weighted group centers (divergent features excluded) and a second
   threshold ``mu`` flagging group outliers (``h_hat = 0``);
4. refinement: a block-constrained joint factorization for consistent
   features, copying block vectors to anchored features, a pooled
   regression per solo group, and per-site regressions for outliers.

Stages 1-2 and the site weights do not depend on the thresholds; they are
computed once by :func:`prepare` so a threshold grid can reuse them.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import FeatureCatalog, SiteMatrix
from .embeddings import EmbeddingSet
from .errors import ConfigError, NumericalError, StageError, TransNESTError
from .numerics import (
    Factorization,
    procrustes,
    solve_normal_equations,
    least_squares,
    truncated_psd_factorization,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    rank: int
    lam: float = math.inf
    mu: float = math.inf
    site_weights: object = "auto"
    force_no_transfer: bool = False

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ConfigError(f"rank must be positive, got {self.rank}")
        self.rank = int(self.rank)
        for name in ("lam", "mu"):
            v = float(getattr(self, name))
            if not v >= 0:
                raise ConfigError(f"{name} must be >= 0, got {v}")
            setattr(self, name, v)
        if self.site_weights != "auto":
            w = tuple(float(x) for x in self.site_weights)
            if len(w) != 2 or min(w) < 0 or not math.isclose(sum(w), 1.0, abs_tol=1e-9):
                raise ConfigError(f"explicit site weights must be 2 nonnegative values summing to 1, got {w}")
            if max(w) <= 0:
                raise ConfigError("site weights cannot both be zero")
            self.site_weights = w


@dataclass
class FeatureClassification:
    """Estimated feature types and the block partition of consistent features."""

    consistent: frozenset
    divergent: frozenset
    h_hat: dict
    anchored: frozenset
    solo: frozenset
    outliers: frozenset
    partition: list
    group_centers: dict = field(default_factory=dict)

    @property
    def transferable(self) -> frozenset:
        return self.consistent | self.anchored | self.solo

    def sizes(self) -> dict:
        return {
            "consistent": len(self.consistent),
            "divergent": len(self.divergent),
            "anchored": len(self.anchored),
            "solo": len(self.solo),
            "outliers": len(self.outliers),
            "blocks": len(self.partition),
        }

    def check(self, catalog: FeatureCatalog) -> None:
        """Assert the set identities; raises AssertionError on violation."""
        overlap = {catalog.ids[i] for i in catalog.overlap_index}
        nonoverlap = {catalog.ids[i] for i in catalog.nonoverlap_index}
        assert self.consistent | self.divergent == overlap
        assert not self.consistent & self.divergent
        no_out = {i for i in nonoverlap if self.h_hat[i] == 0}
        assert self.anchored | self.solo | no_out == nonoverlap
        assert not (self.anchored & self.solo) and not (self.anchored & no_out)
        assert self.outliers == no_out | self.divergent
        covered = [fid for block in self.partition for fid in block]
        assert len(covered) == len(set(covered)) and set(covered) == self.consistent
        for block in self.partition:
            if len(block) > 1:
                groups = {catalog.group_codes[catalog.index[fid]] for fid in block}
                assert len(groups) == 1 and -1 not in groups
                assert all(self.h_hat[fid] == 1 for fid in block)

    def to_document(self) -> dict:
        return {
            "consistent": sorted(self.consistent),
            "divergent": sorted(self.divergent),
            "anchored": sorted(self.anchored),
            "solo": sorted(self.solo),
            "outliers": sorted(self.outliers),
            "h_hat": {k: int(v) for k, v in sorted(self.h_hat.items())},
            "partition": [list(b) for b in self.partition],
        }


@dataclass
class ConsistentFit:
    """Consistent-block solution: one vector per block, shared by both sites."""

    blocks: list
    block_vectors: np.ndarray
    objective: float
    clipped_count: int

    @property
    def vectors(self) -> dict:
        return {
            fid: self.block_vectors[b]
            for b, block in enumerate(self.blocks)
            for fid in block
        }


@dataclass
class PipelineResult:
    embeddings: EmbeddingSet
    classification: FeatureClassification
    diagnostics: dict


# ---------------------------------------------------------------------------
# initial fits and alignment


def initial_embeddings(S1: SiteMatrix, S2: SiteMatrix, r: int):
    """Per-site truncated PSD factorizations.

    Returns the raw-frame :class:`EmbeddingSet` and the two
    :class:`Factorization` objects (which carry eigenvalue clipping counts).
    """
    if r > min(S1.n, S2.n):
        raise ConfigError(f"rank {r} exceeds site dimensions ({S1.n}, {S2.n})")
    facs = {1: truncated_psd_factorization(S1.matrix, r), 2: truncated_psd_factorization(S2.matrix, r)}
    emb = EmbeddingSet(
        r,
        {1: S1.feature_order, 2: S2.feature_order},
        {1: facs[1].X, 2: facs[2].X},
        frame="raw",
    )
    return emb, facs


def _overlap_ids(catalog: FeatureCatalog) -> list:
    return [catalog.ids[i] for i in catalog.overlap_index]


def align_sites(emb: EmbeddingSet, catalog: FeatureCatalog):
    """Rotate site-2 vectors onto site 1 using the overlapping features.

    Returns ``(aligned, Q)`` with ``Q = argmin ||X1_o - X2_o Q||_F``.
    """
    overlap = _overlap_ids(catalog)
    if len(overlap) < emb.rank:
        raise NumericalError(f"overlap has {len(overlap)} features, fewer than rank {emb.rank}")
    try:
        Q = procrustes(emb.matrix(2, overlap), emb.matrix(1, overlap))
    except NumericalError as exc:
        raise NumericalError(f"overlap cross-product is degenerate: {exc}") from exc
    aligned = emb.rotated(2, Q, frame="aligned-to-site-1")
    aligned.frame = "aligned-to-site-1"
    return aligned, Q


def cross_site_statistics(aligned: EmbeddingSet, catalog: FeatureCatalog) -> dict:
    """Weighted cross-site deviation per overlapping feature.

    ``max_k w_k (w_1 + w_2) ||x_k - xbar||^2`` where ``xbar`` is the
    ``w``-weighted mean of the two aligned vectors.
    """
    overlap = _overlap_ids(catalog)
    idx = catalog.overlap_index
    w1 = catalog.weights[idx, 0][:, None]
    w2 = catalog.weights[idx, 1][:, None]
    a1 = aligned.matrix(1, overlap)
    a2 = aligned.matrix(2, overlap)
    xbar = (w1 * a1 + w2 * a2) / (w1 + w2)
    s1 = (w1 * (w1 + w2))[:, 0] * np.sum((a1 - xbar) ** 2, axis=1)
    s2 = (w2 * (w1 + w2))[:, 0] * np.sum((a2 - xbar) ** 2, axis=1)
    return dict(zip(overlap, np.maximum(s1, s2).tolist()))


def classify_cross_site(aligned: EmbeddingSet, catalog: FeatureCatalog, lam: float, stats=None):
    """Split the overlap into ``(consistent, divergent, statistics)`` at ``lam`` (inclusive)."""
    if aligned.frame != "aligned-to-site-1":
        raise ConfigError(f"expected aligned embeddings, got frame {aligned.frame!r}")
    if stats is None:
        stats = cross_site_statistics(aligned, catalog)
    consistent = frozenset(fid for fid, s in stats.items() if s <= lam)
    divergent = frozenset(stats) - consistent
    return consistent, divergent, stats


def group_statistics(aligned: EmbeddingSet, catalog: FeatureCatalog, divergent):
    """Group centers and per-feature outlier statistics.

    Returns ``(centers, stats)``: ``centers`` maps group name to its weighted
    center (groups whose weight sum is zero are absent) and ``stats`` maps
    every grouped, non-divergent feature to
    ``max_k w_{k,i} w_g ||x_k,i - center||^2``.
    """
    r = aligned.rank
    G = catalog.n_groups
    codes = catalog.group_codes
    div_mask = np.zeros(catalog.n, dtype=bool)
    div_mask[[catalog.index[f] for f in divergent]] = True
    num = np.zeros((G, r))
    den = np.zeros(G)
    per_site = []
    for k in (1, 2):
        idx = catalog.site_index(k)
        A = aligned.vectors[k]
        w = catalog.weights[idx, k - 1]
        elig = (codes[idx] >= 0) & ~div_mask[idx]
        np.add.at(num, codes[idx][elig], w[elig, None] * A[elig])
        np.add.at(den, codes[idx][elig], w[elig])
        per_site.append((idx, A, w, elig))
    has_center = den > 0
    centers_arr = np.zeros((G, r))
    centers_arr[has_center] = num[has_center] / den[has_center, None]

    stat = np.full(catalog.n, -np.inf)
    for idx, A, w, elig in per_site:
        g = codes[idx][elig]
        d2 = np.sum((A[elig] - centers_arr[g]) ** 2, axis=1)
        vals = w[elig] * den[g] * d2
        np.maximum.at(stat, idx[elig], vals)
    stats = {
        catalog.ids[i]: float(stat[i])
        for i in np.flatnonzero(np.isfinite(stat))
        if has_center[codes[i]]
    }
    centers = {
        catalog.group_names[g]: centers_arr[g] for g in np.flatnonzero(has_center)
    }
    return centers, stats


def group_centers_and_outliers(aligned: EmbeddingSet, catalog: FeatureCatalog, divergent, mu: float, stats=None):
    """Group centers and ``h_hat`` over all non-divergent features.

    ``h_hat = 1`` iff the feature is grouped and its outlier statistic is
    at most ``mu``. Ungrouped features, and members of groups without a
    center, get 0.
    """
    if stats is None:
        centers, stats = group_statistics(aligned, catalog, divergent)
    else:
        centers, stats = stats
    h_hat = {}
    for i, fid in enumerate(catalog.ids):
        if fid in divergent:
            continue
        s = stats.get(fid)
        h_hat[fid] = int(s is not None and s <= mu)
    return centers, h_hat, stats


def derive_feature_sets(catalog: FeatureCatalog, consistent, divergent, h_hat, group_centers=None) -> FeatureClassification:
    """Anchored / solo / outlier sets and the block partition of ``consistent``."""
    codes = catalog.group_codes
    anchor_groups = {
        codes[catalog.index[fid]]
        for fid in consistent
        if h_hat[fid] == 1 and codes[catalog.index[fid]] >= 0
    }
    anchored, solo, no_out = set(), set(), set()
    for i in catalog.nonoverlap_index:
        fid = catalog.ids[i]
        if h_hat[fid] == 0:
            no_out.add(fid)
        elif codes[i] in anchor_groups:
            anchored.add(fid)
        else:
            solo.add(fid)
    merged = {}
    singletons = []
    for fid in sorted(consistent):
        g = codes[catalog.index[fid]]
        if h_hat[fid] == 1 and g >= 0:
            merged.setdefault(g, []).append(fid)
        else:
            singletons.append((fid,))
    blocks = [tuple(b) for b in merged.values()] + singletons
    blocks.sort(key=lambda b: b[0])
    return FeatureClassification(
        consistent=frozenset(consistent),
        divergent=frozenset(divergent),
        h_hat=dict(h_hat),
        anchored=frozenset(anchored),
        solo=frozenset(solo),
        outliers=frozenset(no_out) | frozenset(divergent),
        partition=blocks,
        group_centers=dict(group_centers or {}),
    )


def residual_spectral_norm(S, X) -> float:
    ev = np.linalg.eigvalsh(np.asarray(S) - X @ X.T)
    return float(max(abs(ev[0]), abs(ev[-1])))


def compute_site_weights(S1: SiteMatrix, S2: SiteMatrix, emb_initial: EmbeddingSet):
    """Site weights from normalized squared residual spectral norms.

    Each site's weight is proportional to the *other* site's
    ``n_k^{-1} ||S_k - X_k X_k^T||_2^2``.
    """
    res = {}
    for k, S in ((1, S1), (2, S2)):
        res[k] = residual_spectral_norm(S.matrix, emb_initial.vectors[k]) ** 2 / S.n
    total = res[1] + res[2]
    if total <= 0:
        logger.warning("both residuals are zero; using equal site weights")
        return 0.5, 0.5
    return res[2] / total, res[1] / total


# ---------------------------------------------------------------------------
# refinement


def _submatrix(S: SiteMatrix, rows, cols=None) -> np.ndarray:
    pos = {fid: p for p, fid in enumerate(S.feature_order)}
    r = [pos[f] for f in rows]
    c = r if cols is None else [pos[f] for f in cols]
    return S.matrix[np.ix_(r, c)]


def consistent_objective(S_blocks, site_weights, X) -> float:
    """``sum_k w_k ||S_k - X X^T||_F^2`` on the consistent submatrices."""
    G = X @ X.T
    return float(sum(w * np.sum((S - G) ** 2) for S, w in zip(S_blocks, site_weights)))


def refine_consistent(S1: SiteMatrix, S2: SiteMatrix, classification: FeatureClassification, site_weights, r: int) -> ConsistentFit:
    """Block-constrained joint factorization of the consistent submatrices.

    With ``C`` the block indicator and ``D = C^T C``, the minimizer over
    ``X = C Z`` of ``sum_k w_k ||S_k - X X^T||_F^2`` is
    ``Z = D^{-1/2} V diag(d)^{1/2}`` where ``(d, V)`` is the clipped top-r
    eigenpair set of ``D^{-1/2} C^T Sbar C D^{-1/2}``.
    """
    blocks = list(classification.partition)
    L = len(blocks)
    if L < r:
        raise NumericalError(f"partition has {L} blocks, fewer than rank {r}")
    order = [fid for block in blocks for fid in block]
    membership = np.repeat(np.arange(L), [len(b) for b in blocks])
    w1, w2 = site_weights
    S_cons = (_submatrix(S1, order), _submatrix(S2, order))
    Sbar = (w1 * S_cons[0] + w2 * S_cons[1]) / (w1 + w2)
    C = np.zeros((len(order), L))
    C[np.arange(len(order)), membership] = 1.0
    sizes = C.sum(axis=0)
    scale = 1.0 / np.sqrt(sizes)
    K = scale[:, None] * (C.T @ Sbar @ C) * scale[None, :]
    fac = truncated_psd_factorization((K + K.T) / 2.0, r)
    Z = scale[:, None] * fac.X
    X = Z[membership]
    return ConsistentFit(
        blocks=blocks,
        block_vectors=Z,
        objective=consistent_objective(S_cons, site_weights, X),
        clipped_count=fac.clipped_count,
    )


def propagate_anchor(classification: FeatureClassification, fit: ConsistentFit, catalog: FeatureCatalog) -> dict:
    """Copy each anchored feature's group block vector, per present site.

    Returns ``{site: {id: vector}}``.
    """
    codes = catalog.group_codes
    # merged blocks are exactly those of grouped h_hat=1 members, one per group
    group_block = {}
    for b, block in enumerate(fit.blocks):
        g = codes[catalog.index[block[0]]]
        if g >= 0 and all(classification.h_hat[f] == 1 for f in block):
            group_block[g] = b
    out = {1: {}, 2: {}}
    for fid in sorted(classification.anchored):
        i = catalog.index[fid]
        b = group_block[codes[i]]
        for k in (1, 2):
            if catalog.present[i, k - 1]:
                out[k][fid] = fit.block_vectors[b]
    return out


def refine_solo_groups(S1: SiteMatrix, S2: SiteMatrix, classification: FeatureClassification, fit, site_weights, catalog: FeatureCatalog):
    """One shared vector per solo group by weighted regression on consistent vectors.

    Stacks rows ``(k, i, j)`` for members ``i`` at site ``k`` and consistent
    ``j``, with response ``s_{k,i,j}``, design ``xhat_j`` and weight ``w_k``.
    Because the consistent design is shared across sites and members, the
    normal equations reduce to ``(sum_k w_k m_k) A^T A g = A^T sum_k w_k sum_i s_{k,i}``.

    Returns ``(vectors, group_vectors, demoted)`` where ``demoted`` holds
    solo features handed to the outlier step because no consistent
    features exist.
    """
    out = {1: {}, 2: {}}
    if not classification.solo:
        return out, {}, frozenset()
    if fit is None or not classification.consistent:
        logger.info(
            "no consistent features; %d solo features demoted to outlier refinement",
            len(classification.solo),
        )
        return out, {}, frozenset(classification.solo)
    cons = [fid for block in fit.blocks for fid in block]
    vec = fit.vectors
    A = np.vstack([vec[f] for f in cons])
    gram = A.T @ A
    codes = catalog.group_codes
    members = {}
    for fid in sorted(classification.solo):
        members.setdefault(codes[catalog.index[fid]], []).append(fid)
    group_vectors = {}
    for g, fids in members.items():
        total_w = 0.0
        rhs = np.zeros(A.shape[1])
        for k, S in ((1, S1), (2, S2)):
            at_k = [f for f in fids if catalog.present[catalog.index[f], k - 1]]
            if not at_k:
                continue
            total_w += site_weights[k - 1] * len(at_k)
            rhs += site_weights[k - 1] * (A.T @ _submatrix(S, at_k, cons).sum(axis=0))
        gamma = solve_normal_equations(total_w * gram, rhs)
        group_vectors[catalog.group_names[g]] = gamma
        for fid in fids:
            i = catalog.index[fid]
            for k in (1, 2):
                if catalog.present[i, k - 1]:
                    out[k][fid] = gamma
    return out, group_vectors, frozenset()


def refine_outliers(S1: SiteMatrix, S2: SiteMatrix, outliers, refined, emb_initial: EmbeddingSet):
    """Per-site least squares for outlier features.

    ``refined`` maps ``{site: {id: vector}}`` for every non-outlier feature.
    At each site the initial embeddings are first rotated onto the refined
    ones (Procrustes over the transferable features); the design then uses
    refined vectors for non-outliers and rotated initial vectors for
    outliers. Returns ``({site: {id: vector}}, {site: W})``.
    """
    out = {1: {}, 2: {}}
    rotations = {}
    for k, S in ((1, S1), (2, S2)):
        ids = S.feature_order
        X0 = emb_initial.matrix(k, ids)
        trans_pos = [p for p, f in enumerate(ids) if f not in outliers]
        out_pos = [p for p, f in enumerate(ids) if f in outliers]
        if trans_pos:
            Xhat_t = np.vstack([refined[k][ids[p]] for p in trans_pos])
            try:
                W = procrustes(X0[trans_pos], Xhat_t)
            except NumericalError:
                logger.info("site %d: degenerate alignment on %d transferable features", k, len(trans_pos))
                W = procrustes(X0[trans_pos], Xhat_t, strict=False)
        else:
            W = np.eye(emb_initial.rank)
        rotations[k] = W
        if not out_pos:
            continue
        design = X0 @ W
        if trans_pos:
            design[trans_pos] = Xhat_t
        sol = least_squares(design, S.matrix[:, out_pos])
        for c, p in enumerate(out_pos):
            out[k][ids[p]] = sol[:, c]
    return out, rotations


# ---------------------------------------------------------------------------
# Orchestration


@dataclass
class PreparedSites:
    """Threshold-independent state: initial fits, alignment and site weights."""

    catalog: FeatureCatalog
    S1: SiteMatrix
    S2: SiteMatrix
    rank: int
    initial: EmbeddingSet
    aligned: EmbeddingSet
    Q: np.ndarray
    site_weights: tuple
    clipped: dict
    cross_stats: dict
    _group_stats_cache: dict = field(default_factory=dict, repr=False)

    def group_stats(self, divergent):
        key = frozenset(divergent)
        if key not in self._group_stats_cache:
            if len(self._group_stats_cache) > 64:
                self._group_stats_cache.clear()
            self._group_stats_cache[key] = group_statistics(self.aligned, self.catalog, key)
        return self._group_stats_cache[key]


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (TransNESTError, np.linalg.LinAlgError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _check_inputs(S1, S2, catalog):
    for k, S in ((1, S1), (2, S2)):
        if S.site != k:
            raise ConfigError(f"matrix for site {k} is labelled site {S.site}")
        if list(S.feature_order) != catalog.site_ids(k):
            raise ConfigError(f"S{k} feature order does not match catalog site {k}")


def prepare(S1: SiteMatrix, S2: SiteMatrix, catalog: FeatureCatalog, rank: int, site_weights="auto", initial: EmbeddingSet | None = None) -> PreparedSites:
    """Fit each site, align the sites and compute site weights.

    ``initial`` may supply externally computed initial embeddings (raw
    frame); otherwise they come from the truncated PSD factorization.
    """
    _check_inputs(S1, S2, catalog)
    if initial is None:
        initial, facs = _stage("initial_embeddings", initial_embeddings, S1, S2, rank)
        clipped = {k: f.clipped_count for k, f in facs.items()}
    else:
        if initial.rank != rank:
            raise ConfigError(f"supplied embeddings have rank {initial.rank}, expected {rank}")
        for k, S in ((1, S1), (2, S2)):
            if tuple(initial.ids.get(k, ())) != S.feature_order:
                raise ConfigError(f"supplied embeddings do not cover site {k} exactly")
        clipped = {1: 0, 2: 0}
    aligned, Q = _stage("align_sites", align_sites, initial, catalog)
    if site_weights == "auto":
        w = _stage("site_weights", compute_site_weights, S1, S2, initial)
    else:
        w = tuple(float(x) for x in site_weights)
    stats = cross_site_statistics(aligned, catalog)
    return PreparedSites(catalog, S1, S2, rank, initial, aligned, Q, tuple(w), clipped, stats)


def classify(prep: PreparedSites, lam: float, mu: float, force_no_transfer: bool = False) -> FeatureClassification:
    """Threshold the cross-site and group statistics on prepared state."""
    catalog = prep.catalog
    if force_no_transfer:
        divergent = frozenset(prep.cross_stats)
        consistent = frozenset()
        h_hat = {catalog.ids[i]: 0 for i in catalog.nonoverlap_index}
        return derive_feature_sets(catalog, consistent, divergent, h_hat)
    consistent, divergent, _ = classify_cross_site(prep.aligned, catalog, lam, stats=prep.cross_stats)
    centers, h_hat, _ = group_centers_and_outliers(
        prep.aligned, catalog, divergent, mu, stats=prep.group_stats(divergent)
    )
    return derive_feature_sets(catalog, consistent, divergent, h_hat, centers)


def fit_prepared(prep: PreparedSites, lam: float, mu: float, force_no_transfer: bool = False) -> PipelineResult:
    """Classify and refine for one ``(lam, mu)`` pair on prepared state."""
    catalog, S1, S2, r = prep.catalog, prep.S1, prep.S2, prep.rank
    cls = _stage("classify", classify, prep, lam, mu, force_no_transfer)
    notes = []
    refined = {1: {}, 2: {}}
    fit = None
    if cls.consistent:
        fit = _stage("refine_consistent", refine_consistent, S1, S2, cls, prep.site_weights, r)
        for fid, v in fit.vectors.items():
            refined[1][fid] = v
            refined[2][fid] = v
        anch = _stage("propagate_anchor", propagate_anchor, cls, fit, catalog)
        for k in (1, 2):
            refined[k].update(anch[k])
    solo_vecs, group_vectors, demoted = _stage(
        "refine_solo_groups", refine_solo_groups, S1, S2, cls, fit, prep.site_weights, catalog
    )
    if demoted:
        notes.append(f"{len(demoted)} solo features demoted to outlier refinement")
    for k in (1, 2):
        refined[k].update(solo_vecs[k])
    outliers = cls.outliers | demoted
    out_vecs, rotations = _stage("refine_outliers", refine_outliers, S1, S2, outliers, refined, prep.initial)
    per_site = {k: {**refined[k], **out_vecs[k]} for k in (1, 2)}
    for k, S in ((1, S1), (2, S2)):
        if set(per_site[k]) != set(S.feature_order):
            raise StageError("assemble", f"site {k} output does not cover its features exactly")
    emb = EmbeddingSet.from_dicts(r, per_site, frame="refined")
    diagnostics = {
        "rank": r,
        "lambda": lam,
        "mu": mu,
        "force_no_transfer": force_no_transfer,
        "site_weights": list(prep.site_weights),
        "Q_hat": prep.Q.tolist(),
        "Q_hat_sha256": hashlib.sha256(np.ascontiguousarray(prep.Q).tobytes()).hexdigest(),
        "clipped_eigenvalues": {str(k): v for k, v in prep.clipped.items()},
        "set_sizes": cls.sizes(),
        "cross_site_statistics": prep.cross_stats,
        "group_statistics": prep.group_stats(cls.divergent)[1] if not force_no_transfer else {},
        "consistent_objective": None if fit is None else fit.objective,
        "consistent_clipped": None if fit is None else fit.clipped_count,
        "outlier_rotations": {str(k): W.tolist() for k, W in rotations.items()},
        "solo_group_vectors": {g: v.tolist() for g, v in sorted(group_vectors.items())},
        "notes": notes,
    }
    return PipelineResult(emb, cls, diagnostics)


def run_pipeline(S1: SiteMatrix, S2: SiteMatrix, catalog: FeatureCatalog, config: PipelineConfig, initial: EmbeddingSet | None = None) -> PipelineResult:
    """Fit the estimator end to end."""
    prep = prepare(S1, S2, catalog, config.rank, config.site_weights, initial=initial)
    return fit_prepared(prep, config.lam, config.mu, config.force_no_transfer)
