"""Two-site simulation generator with group, feature and feature-site effects.

Embeddings are ``x_{k,i} = beta_{g_i} 1(|G_i| > 1) + zeta_i + delta_{k,i}``
with block-AR(1) covariances across groups, features and the feature-site
effects. Feature layout in generation order: the overlap first, then the
site-1-only and site-2-only features. Ids are zero-padded so the canonical
(lexicographic) order equals generation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .catalog import Feature, FeatureCatalog, SiteMatrix
from .errors import ConfigError, NumericalError
from .labels import Pair, PairLabelSet
from .rng import substream


@dataclass
class SimConfig:
    n1: int = 2000
    n2: int = 2000
    n_o: int = 1000
    G: int = 400
    group_size: int = 5
    n_ungrouped_per_site: int = 500
    n_zeta_zero: int = 1000
    n_delta: int = 100
    r: int = 50
    rho_beta: float = 0.4
    rho_zeta: float = 0.4
    rho_delta: float = 0.95
    beta_block: int = 10
    beta_ar_size: int = 3
    zeta_block: int = 6
    delta_block: int = 50
    sigma_source: float = 5.0
    n_freq: int = 1300
    sigma_freq: float = 20.0
    n_rare: int = 700
    sigma_rare: float = 80.0
    noise_scale: float = 1.0
    tune_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return self.n1 + self.n2 - self.n_o

    def validate(self) -> None:
        if min(self.n1, self.n2, self.r, self.G, self.group_size) < 1 or self.n_o < 0:
            raise ConfigError("n1, n2, r, G, group_size must be positive and n_o nonnegative")
        if self.n_o > min(self.n1, self.n2):
            raise ConfigError(f"n_o={self.n_o} exceeds min(n1, n2)={min(self.n1, self.n2)}")
        if self.n_freq + self.n_rare != self.n2:
            raise ConfigError(f"n_freq + n_rare = {self.n_freq + self.n_rare} != n2 = {self.n2}")
        if self.n_zeta_zero > self.n_o or self.n_delta > self.n_o:
            raise ConfigError("n_zeta_zero and n_delta cannot exceed n_o")
        if self.n_ungrouped_per_site > min(self.n1, self.n2) - self.n_o:
            raise ConfigError("more ungrouped features than site-specific features")
        grouped = self.n - 2 * self.n_ungrouped_per_site
        if grouped != self.G * self.group_size:
            raise ConfigError(
                f"{grouped} grouped features cannot fill G={self.G} groups of size {self.group_size}"
            )
        if self.G % self.beta_block or self.beta_ar_size > self.beta_block:
            raise ConfigError(f"G={self.G} must be a multiple of beta_block={self.beta_block}")
        for name in ("sigma_source", "sigma_freq", "sigma_rare"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.noise_scale >= 0:
            raise ConfigError("noise_scale must be nonnegative")
        for name in ("rho_beta", "rho_zeta", "rho_delta"):
            if not -1 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (-1, 1)")
        if not 0 <= self.tune_fraction <= 1:
            raise ConfigError("tune_fraction must lie in [0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "C1": dict(G=400, group_size=5, n_zeta_zero=1000, n_delta=100),
    "C2": dict(G=400, group_size=5, n_zeta_zero=1000, n_delta=200),
    "C3": dict(G=400, group_size=5, n_zeta_zero=0, n_delta=100),
    "C4": dict(G=400, group_size=5, n_zeta_zero=0, n_delta=200),
    "C5": dict(G=250, group_size=8, n_zeta_zero=1000, n_delta=100),
    "C6": dict(G=250, group_size=8, n_zeta_zero=1000, n_delta=200),
    "C7": dict(G=250, group_size=8, n_zeta_zero=0, n_delta=100),
    "C8": dict(G=250, group_size=8, n_zeta_zero=0, n_delta=200),
    # desk-scale analogue of C1: n=300, r=10, noise x0.05
    "small": dict(
        n1=200, n2=200, n_o=100, G=40, group_size=5, n_ungrouped_per_site=50,
        n_zeta_zero=100, n_delta=10, r=10, n_freq=130, n_rare=70, noise_scale=0.05,
    ),
}


def preset(name: str, **overrides) -> SimConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SimConfig(**base)


# ---------------------------------------------------------------------------


def ar1_matrix(size: int, rho: float) -> np.ndarray:
    idx = np.arange(size)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def sample_block_ar1(block_sizes, rho: float, n_cols: int, rng) -> np.ndarray:
    """Draw ``n_cols`` columns from ``N(0, Sigma)`` with block-diagonal AR(1) ``Sigma``.

    ``Sigma`` has one block ``rho^|i-j|`` per entry of ``block_sizes`` (a
    size-1 block is a unit variance). Returns an array of shape
    ``(sum(block_sizes), n_cols)``.
    """
    block_sizes = [int(b) for b in block_sizes]
    if any(b < 1 for b in block_sizes):
        raise ConfigError("block sizes must be positive")
    dim = sum(block_sizes)
    z = rng.standard_normal((dim, n_cols))
    out = np.empty_like(z)
    factors = {}
    start = 0
    for b in block_sizes:
        if b not in factors:
            try:
                factors[b] = np.linalg.cholesky(ar1_matrix(b, rho))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"Cholesky failed for AR(1) block size {b}, rho={rho}") from exc
        out[start:start + b] = factors[b] @ z[start:start + b]
        start += b
    return out


def _even_blocks(total: int, size: int) -> list:
    sizes = [size] * (total // size)
    if total % size:
        sizes.append(total % size)
    return sizes


def beta_layout(cfg: SimConfig) -> list:
    """Block sizes of the group covariance: repeated (AR(1) 3-block + identity)."""
    unit = [cfg.beta_ar_size] + [1] * (cfg.beta_block - cfg.beta_ar_size)
    return unit * (cfg.G // cfg.beta_block)


@dataclass
class GroundTruth:
    """Everything the generator knows; indices are global generation positions."""

    config: SimConfig
    ids: list
    present: np.ndarray
    group: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray
    zeta_zero: np.ndarray
    delta_index: dict
    delta: dict
    X: dict
    M: dict
    sigma: dict
    rare: np.ndarray
    consistent: frozenset
    divergent: frozenset
    h: dict
    anchored: frozenset
    solo: frozenset
    outliers: frozenset
    partition: list
    extra: dict = field(default_factory=dict)

    def site_index(self, k) -> np.ndarray:
        return np.flatnonzero(self.present[:, k - 1])

    @property
    def transferable(self) -> frozenset:
        return self.consistent | self.anchored | self.solo

    def frequent_ids(self) -> list:
        idx = self.site_index(2)
        return [self.ids[i] for i in idx[~self.rare[idx]]]

    def rare_ids(self) -> list:
        idx = self.site_index(2)
        return [self.ids[i] for i in idx[self.rare[idx]]]

    def to_document(self) -> dict:
        def rows(A):
            return [[float(v) for v in row] for row in A]

        return {
            "config": self.config.to_dict(),
            "embeddings": {
                str(k): {"ids": [self.ids[i] for i in self.site_index(k)], "vectors": rows(self.X[k])}
                for k in (1, 2)
            },
            "sets": {
                "consistent": sorted(self.consistent),
                "divergent": sorted(self.divergent),
                "anchored": sorted(self.anchored),
                "solo": sorted(self.solo),
                "outliers": sorted(self.outliers),
                "h": {k: int(v) for k, v in sorted(self.h.items())},
                "partition": [list(b) for b in self.partition],
            },
            "sigma": {
                str(k): dict(zip((self.ids[i] for i in self.site_index(k)), map(float, self.sigma[k])))
                for k in (1, 2)
            },
            "rare": self.rare_ids(),
            "frequent": self.frequent_ids(),
        }


def _truth_sets(ids, present, group, zeta_zero, delta_mask):
    """Truth analogues of the estimated feature types."""
    n = len(ids)
    overlap = present.all(axis=1)
    # delta draws are continuous, so delta_1 != delta_2 iff either site drew one
    divergent = {ids[i] for i in range(n) if overlap[i] and delta_mask[i].any()}
    consistent = {ids[i] for i in range(n) if overlap[i]} - divergent
    h = {}
    for i in range(n):
        if ids[i] in divergent:
            continue
        no_site_effect = not delta_mask[i][present[i]].any()
        h[ids[i]] = int(group[i] >= 0 and zeta_zero[i] and no_site_effect)
    index = {fid: i for i, fid in enumerate(ids)}
    anchor_groups = {group[index[f]] for f in consistent if h[f] == 1}
    anchored, solo, no_out = set(), set(), set()
    for i in np.flatnonzero(~overlap):
        fid = ids[i]
        if h[fid] == 0:
            no_out.add(fid)
        elif group[i] in anchor_groups:
            anchored.add(fid)
        else:
            solo.add(fid)
    merged, singles = {}, []
    for fid in sorted(consistent):
        g = group[index[fid]]
        if h[fid] == 1 and g >= 0:
            merged.setdefault(g, []).append(fid)
        else:
            singles.append((fid,))
    partition = sorted([tuple(b) for b in merged.values()] + singles, key=lambda b: b[0])
    return (frozenset(consistent), frozenset(divergent), h, frozenset(anchored),
            frozenset(solo), frozenset(no_out | divergent), partition)


def generate_ground_truth(cfg: SimConfig) -> GroundTruth:
    """Draw embeddings, feature types and noise levels for one replicate."""
    cfg.validate()
    seed = int(cfg.seed)
    n, n1, n_o = cfg.n, cfg.n1, cfg.n_o
    width = max(5, len(str(n - 1)))
    ids = [f"f{i:0{width}d}" for i in range(n)]
    present = np.zeros((n, 2), dtype=bool)
    present[:n1, 0] = True
    present[:n_o, 1] = True
    present[n1:, 1] = True

    rng = substream(seed, "layout")
    site1_only = np.arange(n_o, n1)
    site2_only = np.arange(n1, n)
    ungrouped = np.concatenate([
        rng.choice(site1_only, cfg.n_ungrouped_per_site, replace=False),
        rng.choice(site2_only, cfg.n_ungrouped_per_site, replace=False),
    ])
    grouped = np.setdiff1d(np.arange(n), ungrouped)
    grouped = rng.permutation(grouped)
    group = np.full(n, -1, dtype=int)
    group[grouped] = np.repeat(np.arange(cfg.G), cfg.group_size)

    beta = sample_block_ar1(beta_layout(cfg), cfg.rho_beta, cfg.r, substream(seed, "beta"))
    zeta = sample_block_ar1(_even_blocks(n, cfg.zeta_block), cfg.rho_zeta, cfg.r, substream(seed, "zeta"))
    zeta_zero = np.zeros(n, dtype=bool)
    zeta_zero[substream(seed, "zeta-zero").choice(n_o, cfg.n_zeta_zero, replace=False)] = True
    zeta[zeta_zero] = 0.0

    delta_index, delta = {}, {}
    delta_full = {k: np.zeros((n, cfg.r)) for k in (1, 2)}
    delta_mask = np.zeros((n, 2), dtype=bool)
    for k in (1, 2):
        d_idx = substream(seed, f"delta-select-{k}").choice(n_o, cfg.n_delta, replace=False)
        if cfg.n_delta:
            D = sample_block_ar1(_even_blocks(cfg.n_delta, cfg.delta_block), cfg.rho_delta, cfg.r,
                                 substream(seed, f"delta-{k}"))
        else:
            D = np.zeros((0, cfg.r))
        delta_index[k] = d_idx
        delta[k] = D
        delta_full[k][d_idx] = D
        delta_mask[d_idx, k - 1] = True

    group_sizes = np.bincount(group[group >= 0], minlength=cfg.G)
    multi = np.zeros(n, dtype=bool)
    multi[group >= 0] = group_sizes[group[group >= 0]] > 1
    base = np.where(multi[:, None], beta[np.maximum(group, 0)], 0.0) + zeta
    X, M, sigma = {}, {}, {}
    rare = np.zeros(n, dtype=bool)
    idx2 = np.flatnonzero(present[:, 1])
    rare[substream(seed, "rare").choice(idx2, cfg.n_rare, replace=False)] = True
    for k in (1, 2):
        idx = np.flatnonzero(present[:, k - 1])
        X[k] = base[idx] + delta_full[k][idx]
        M[k] = X[k] @ X[k].T
        if k == 1:
            s = np.full(idx.size, cfg.sigma_source)
        else:
            s = np.where(rare[idx], cfg.sigma_rare, cfg.sigma_freq)
        sigma[k] = s * cfg.noise_scale

    sets = _truth_sets(ids, present, group, zeta_zero, delta_mask)
    return GroundTruth(
        config=cfg, ids=ids, present=present, group=group, beta=beta, zeta=zeta,
        zeta_zero=zeta_zero, delta_index=delta_index, delta=delta, X=X, M=M,
        sigma=sigma, rare=rare, consistent=sets[0], divergent=sets[1], h=sets[2],
        anchored=sets[3], solo=sets[4], outliers=sets[5], partition=sets[6],
    )


def group_name(g: int, G: int) -> str:
    return f"g{g:0{max(3, len(str(G - 1)))}d}"


def simulation_catalog(truth: GroundTruth) -> FeatureCatalog:
    """Catalog with groups, site presence and weights ``1/sigma``.

    With zero noise the weights default to 1.
    """
    G = truth.config.G
    pos = {k: {i: p for p, i in enumerate(truth.site_index(k))} for k in (1, 2)}
    feats = []
    for i, fid in enumerate(truth.ids):
        sites = tuple(k for k in (1, 2) if truth.present[i, k - 1])
        weights = {}
        for k in sites:
            s = truth.sigma[k][pos[k][i]]
            if s > 0:
                weights[k] = 1.0 / s
        g = truth.group[i]
        feats.append(Feature(fid, group_name(g, G) if g >= 0 else None, sites, weights))
    return FeatureCatalog(feats)


def generate_site_matrices(truth: GroundTruth, cfg: SimConfig | None = None, rng=None):
    """Observed ``S_k = M_k + E_k`` with ``E_k[i, j] ~ N(0, sigma_i sigma_j)``.

    Noise is drawn on the upper triangle (diagonal included) and mirrored,
    so each ``S_k`` is exactly symmetric. Returns ``(S1, S2, catalog)``.
    """
    cfg = cfg or truth.config
    catalog = simulation_catalog(truth)
    out = []
    for k in (1, 2):
        gen = rng if rng is not None else substream(int(cfg.seed), f"noise-{k}")
        m = truth.M[k].shape[0]
        Z = gen.standard_normal((m, m))
        E = np.triu(Z)
        E = E + np.triu(E, 1).T
        sd = np.sqrt(truth.sigma[k])
        S = truth.M[k] + E * sd[:, None] * sd[None, :]
        out.append(SiteMatrix(k, tuple(truth.ids[i] for i in truth.site_index(k)), S))
    return out[0], out[1], catalog


# ---------------------------------------------------------------------------


def _positive_pairs(truth: GroundTruth) -> dict:
    """Related target-site pairs keyed by (i, j), i < j, with category lists."""
    cfg = truth.config
    on_target = truth.present[:, 1]
    cats = {}

    def add(i, j, cat):
        if i == j or not (on_target[i] and on_target[j]):
            return
        key = (min(i, j), max(i, j))
        lst = cats.setdefault(key, [])
        if cat not in lst:
            lst.append(cat)

    members = {}
    for i in np.flatnonzero(truth.group >= 0):
        members.setdefault(int(truth.group[i]), []).append(int(i))
    for g, mem in members.items():
        for a in range(len(mem)):
            for b in range(a + 1, len(mem)):
                add(mem[a], mem[b], "same-group")
    start = 0
    for size in beta_layout(cfg):
        for a in range(start, start + size):
            for b in range(a + 1, start + size):
                for i in members.get(a, []):
                    for j in members.get(b, []):
                        add(i, j, "cross-group")
        start += size
    start = 0
    for size in _even_blocks(cfg.n, cfg.zeta_block):
        for i in range(start, start + size):
            for j in range(i + 1, start + size):
                if not truth.zeta_zero[i] and not truth.zeta_zero[j]:
                    add(i, j, "feature-effect")
        start += size
    d2 = truth.delta_index[2]
    start = 0
    for size in _even_blocks(len(d2), cfg.delta_block):
        for a in range(start, start + size):
            for b in range(a + 1, start + size):
                add(int(d2[a]), int(d2[b]), "target-specific")
        start += size
    return cats


def derive_pair_labels(truth: GroundTruth, cfg: SimConfig | None = None, rng=None) -> PairLabelSet:
    """Positive pairs from the covariance structure plus equally many random negatives.

    Only pairs with both endpoints observed at the target site (site 2) are
    labelled. Each endpoint is tagged ``freq``/``rare`` and ``Tr``/``NTr``
    (transferable in truth or not). A seeded ``tune_fraction`` of positives
    and, separately, of negatives forms the tuning split.
    """
    cfg = cfg or truth.config
    gen = rng if rng is not None else substream(int(cfg.seed), "labels")
    positives = _positive_pairs(truth)
    target = truth.site_index(2)
    n_neg = len(positives)
    max_pairs = target.size * (target.size - 1) // 2
    if n_neg > max_pairs - len(positives):
        n_neg = max_pairs - len(positives)
    negatives = set()
    while len(negatives) < n_neg:
        draw = gen.choice(target, size=(2 * (n_neg - len(negatives)) + 16, 2))
        for a, b in draw:
            if a == b:
                continue
            key = (int(min(a, b)), int(max(a, b)))
            if key in positives or key in negatives:
                continue
            negatives.add(key)
            if len(negatives) == n_neg:
                break
    trans = truth.transferable

    def tags(i):
        fid = truth.ids[i]
        return ("rare" if truth.rare[i] else "freq"), ("Tr" if fid in trans else "NTr")

    def split_flags(count):
        n_tune = int(round(cfg.tune_fraction * count))
        flags = np.zeros(count, dtype=bool)
        flags[gen.permutation(count)[:n_tune]] = True
        return flags

    pairs = []
    pos_keys = sorted(positives)
    neg_keys = sorted(negatives)
    for keys, label, flags in ((pos_keys, 1, split_flags(len(pos_keys))),
                               (neg_keys, 0, split_flags(len(neg_keys)))):
        for (i, j), tune in zip(keys, flags):
            (fa, ta), (fb, tb) = tags(i), tags(j)
            pairs.append(Pair(
                truth.ids[i], truth.ids[j], label,
                ";".join(positives[(i, j)]) if label else "none",
                (fa, fb), (ta, tb), "tune" if tune else "eval",
            ))
    return PairLabelSet(pairs)


def simulate(cfg: SimConfig):
    """Convenience wrapper: ``(truth, S1, S2, catalog, labels)``."""
    truth = generate_ground_truth(cfg)
    S1, S2, catalog = generate_site_matrices(truth, cfg)
    labels = derive_pair_labels(truth, cfg)
    return truth, S1, S2, catalog, labels
