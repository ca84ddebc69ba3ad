import numpy as np
import pytest
from scipy.optimize import minimize

from transnest.catalog import Feature, FeatureCatalog, site_matrix
from transnest.pipeline import derive_feature_sets


def make_catalog(spec):
    """``spec``: iterable of ``(id, group_or_None, sites, weights_dict)``."""
    return FeatureCatalog([Feature(fid, g, tuple(s), dict(w or {})) for fid, g, s, w in spec])


def planted_problem(seed, r=3, n_o=12, n1_only=5, n2_only=5, group_size=3, noise=(0.0, 0.0),
                    divergent=0, weights=None):
    """Shared-embedding two-site model.

    Overlap features carry one vector at both sites except the first
    ``divergent`` ones, which get an extra site-2 perturbation. Features are
    grouped in consecutive runs of ``group_size`` over the overlap ids.
    Returns ``(catalog, S1, S2, X)`` with ``X[k]`` the true site-k matrix in
    canonical order.
    """
    rng = np.random.default_rng(seed)
    spec, vec = [], {}
    for i in range(n_o):
        fid = f"o{i:03d}"
        g = f"g{i // group_size:02d}" if group_size > 1 else None
        spec.append((fid, g, (1, 2), weights))
        v = rng.standard_normal(r)
        vec[(1, fid)] = v
        vec[(2, fid)] = v + (3.0 * rng.standard_normal(r) if i < divergent else 0.0)
    for k, count in ((1, n1_only), (2, n2_only)):
        for i in range(count):
            fid = f"s{k}_{i:03d}"
            spec.append((fid, None, (k,), None))
            vec[(k, fid)] = rng.standard_normal(r)
    catalog = make_catalog(spec)
    out, X = {}, {}
    for k in (1, 2):
        ids = catalog.site_ids(k)
        X[k] = np.vstack([vec[(k, f)] for f in ids])
        E = rng.standard_normal((len(ids), len(ids)))
        S = X[k] @ X[k].T + noise[k - 1] * (E + E.T) / np.sqrt(2)
        out[k] = site_matrix(catalog, k, S, ids)
    return catalog, out[1], out[2], X


def block_problem(blocks, r, seed, weights=(0.5, 0.5)):
    """All-overlap, all-consistent catalog whose partition equals ``blocks``.

    ``blocks`` is a list of block sizes; size-1 blocks are ungrouped. Returns
    ``(catalog, S1, S2, classification)`` with random symmetric matrices.
    """
    rng = np.random.default_rng(seed)
    spec = []
    c = 0
    for b, size in enumerate(blocks):
        for _ in range(size):
            spec.append((f"c{c:03d}", f"b{b:02d}" if size > 1 else None, (1, 2), None))
            c += 1
    catalog = make_catalog(spec)
    ids = list(catalog.ids)
    n = len(ids)
    mats = []
    for _ in (1, 2):
        A = rng.standard_normal((n, r + 1))
        E = rng.standard_normal((n, n))
        mats.append(A @ A.T + 0.3 * (E + E.T))
    S1 = site_matrix(catalog, 1, mats[0], ids)
    S2 = site_matrix(catalog, 2, mats[1], ids)
    h = {f: int(catalog.group_codes[catalog.index[f]] >= 0) for f in ids}
    cls = derive_feature_sets(catalog, frozenset(ids), frozenset(), h)
    return catalog, S1, S2, cls


def block_oracle_objective(S_blocks, weights, membership, L, r, seed=0, starts=8):
    """Minimize ``sum_k w_k ||S_k - C Z Z^T C^T||_F^2`` over ``Z`` by L-BFGS.

    Independent of the closed-form solver: plain gradient descent from
    several random starts, best objective returned.
    """
    m = len(membership)
    C = np.zeros((m, L))
    C[np.arange(m), membership] = 1.0
    rng = np.random.default_rng(seed)

    def f(z):
        Z = z.reshape(L, r)
        G = C @ Z @ Z.T @ C.T
        val = 0.0
        grad = np.zeros((L, r))
        for S, w in zip(S_blocks, weights):
            R = S - G
            val += w * np.sum(R * R)
            grad += -4.0 * w * (C.T @ R @ C @ Z)
        return val, grad.ravel()

    scale = np.sqrt(max(np.abs(S_blocks[0]).max(), 1e-12))
    best = np.inf
    for _ in range(starts):
        z0 = scale * rng.standard_normal(L * r)
        res = minimize(f, z0, jac=True, method="L-BFGS-B", options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15})
        best = min(best, res.fun)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
