"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 run the full-size C1/C2 generator (n = 3000, r = 50) and
take several minutes in total.
"""

import math
import statistics
import time

import numpy as np
import pytest
from conftest import block_problem, block_oracle_objective, planted_problem
from scipy.stats import ortho_group

from transnest import cli, simgen
from transnest.embeddings import EmbeddingSet
from transnest.evaluation import auc_report, evaluate, frobenius_report
from transnest.labels import Pair, PairLabelSet
from transnest.numerics import procrustes
from transnest.pipeline import (
    PipelineConfig,
    classify,
    initial_embeddings,
    prepare,
    refine_consistent,
    run_pipeline,
)

C1_ERROR_REFERENCE = {
    ("transnest", "f_err"): 9.65, ("transnest", "f_rare_err"): 13.06,
    ("ssg", "f_err"): 10.23,
    ("ssvd", "f_err"): 16.11, ("ssvd", "f_rare_err"): 34.24,
    ("bonmi", "f_freq_err"): 7.91,
}
AUC_REFERENCE = {"C1": 0.77, "C2": 0.76}
FULL_SIZE_SEEDS = (0, 1, 2)


def verdict(capsys, number, name, passed, detail):
    with capsys.disabled():
        print(f"\ncriterion {number} [{name}]: {'PASS' if passed else 'FAIL'} {detail}")


# --- 1 --------------------------------------------------------------------------


def test_c1_procrustes_recovery(capsys):
    start = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        X = rng.standard_normal((200, 10))
        Q0 = ortho_group.rvs(10, random_state=rng)
        Q = procrustes(X, X @ Q0)
        worst = max(worst, float(np.abs(Q - Q0).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5
    verdict(capsys, 1, "Procrustes recovery", ok, f"max error {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 5


# --- 2 --------------------------------------------------------------------------


def block_instance(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 7))
    sizes = [1] * L
    for _ in range(int(rng.integers(0, 12 - L + 1))):
        sizes[int(rng.integers(L))] += 1
    r = int(rng.integers(1, min(3, L) + 1))
    w1 = float(rng.uniform(0.1, 0.9))
    return sizes, r, (w1, 1 - w1)


def test_c2_closed_form_matches_oracle(capsys):
    start = time.perf_counter()
    worst = -np.inf
    for seed in range(50):
        sizes, r, w = block_instance(seed)
        catalog, S1, S2, cls = block_problem(sizes, r, seed, w)
        assert len(cls.consistent) <= 12 and len(cls.partition) == len(sizes) <= 6
        fit = refine_consistent(S1, S2, cls, w, r)
        X = np.vstack([fit.vectors[f] for f in S1.feature_order])
        ours = sum(wk * np.sum((S.matrix - X @ X.T) ** 2) for wk, S in zip(w, (S1, S2)))
        membership = np.array([next(b for b, blk in enumerate(fit.blocks) if f in blk) for f in S1.feature_order])
        oracle = block_oracle_objective([S1.matrix, S2.matrix], w, membership, len(fit.blocks), r, seed=seed)
        worst = max(worst, (ours - oracle) / max(oracle, 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30
    verdict(capsys, 2, "consistent-block solver vs oracle", ok,
            f"max relative excess over oracle {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-4
    assert elapsed < 30


# --- 3 --------------------------------------------------------------------------


def test_c3_zero_noise_exactness(capsys):
    start = time.perf_counter()
    catalog, S1, S2, X = planted_problem(2024, r=10, n_o=200, n1_only=50, n2_only=50, group_size=1)
    assert catalog.n == 300
    res = run_pipeline(S1, S2, catalog, PipelineConfig(10, lam=math.inf, mu=math.inf))
    X2 = res.embeddings.matrix(2, S2.feature_order)
    M2 = X[2] @ X[2].T
    err = np.linalg.norm(M2 - X2 @ X2.T) / np.linalg.norm(M2)
    elapsed = time.perf_counter() - start
    ok = err <= 1e-6 and elapsed < 10
    verdict(capsys, 3, "zero-noise exactness", ok, f"relative error {err:.2e}, {elapsed:.2f}s")
    assert err <= 1e-6
    assert elapsed < 10


# --- 4 --------------------------------------------------------------------------


def oracle_selection(truth, prep):
    """Best achievable (consistent-set errors, h errors) over every threshold pair.

    Candidate thresholds are 0, every observed statistic and +inf, which
    covers every distinct classification.
    """
    true_cons = truth.consistent
    stats = prep.cross_stats
    best = None
    for lam in sorted({0.0, math.inf, *stats.values()}):
        cons = {f for f, s in stats.items() if s <= lam}
        cons_err = len(cons ^ true_cons)
        if best is not None and cons_err > best[0]:
            continue
        divergent = frozenset(stats) - cons
        _, gstats = prep.group_stats(divergent)
        keys = [f for f in truth.h if f not in divergent]
        h_true = np.array([truth.h[f] for f in keys])
        s = np.array([gstats.get(f, np.inf) for f in keys])
        # ungrouped features never get h = 1
        grouped = np.array([f in gstats for f in keys])
        for mu in sorted({0.0, math.inf, *s[np.isfinite(s)].tolist()}):
            h_hat = (grouped & (s <= mu)).astype(int)
            h_err = int(np.sum(h_hat != h_true)) + len(divergent ^ truth.divergent)
            cand = (cons_err, h_err, lam, mu)
            if best is None or cand[:2] < best[:2]:
                best = cand
    return best


def test_c4_selection_consistency(capsys):
    start = time.perf_counter()
    exact, errors = 0, []
    for seed in range(20):
        cfg = simgen.preset("small", seed=seed)
        truth = simgen.generate_ground_truth(cfg)
        S1, S2, catalog = simgen.generate_site_matrices(truth, cfg)
        prep = prepare(S1, S2, catalog, cfg.r)
        cons_err, h_err, lam, mu = oracle_selection(truth, prep)
        # confirm the oracle pair through the production classifier
        cls = classify(prep, lam, mu)
        got_h = sum(cls.h_hat.get(f, 0) != v for f, v in truth.h.items() if f not in cls.divergent)
        assert len(cls.consistent ^ truth.consistent) == cons_err
        if cons_err == 0:
            assert got_h == h_err
        errors.append((cons_err, h_err))
        exact += cons_err == 0 and h_err == 0
    elapsed = time.perf_counter() - start
    ok = exact >= 19 and elapsed < 120
    cons_ok = sum(c == 0 for c, _ in errors)
    verdict(capsys, 4, "selection consistency", ok,
            f"{exact}/20 exact (consistent set exact in {cons_ok}/20; "
            f"min h errors per replicate {[h for _, h in errors]}), {elapsed:.1f}s")
    assert exact >= 19
    assert elapsed < 120


# --- 5 --------------------------------------------------------------------------


def test_c5_negative_transfer_guard(capsys):
    ratios = []
    for seed in range(20):
        cfg = simgen.preset("small", seed=100 + seed)
        truth, S1, S2, catalog, _ = simgen.simulate(cfg)
        prep_init, _ = initial_embeddings(S1, S2, cfg.r)
        res = run_pipeline(S1, S2, catalog, PipelineConfig(cfg.r, force_no_transfer=True))
        assert not res.classification.transferable
        ours = frobenius_report(res.embeddings, truth)[0]
        base = frobenius_report(prep_init, truth)[0]
        ratios.append(ours / base)
    worst = max(ratios)
    verdict(capsys, 5, "negative-transfer guard", worst <= 1.05,
            f"max f_err ratio to SSVD {worst:.4f} over 20 replicates")
    assert worst <= 1.05


# --- 6 and 7: full-size replicates -------------------------------------------------


def full_size_replicate(name, seed, methods):
    cfg = simgen.preset(name, seed=seed)
    start = time.perf_counter()
    truth, S1, S2, catalog, labels = simgen.simulate(cfg)
    prep = prepare(S1, S2, catalog, cfg.r)
    docs = {}
    for method in methods:
        emb, *_ = cli.fit_method(method, catalog, S1, S2, cfg.r, labels, "tune", "tune", "auto", prep=prep)
        docs[method] = evaluate(emb, labels, truth).to_document()
    docs["seconds"] = time.perf_counter() - start
    return docs


@pytest.fixture(scope="module")
def c1_runs():
    return [full_size_replicate("C1", s, ("ssvd", "ssg", "dp", "bonmi", "transnest")) for s in FULL_SIZE_SEEDS]


@pytest.fixture(scope="module")
def c2_runs():
    return [full_size_replicate("C2", s, ("ssvd", "dp", "transnest")) for s in FULL_SIZE_SEEDS]


def error_orderings(run):
    t = {m: run[m] for m in ("ssvd", "ssg", "dp", "bonmi", "transnest")}
    return {
        "rare_halved": t["transnest"]["f_rare_err"] < 0.5 * t["ssvd"]["f_rare_err"],
        "f_order": t["transnest"]["f_err"] < t["ssg"]["f_err"] < t["ssvd"]["f_err"],
        "bonmi_freq_min": min(t, key=lambda m: t[m]["f_freq_err"]) == "bonmi",
        "within_budget": run["seconds"] < 20 * 60,
    }


def test_c6_error_orderings(c1_runs, capsys):
    per_rep = [error_orderings(run) for run in c1_runs]
    medians = {
        key: statistics.median(run[m][metric] for run in c1_runs)
        for key in C1_ERROR_REFERENCE for m, metric in [key]
    }
    within = {key: abs(medians[key] - ref) <= 0.25 * ref for key, ref in C1_ERROR_REFERENCE.items()}
    ok = all(all(c.values()) for c in per_rep) and all(within.values())
    failed = sorted({k for c in per_rep for k, v in c.items() if not v})
    off = [f"{m}.{metric}={medians[(m, metric)]:.2f} vs {C1_ERROR_REFERENCE[(m, metric)]}"
           for (m, metric), good in within.items() if not good]
    verdict(capsys, 6, "C1 reconstruction-error orderings", ok,
            f"failing orderings {failed or 'none'}; medians outside 25%: {off or 'none'}")
    assert ok


def test_c7_pair_auc(c1_runs, c2_runs, capsys):
    problems = []
    medians = {}
    for name, runs in (("C1", c1_runs), ("C2", c2_runs)):
        for seed, run in zip(FULL_SIZE_SEEDS, runs):
            gain = run["transnest"]["auc"] - run["ssvd"]["auc"]
            if gain < 0.02:
                problems.append(f"{name}/seed{seed}: AUC gain over SSVD {gain:+.3f}")
            if name == "C2" and not run["transnest"]["auc"] > run["dp"]["auc"]:
                problems.append(f"C2/seed{seed}: not above DP")
        medians[name] = statistics.median(run["transnest"]["auc"] for run in runs)
        if abs(medians[name] - AUC_REFERENCE[name]) > 0.04:
            problems.append(f"{name}: median AUC {medians[name]:.3f} vs {AUC_REFERENCE[name]}")
    detail = "; ".join(problems + [f"median TransNEST AUC {k} {v:.3f}" for k, v in medians.items()])
    verdict(capsys, 7, "C1 and C2 pair AUC", not problems, detail)
    assert not problems


# --- 8 --------------------------------------------------------------------------


def invariance_instance(seed):
    catalog, S1, S2, _ = planted_problem(seed, r=3, n_o=24, n1_only=6, n2_only=6, group_size=3,
                                         noise=(0.05, 0.1), divergent=3)
    rng = np.random.default_rng(seed)
    prep = prepare(S1, S2, catalog, 3)
    stats = np.array(sorted(prep.cross_stats.values()))
    lam = float(np.quantile(stats, rng.uniform(0.5, 0.9)))
    _, gstats = prep.group_stats(frozenset())
    mu = float(np.quantile(list(gstats.values()), rng.uniform(0.3, 0.9)))
    return catalog, S1, S2, lam, mu, rng


def rotation_violation(seed):
    catalog, S1, S2, lam, mu, rng = invariance_instance(seed)
    base, _ = initial_embeddings(S1, S2, 3)
    R = ortho_group.rvs(3, random_state=rng)
    rotated = EmbeddingSet(3, dict(base.ids), {1: base.vectors[1], 2: base.vectors[2] @ R})
    cfg = PipelineConfig(3, lam=lam, mu=mu)
    a = run_pipeline(S1, S2, catalog, cfg, initial=base)
    b = run_pipeline(S1, S2, catalog, cfg, initial=rotated)
    ca, cb = a.classification, b.classification
    if (ca.consistent, ca.divergent, ca.h_hat, ca.anchored, ca.solo, ca.outliers, ca.partition) != \
            (cb.consistent, cb.divergent, cb.h_hat, cb.anchored, cb.solo, cb.outliers, cb.partition):
        return "sets differ"
    for key in ("cross_site_statistics", "group_statistics"):
        da, db = a.diagnostics[key], b.diagnostics[key]
        if da.keys() != db.keys() or any(abs(da[f] - db[f]) > 1e-8 * max(1.0, abs(da[f])) for f in da):
            return f"{key} differ"
    for k in (1, 2):
        Xa, Xb = a.embeddings.vectors[k], b.embeddings.vectors[k]
        Ga, Gb = Xa @ Xa.T, Xb @ Xb.T
        if np.abs(Ga - Gb).max() > 1e-8 * max(1.0, np.abs(Ga).max()):
            return f"site {k} reconstruction differs by {np.abs(Ga - Gb).max():.1e}"
    return None


def monotonicity_violation(seed):
    catalog, S1, S2, lam, mu, rng = invariance_instance(seed)
    prep = prepare(S1, S2, catalog, 3)
    lam2, mu2 = lam * rng.uniform(1, 3), mu * rng.uniform(1, 3)
    if not classify(prep, lam, mu).consistent <= classify(prep, lam2, mu).consistent:
        return "consistent set shrank"
    ones = lambda c: {f for f, v in c.h_hat.items() if v == 1}
    if not ones(classify(prep, lam, mu)) <= ones(classify(prep, lam, mu2)):
        return "h = 1 set shrank"
    return None


def small_run(seed):
    cfg = simgen.preset("small", seed=seed)
    truth, S1, S2, catalog, _ = simgen.simulate(cfg)
    rng = np.random.default_rng(seed)
    prep = prepare(S1, S2, catalog, cfg.r)
    lam = float(np.quantile(list(prep.cross_stats.values()), rng.uniform(0.3, 0.95)))
    _, gstats = prep.group_stats(frozenset())
    mu = float(np.quantile(list(gstats.values()), rng.uniform(0.1, 0.9)))
    from transnest.pipeline import fit_prepared
    return catalog, fit_prepared(prep, lam, mu)


def block_violation(seed):
    catalog, res = small_run(seed)
    emb = res.embeddings
    for block in res.classification.partition:
        ref = emb.vector(1, block[0])
        for f in block:
            for k in (1, 2):
                if not np.array_equal(emb.vector(k, f), ref):
                    return f"block {block[0]} spread"
    return None


def outlier_violation(seed):
    catalog, res = small_run(seed)
    cls = res.classification
    nonoverlap = {catalog.ids[i] for i in catalog.nonoverlap_index}
    expected = {f for f in nonoverlap if cls.h_hat[f] == 0} | set(cls.divergent)
    return None if set(cls.outliers) == expected else "outlier set mismatch"


def auc_rotation_violation(seed):
    rng = np.random.default_rng(seed)
    ids = tuple(f"v{i:03d}" for i in range(40))
    V = rng.standard_normal((40, 5))
    pairs = []
    seen = set()
    while len(pairs) < 60:
        a, b = sorted(rng.choice(40, 2, replace=False))
        if (a, b) in seen:
            continue
        seen.add((a, b))
        pairs.append(Pair(ids[a], ids[b], int(len(pairs) % 2), "", ("freq", "rare"), ("Tr", "NTr")))
    labels = PairLabelSet(pairs)
    R = ortho_group.rvs(5, random_state=rng)
    a, _, _ = auc_report(EmbeddingSet(5, {2: ids}, {2: V}), labels)
    b, _, _ = auc_report(EmbeddingSet(5, {2: ids}, {2: V @ R}), labels)
    bad = [k for k in a if (a[k] is None) != (b[k] is None) or (a[k] is not None and abs(a[k] - b[k]) > 1e-12)]
    return f"AUC changed for {bad}" if bad else None


INVARIANTS = {
    "rotation equivariance": rotation_violation,
    "threshold monotonicity": monotonicity_violation,
    "block equality": block_violation,
    "outlier-set identity": outlier_violation,
    "AUC rotation invariance": auc_rotation_violation,
}


def test_c8_invariance_suite(capsys):
    counts = {}
    examples = {}
    for name, check in INVARIANTS.items():
        bad = [(s, msg) for s in range(200) if (msg := check(s)) is not None]
        counts[name] = len(bad)
        if bad:
            examples[name] = bad[:2]
    ok = not any(counts.values())
    verdict(capsys, 8, "invariance suite", ok,
            f"violations per property over 200 instances: {counts}" + (f" e.g. {examples}" if examples else ""))
    assert ok


# --- 9 --------------------------------------------------------------------------


def test_c9_determinism(tmp_path, capsys):
    import shutil

    base = tmp_path / "run"
    digests = []
    for _ in range(2):
        shutil.rmtree(base, ignore_errors=True)
        assert cli.main(["simulate", "--preset", "small", "--seed", "5", "--out", str(base / "data")]) == 0
        assert cli.main(["fit", "--data", str(base / "data"), "--out", str(base / "fit")]) == 0
        assert cli.main(["evaluate", "--embeddings", str(base / "fit" / "embeddings.csv"),
                         "--data", str(base / "data"), "--out", str(base / "eval.json")]) == 0
        files = sorted(p.relative_to(base) for p in base.rglob("*") if p.is_file())
        digests.append({str(p): cli.sha256_file(base / p) for p in files})
    same = digests[0] == digests[1]
    differing = sorted(k for k in digests[0] if digests[0][k] != digests[1].get(k))
    verdict(capsys, 9, "determinism", same,
            f"{len(digests[0])} artifacts compared byte for byte" + (f"; differing {differing}" if differing else ""))
    assert same
