"""Acceptance suite: one quantitative criterion per test, each printing a
single PASS/FAIL line with its measured margin.

All thresholds are frozen; generators use fixed seeds so every run measures
the same instances."""

import time

import numpy as np
import pytest
from conftest import (population_anchor_moments, population_latent_moments,
                      sample_noisy_or)

from anchorfa.errors import AnchorfaError
from anchorfa.evaluate import (AuxCounts, complete_data_loglik, em_refine,
                               inner_em_step, last_tag_accuracy)
from anchorfa.loadings import (conditional_from_joint, estimate_leak,
                               f_blanket, f_direct, f_tree)
from anchorfa.model import (AdfaModel, BinaryDataset, LatentNetwork,
                            exact_marginal, quickscore_negative, random_model,
                            sample_dataset, tree_negative_prob)
from anchorfa.moments import (FlatLayout, RecoveryConfig,
                              _local_constraint_system, linear_oracle_local,
                              linear_oracle_marginal, recover_moment_set,
                              recover_moment_set_simplex)
from anchorfa.noise import TripletTensor, assemble_triplet, triplet_decompose
from anchorfa.pipeline import (PipelineConfig, run_pipeline, stage_moments,
                               stage_structure)
from anchorfa.structure import (ScoredStructure, chow_liu, exact_search,
                                mutual_information)

pytestmark = pytest.mark.filterwarnings("ignore")


def report(number, ok, detail):
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# strong-interaction synthetic models (shared by criteria 3 and 9)


def strengthen(model, seed):
    """Replace latent CPTs so every parent has a strong marginal effect and
    no node's marginal collapses toward 0 or 1."""
    rng = np.random.default_rng(seed)
    cpts = []
    for pa in model.latent.parents:
        k = len(pa)
        if k == 0:
            p1 = rng.uniform(0.25, 0.75, size=1)
        elif k == 1:
            a = rng.uniform(0.1, 0.35)
            b = rng.uniform(0.65, 0.9)
            p1 = np.array([a, b]) if rng.random() < 0.5 else np.array([b, a])
        else:
            while True:
                lo = rng.uniform(0.1, 0.35, size=1 << k)
                hi = rng.uniform(0.65, 0.9, size=1 << k)
                side = rng.random(1 << k) < 0.5
                p1 = np.where(side, hi, lo)
                ok = all(
                    max(abs(p1[r] - p1[r ^ (1 << t)])
                        for r in range(1 << k)) >= 0.3
                    for t in range(k))
                if ok and p1.min() < 0.5 < p1.max():
                    break
        cpts.append(np.stack([1 - p1, p1], axis=1))
    latent = LatentNetwork(parents=model.latent.parents, cpts=tuple(cpts))
    return AdfaModel(space=model.space, latent=latent,
                     loadings=model.loadings, anchors=model.anchors)


def strong_tree_model(m, n, seed, min_mi=0.05):
    """Random tree model whose every latent edge carries at least min_mi
    nats of mutual information."""
    attempt = 0
    while True:
        base = random_model(m, n, "tree", seed + 7000 * attempt)
        model = strengthen(base, seed=500 + seed + 7000 * attempt)
        ok = all(
            mutual_information(
                exact_marginal(model, tuple(sorted((p, i)))), p) >= min_mi
            for i in range(m) for p in model.latent.parents[i])
        if ok:
            return model
        attempt += 1


def moment_set_error(recovered, truth):
    return max(np.abs(recovered.get(z).table - truth.get(z).table).max()
               for z in truth.subsets())


# ---------------------------------------------------------------------------


def test_criterion_1_moment_recovery_consistency():
    worst_simplex, worst_polytope = 0.0, 0.0
    t0 = time.time()
    for seed in range(20):
        model = random_model(5, 6, "tree", seed=seed)
        anchor_moments = population_anchor_moments(model, 2)
        truth = population_latent_moments(model, 2)
        cfg_s = RecoveryConfig(constraint="simplex", lam=0.0)
        ms_s = recover_moment_set_simplex(anchor_moments, model.anchors, cfg_s)
        worst_simplex = max(worst_simplex, moment_set_error(ms_s, truth))
        cfg_m = RecoveryConfig(constraint="marginal", lam=0.0, gap_tol=1e-4,
                               corrective_iters=50)
        ms_m = recover_moment_set(anchor_moments, model.anchors, cfg_m)
        worst_polytope = max(worst_polytope, moment_set_error(ms_m, truth))
    report(1, worst_simplex <= 1e-6 and worst_polytope <= 2e-3,
           f"simplex max err {worst_simplex:.2e} (tol 1e-6), marginal max "
           f"err {worst_polytope:.2e} (tol 2e-3), {time.time()-t0:.0f}s")


def test_criterion_2_relaxation_dominance():
    layout = FlatLayout(tuple(range(5)), 2)
    a_eq, b_eq = _local_constraint_system(layout)
    rng = np.random.default_rng(0)
    worst_gap, worst_residual = -np.inf, 0.0
    for _ in range(100):
        g = rng.normal(size=layout.size)
        x_loc, val_loc = linear_oracle_local(g, layout)
        x_mar, val_mar, _ = linear_oracle_marginal(g, layout)
        worst_gap = max(worst_gap, val_loc - val_mar)
        worst_residual = max(worst_residual,
                             np.abs(a_eq @ x_loc - b_eq).max(),
                             np.abs(a_eq @ x_mar - b_eq).max())
    report(2, worst_gap <= 1e-9 and worst_residual < 1e-7,
           f"max(local - marginal) = {worst_gap:.2e} (must be <= 0), "
           f"max constraint residual {worst_residual:.2e} (tol 1e-7)")


def test_criterion_3_structure_recovery():
    t0 = time.time()
    cl_hits = 0
    for trial in range(20):
        model = strong_tree_model(7, 8, seed=trial)
        am = population_anchor_moments(model, 2)
        cfg = RecoveryConfig(constraint="marginal", lam=0.0, gap_tol=1e-4)
        ms = recover_moment_set(am, model.anchors, cfg)
        truth = sorted(tuple(sorted((p, i))) for i in range(7)
                       for p in model.latent.parents[i])
        cl_hits += chow_liu(ms, 100000).skeleton() == truth
    ex_hits = 0
    for trial in range(10):
        model = strengthen(random_model(6, 7, "indegree-2", seed=200 + trial),
                           seed=900 + trial)
        am = population_anchor_moments(model, 3)
        cfg = RecoveryConfig(constraint="marginal", lam=0.0, gap_tol=1e-4)
        ms = recover_moment_set(am, model.anchors, cfg)
        s = exact_search(ms, 100000, 2)
        truth = ScoredStructure(parents=model.latent.parents, score=s.score,
                                family_scores=s.family_scores)
        ex_hits += s.markov_equivalent(truth)
    report(3, cl_hits >= 19 and ex_hits >= 9,
           f"Chow-Liu skeleton {cl_hits}/20 (need 19), exact search "
           f"Markov-equivalent {ex_hits}/10 (need 9), {time.time()-t0:.0f}s")


def test_criterion_4_loadings_consistency():
    t0 = time.time()
    worst_tree, worst_blanket, worst_agree = 0.0, 0.0, 0.0
    worst_leak_exact, worst_leak_sampled = 0.0, 0.0
    direct_bias = 0.0
    for trial in range(20):
        m = 4 + trial % 5
        model = random_model(m, m + 2, "tree", seed=trial)
        for j in range(m, m + 2):
            for i in range(m):
                if not model.loadings.edge_mask[i, j]:
                    continue
                true_f = model.loadings.failures[i, j]
                nbrs = model.latent.neighbors(i)
                cond1 = conditional_from_joint(
                    exact_marginal(model, (i, model.m + j)), model.m + j)
                direct_bias = max(direct_bias, abs(f_direct(cond1) - true_f))
                cond_pairs = {k: conditional_from_joint(
                    exact_marginal(model, tuple(sorted((i, k))) + (model.m + j,)),
                    model.m + j) for k in nbrs}
                pair_moments = {k: exact_marginal(model, tuple(sorted((i, k))))
                                for k in nbrs}
                est_tree = f_tree(i, nbrs, cond1, cond_pairs, pair_moments)
                worst_tree = max(worst_tree, abs(est_tree - true_f))
                cond_blk = conditional_from_joint(
                    exact_marginal(model, tuple(sorted((i,) + nbrs))
                                   + (model.m + j,)), model.m + j)
                est_blk = f_blanket(cond_blk, i, {k: 0 for k in nbrs})
                worst_blanket = max(worst_blanket, abs(est_blk - true_f))
                worst_agree = max(worst_agree, abs(est_tree - est_blk))
            p0 = exact_marginal(model, (model.m + j,)).table[0]
            l_hat = estimate_leak(model.latent,
                                  model.loadings.failures[:, j], p0, "tree-bp")
            worst_leak_exact = max(worst_leak_exact,
                                   abs(l_hat - model.loadings.leaks[j]))
    for trial in range(5):
        model = random_model(4, 6, "independent", seed=100 + trial)
        for j in (4, 5):
            p0 = exact_marginal(model, (model.m + j,)).table[0]
            for method in ("quickscore", "sampling"):
                l_hat = estimate_leak(model.latent,
                                      model.loadings.failures[:, j], p0,
                                      method, seed=trial)
                err = abs(l_hat - model.loadings.leaks[j])
                if method == "quickscore":
                    worst_leak_exact = max(worst_leak_exact, err)
                else:
                    worst_leak_sampled = max(worst_leak_sampled, err)
    ok = (worst_tree <= 1e-8 and worst_blanket <= 1e-8
          and worst_agree <= 1e-8 and direct_bias > 0.01
          and worst_leak_exact <= 1e-8 and worst_leak_sampled <= 5e-3)
    report(4, ok,
           f"f_tree err {worst_tree:.2e}, f_blanket err {worst_blanket:.2e}, "
           f"agreement {worst_agree:.2e} (tol 1e-8 each); f_direct bias "
           f"{direct_bias:.3f} (need > 0.01); leak err exact "
           f"{worst_leak_exact:.2e} (tol 1e-8), sampled "
           f"{worst_leak_sampled:.2e} (tol 5e-3), {time.time()-t0:.0f}s")


def test_criterion_5_oracle_equivalence():
    worst = 0.0
    for trial in range(50):
        structure = "independent" if trial % 2 == 0 else "tree"
        m = 3 + trial % 4
        model = random_model(m, m + 2, structure, seed=trial)
        for j in range(model.n):
            enum = exact_marginal(model, (model.m + j,)).table[0]
            bp = tree_negative_prob(model, j)
            worst = max(worst, abs(bp - enum))
            if structure == "independent":
                worst = max(worst, abs(quickscore_negative(model, j) - enum))
    report(5, worst <= 1e-10,
           f"max |closed form - enumeration| = {worst:.2e} (tol 1e-10) "
           "over 50 models")


FLOOR = 1e-12


def expected_latent_loglik(true_latent, learned_latent):
    """E_{y~truth}[log P_learned(y)]: the infinite-held-out-sample limit of
    the per-row held-out latent log-likelihood."""
    w_true = true_latent.assignment_weights()
    w_learn = np.maximum(learned_latent.assignment_weights(), FLOOR)
    return float(w_true @ np.log(w_learn))


def _robustness_run(seed, misspecified):
    m, n_obs, rows = 4, 8, 50000
    model = random_model(m, n_obs, "tree", seed=seed)
    failures = model.loadings.failures.copy()
    if misspecified:
        rng = np.random.default_rng(seed + 999)
        for i in range(m):
            k = (i + 1 + rng.integers(m - 1)) % m
            failures[k, i] = rng.uniform(0.5, 0.7)
    _, x = sample_noisy_or(model.latent, failures, model.loadings.leaks,
                           rows, seed=seed + 1)
    data = BinaryDataset(observed_rows=x)
    out = {}
    for c in ("simplex", "local", "marginal"):
        cfg = PipelineConfig(constraint=c, lam_structure=0.0, seed=seed)
        ms = stage_moments(data, model.anchors, cfg)
        _, latent = stage_structure(ms, rows, cfg)
        out[c] = expected_latent_loglik(model.latent, latent)
    return out


def test_criterion_6_robustness_trend():
    t0 = time.time()
    per_seed = [_robustness_run(s, misspecified=True) for s in range(8)]
    mean = {c: np.mean([r[c] for r in per_seed])
            for c in ("simplex", "local", "marginal")}
    inversions = (
        sum(r["local"] < r["simplex"] - 1e-9 for r in per_seed)
        + sum(r["marginal"] < r["local"] - 1e-9 for r in per_seed))
    trend = (mean["marginal"] >= mean["local"] >= mean["simplex"]
             and inversions <= 1)
    spreads = []
    for seed in range(8):
        r = _robustness_run(seed, misspecified=False)
        spreads.append(max(r.values()) - min(r.values()))
    agree = max(spreads) <= 0.02
    report(6, trend and agree,
           f"misspecified means marginal {mean['marginal']:.3f} >= local "
           f"{mean['local']:.3f} >= simplex {mean['simplex']:.3f} with "
           f"{inversions} seed-level inversion(s) (allow 1); well-specified "
           f"max spread {max(spreads):.4f} nats/row (tol 0.02), "
           f"{time.time()-t0:.0f}s")


def test_criterion_7_tensor_decomposition():
    rng = np.random.default_rng(42)
    worst_exact, worst_sampled = 0.0, 0.0
    for _ in range(50):
        prior = np.array([0.0, rng.uniform(0.3, 0.7)])
        prior[0] = 1 - prior[1]
        conds = []
        for _ in range(3):
            hi = rng.uniform(0.75, 0.95)
            lo = rng.uniform(0.05, 0.25)
            conds.append(np.array([[1 - lo, 1 - hi], [lo, hi]]))
        tensor = assemble_triplet(prior, *conds)
        flat_truth = np.concatenate([prior] + [c.ravel() for c in conds])

        out = triplet_decompose(tensor)
        flat = np.concatenate([o.ravel() for o in out])
        worst_exact = max(worst_exact, np.abs(flat - flat_truth).max())

        counts = rng.multinomial(500000, tensor.table.reshape(-1))
        sampled = TripletTensor((counts / counts.sum()).reshape(2, 2, 2))
        out_s = triplet_decompose(sampled)
        flat_s = np.concatenate([o.ravel() for o in out_s])
        worst_sampled = max(worst_sampled, np.abs(flat_s - flat_truth).max())
    report(7, worst_exact <= 1e-6 and worst_sampled <= 5e-3,
           f"exact recovery err {worst_exact:.2e} (tol 1e-6), sampled "
           f"(N=500000) err {worst_sampled:.2e} (tol 5e-3) over 50 triplets")


def _slot_count_oracle(failures, leaks, y, x):
    """Brute-force expected auxiliary counts, one sample and slot at a time.

    Slot k (a parent id, or m for the leak) is tried when it is reachable:
    the parent is on (the leak always is) and, for x = 1, no earlier slot
    fired; it fires with the posterior probability of being the first
    firing slot."""
    m, n = failures.shape
    fired = [np.zeros(m + 1) for _ in range(n)]
    tried = [np.zeros(m + 1) for _ in range(n)]
    for j in range(n):
        for s in range(y.shape[0]):
            slots = [i for i in range(m) if y[s, i]] + [m]
            slot_fail = [failures[i, j] for i in range(m) if y[s, i]]
            slot_fail.append(1.0 - leaks[j])
            if x[s, j] == 0:
                for k in slots:
                    tried[j][k] += 1.0
                continue
            prefix = 1.0
            first = []
            for f in slot_fail:
                first.append(prefix * (1.0 - f))
                prefix *= f
            total = sum(first)
            reached = 1.0
            for t, k in enumerate(slots):
                tried[j][k] += reached
                fired[j][k] += first[t] / total
                reached -= first[t] / total
    return fired, tried


def test_criterion_8_em_guarantees():
    t0 = time.time()
    rng = np.random.default_rng(3)
    m, n, s = 3, 2, 40
    mask = np.array([[True, True], [True, False], [False, True]])
    # absent edges carry failure 1.0 (an inert slot), as the pipeline
    # guarantees after pruning
    failures = np.where(mask, rng.uniform(0.3, 0.9, size=(m, n)), 1.0)
    leaks = rng.uniform(0.02, 0.1, size=n)
    y = rng.integers(0, 2, size=(s, m)).astype(np.uint8)
    x = rng.integers(0, 2, size=(s, n)).astype(np.uint8)
    _, _, counts = inner_em_step(failures, leaks, mask, y, x)
    o_fired, o_tried = _slot_count_oracle(failures, leaks, y, x)
    count_err = 0.0
    for j in range(n):
        for k in range(m + 1):
            count_err = max(count_err,
                            abs(counts[j].fired[k] - o_fired[j][k]),
                            abs(counts[j].tried[k] - o_tried[j][k]))
    arithmetic = AuxCounts(fired=np.array([3.0]),
                           tried=np.array([10.0])).failure_update(0, 0.5)

    monotone = True
    for trial in range(10):
        rng_t = np.random.default_rng(100 + trial)
        mt, nt, st = 3, 4, 300
        f = rng_t.uniform(0.3, 0.9, size=(mt, nt))
        l = rng_t.uniform(0.01, 0.1, size=nt)
        msk = np.ones((mt, nt), dtype=bool)
        yt = rng_t.integers(0, 2, size=(st, mt)).astype(np.uint8)
        neg = (1 - l) * np.exp(yt @ np.log(f))
        xt = (rng_t.random((st, nt)) >= neg).astype(np.uint8)
        prev = complete_data_loglik(f, l, yt, xt)
        for _ in range(8):
            f, l, _ = inner_em_step(f, l, msk, yt, xt)
            cur = complete_data_loglik(f, l, yt, xt)
            monotone &= cur >= prev - 1e-9
            prev = cur
    model = random_model(3, 5, "tree", seed=1)
    data = sample_dataset(model, 500, seed=2)
    # em_refine asserts per-step monotonicity internally
    _, trace = em_refine(model, data, outer_steps=3, seed=0)
    monotone &= all(t["loglik_after"] >= t["loglik_before"] - 1e-7
                    for t in trace)
    report(8, count_err <= 1e-9 and abs(arithmetic - 0.7) <= 1e-12
           and monotone,
           f"count oracle err {count_err:.2e} (tol 1e-9), 3/10 update = "
           f"{arithmetic:.3f} (expect 0.7), log-likelihood non-decreasing on "
           f"every run: {monotone}, {time.time()-t0:.0f}s")


def test_criterion_9_prediction_gap():
    t0 = time.time()
    gaps = []
    for seed in range(5):
        model = strengthen(random_model(10, 20, "tree", seed=seed),
                           seed=3000 + seed)
        train = BinaryDataset(
            observed_rows=sample_dataset(model, 50000,
                                         seed=seed + 1).observed_rows)
        eval_data = sample_dataset(model, 5000, seed=seed + 2)
        acc = {}
        for mode in ("tree", "independent"):
            cfg = PipelineConfig(constraint="simplex", structure_mode=mode,
                                 lam_structure=0.0, lam_loadings=0.0,
                                 seed=seed)
            learned, _ = run_pipeline(train, model.anchors, cfg)
            acc[mode], _ = last_tag_accuracy(learned, eval_data, seed=seed,
                                             max_rows=5000)
        gaps.append(acc["tree"] - acc["independent"])
    mean_gap = float(np.mean(gaps))
    report(9, mean_gap >= 0.03,
           f"mean top-1 last-tag gap tree - independent = {mean_gap:.4f} "
           f"(need >= 0.03) over 5 seeds, per-seed "
           f"{[round(g, 3) for g in gaps]}, {time.time()-t0:.0f}s")
