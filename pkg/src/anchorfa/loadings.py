"""Noisy-or parameter estimation from recovered conditional moments: the
direct, Markov-blanket and tree-corrected failure estimators, plus leak
recovery by comparing marginals with the no-leak model prediction."""

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, ValidationError
from .tables import SubsetMoment, table_index

DEGENERATE_EPS = 1e-9
PRUNE_THRESHOLD = 0.98


@dataclass(frozen=True)
class ConditionalMoment:
    """P(x_target = 0 | latent assignment) for every assignment of the
    conditioning latent subset, clamped to [0, 1]."""

    target: int
    conditioning_ids: tuple
    table: np.ndarray

    def __post_init__(self):
        ids = tuple(sorted(int(i) for i in self.conditioning_ids))
        table = np.clip(np.asarray(self.table, dtype=float).reshape(-1), 0.0, 1.0)
        if table.size != 1 << len(ids):
            raise ValidationError("conditional table size mismatch")
        object.__setattr__(self, "conditioning_ids", ids)
        object.__setattr__(self, "table", table)

    def prob(self, assignment):
        return float(self.table[table_index(self.conditioning_ids, assignment)])


def conditional_from_joint(joint, target_gid):
    """Bayes-rule division of a joint over {X_target} | Z by the marginal of Z.

    The joint uses global ids; `target_gid` names the observed variable."""
    if target_gid not in joint.ids:
        raise ValidationError("joint moment does not include the target variable")
    z_ids = tuple(i for i in joint.ids if i != target_gid)
    t_pos = joint.ids.index(target_gid)
    k = len(joint.ids)
    arr = joint.table.reshape((2,) * k, order="F")
    neg = np.take(arr, 0, axis=t_pos).reshape(-1, order="F")
    pos = np.take(arr, 1, axis=t_pos).reshape(-1, order="F")
    denom = neg + pos
    if np.any(denom < DEGENERATE_EPS):
        bad = int(np.argmin(denom))
        raise ConditioningError(
            f"conditioning assignment index {bad} of {z_ids} has probability "
            f"{denom[bad]:.3g}")
    return ConditionalMoment(target=target_gid, conditioning_ids=z_ids,
                             table=neg / denom)


def _clamp_failure(f):
    return float(min(max(f, 1e-9), 1.0))


def f_direct(cond):
    """Failure estimate ignoring latent-latent correlation:
    P(x=0|y_i=1) / P(x=0|y_i=0). Consistent only for independent latents."""
    if len(cond.conditioning_ids) != 1:
        raise ValidationError("direct estimator conditions on a single latent")
    if cond.table[0] < DEGENERATE_EPS:
        raise ConditioningError("P(x=0|y=0) is degenerate")
    return _clamp_failure(cond.table[1] / cond.table[0])


def f_blanket(cond, i, blanket_assignment):
    """Failure estimate conditioning on the full Markov blanket:
    P(x=0|y_i=1, b) / P(x=0|y_i=0, b), consistent for any valid b."""
    i = int(i)
    if i not in cond.conditioning_ids:
        raise ValidationError(f"conditional moment does not condition on {i}")
    blanket = {int(k): int(v) for k, v in blanket_assignment.items()}
    if set(blanket) != set(cond.conditioning_ids) - {i}:
        raise ValidationError("blanket assignment must fix exactly the blanket")
    num = cond.prob({**blanket, i: 1})
    den = cond.prob({**blanket, i: 0})
    if den < DEGENERATE_EPS:
        raise ConditioningError(
            f"blanket configuration {blanket} has degenerate conditioning")
    return _clamp_failure(num / den)


def correction_factor(i, k, cond_pair, pair_moment):
    """Multiplicative term canceling the indirect effect through neighbor k:
    [sum_{y_k} P(y_k|y_i=1) P(x=0|y_i=0, y_k)] / P(x=0|y_i=0)."""
    p_y1 = pair_moment.marginalize((i,)).table[1]
    if p_y1 < DEGENERATE_EPS or p_y1 > 1 - DEGENERATE_EPS:
        raise ConditioningError(f"latent {i} marginal is degenerate")
    p_k_given_i1 = np.array([
        pair_moment.prob({i: 1, k: 0}), pair_moment.prob({i: 1, k: 1})]) / p_y1
    if min(p_k_given_i1) < DEGENERATE_EPS:
        raise ConditioningError(
            f"P(y_{k} | y_{i}=1) is deterministic; correction undefined for "
            f"pair ({i}, {k})")
    num = sum(p_k_given_i1[yk] * cond_pair.prob({i: 0, k: yk}) for yk in (0, 1))
    den = sum(pair_moment.prob({i: 0, k: yk}) * cond_pair.prob({i: 0, k: yk})
              for yk in (0, 1)) / max(1.0 - p_y1, DEGENERATE_EPS)
    # den above is P(x=0 | y_i=0) reconstructed from the pair tables
    if den < DEGENERATE_EPS:
        raise ConditioningError("P(x=0|y_i=0) is degenerate")
    return num / den


def f_tree(i, neighbors, cond_single, cond_pairs, pair_moments):
    """Tree-corrected failure estimate: the direct ratio divided by one
    correction factor per neighbor of Y_i in the latent tree. Uses only
    pairwise latent conditioning regardless of blanket size."""
    if len(cond_single.conditioning_ids) != 1 or cond_single.conditioning_ids[0] != i:
        raise ValidationError("cond_single must condition exactly on the target latent")
    if cond_single.table[0] < DEGENERATE_EPS:
        raise ConditioningError("P(x=0|y_i=0) is degenerate")
    ratio = cond_single.table[1] / cond_single.table[0]
    for k in neighbors:
        c = correction_factor(i, k, cond_pairs[k], pair_moments[k])
        ratio /= c
    return _clamp_failure(ratio)


def prune_failures(failures, threshold=PRUNE_THRESHOLD):
    """Truncate near-one failures to exactly 1 (edge removal)."""
    f = np.asarray(failures, dtype=float).copy()
    f[f >= threshold] = 1.0
    return f


def _forest_negative_no_leak(latent, f_col):
    """sum_y P(y) prod_i f_col[i]^{y_i} by upward passes over the forest."""
    m = latent.m
    children = [[] for _ in range(m)]
    roots = []
    for i in range(m):
        if latent.parents[i]:
            children[latent.parents[i][0]].append(i)
        else:
            roots.append(i)

    def subtree(i):
        tabs = [subtree(c) for c in children[i]]
        out = np.zeros(2)
        for y_pa in (0, 1):
            total = 0.0
            for y_i in (0, 1):
                row = y_pa if latent.parents[i] else 0
                term = latent.cpts[i][row, y_i] * (f_col[i] ** y_i)
                for tab in tabs:
                    term *= tab[y_i]
                total += term
            out[y_pa] = total
        return out

    p = 1.0
    for r in roots:
        p *= subtree(r)[0]
    return p


def negative_prob_no_leak(latent, f_col, method, seed=0, n_draws=100000):
    """P(x_j = 0) under the no-leak noisy-or model, by the method matched to
    the latent structure: closed form (independent), message passing (tree)
    or seeded forward sampling (any structure)."""
    f_col = np.asarray(f_col, dtype=float)
    if method == "quickscore":
        if latent.has_edges():
            raise ValidationError("closed-form method requires independent latents")
        p = 1.0
        for i in range(latent.m):
            p1 = latent.cpts[i][0, 1]
            p *= (1.0 - p1) + p1 * f_col[i]
        return p
    if method == "tree-bp":
        if not latent.is_forest():
            raise ValidationError("message-passing method requires a tree or forest")
        return _forest_negative_no_leak(latent, f_col)
    if method == "sampling":
        rng = np.random.default_rng(seed)
        order = latent.topological_order()
        y = np.zeros((n_draws, latent.m), dtype=np.uint8)
        for i in order:
            pa = latent.parents[i]
            row = np.zeros(n_draws, dtype=np.int64)
            for t, p in enumerate(pa):
                row |= y[:, p].astype(np.int64) << t
            y[:, i] = rng.random(n_draws) < latent.cpts[i][row, 1]
        return float(np.mean(np.exp(y @ np.log(np.maximum(f_col, 1e-300)))))
    raise ValidationError(f"unknown method {method!r}")


def estimate_leak(latent, f_col, p0_empirical, method, seed=0, n_draws=100000):
    """Leak estimate 1 - P_hat(x=0) / P_noleak(x=0), clamped to [0, 1).

    The printed form with the ratio inverted is inconsistent with the
    generative semantics (the empirical marginal already includes the leak
    factor), so the self-consistent orientation is used."""
    p_noleak = negative_prob_no_leak(latent, f_col, method, seed=seed,
                                     n_draws=n_draws)
    if p_noleak < DEGENERATE_EPS:
        raise ConditioningError("no-leak marginal is degenerate")
    leak = 1.0 - p0_empirical / p_noleak
    return float(min(max(leak, 0.0), 1.0 - 1e-12))


def ranked_loadings(failures, edge_mask, latent_names=None):
    """Per-observed ranked (latent, failure, weight log 1/f) lists for the
    top-weight report."""
    m, n = failures.shape
    out = []
    for j in range(n):
        rows = []
        for i in range(m):
            if edge_mask[i, j] and failures[i, j] < 1.0:
                name = latent_names[i] if latent_names else str(i)
                rows.append((name, float(failures[i, j]),
                             float(np.log(1.0 / failures[i, j]))))
        rows.sort(key=lambda r: (-r[2], r[0]))
        out.append(rows)
    return out
