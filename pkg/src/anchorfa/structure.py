"""Latent Bayesian-network structure learning from recovered moments:
information quantities, BIC scoring, Chow-Liu trees, exact bounded-indegree
search by dynamic programming, and CPT fitting."""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import CapacityError, ConditioningError, ValidationError
from .model import LatentNetwork
from .tables import SubsetMoment, table_index

EXACT_SEARCH_GUARD = 16


@dataclass(frozen=True)
class ScoredStructure:
    parents: tuple
    score: float
    family_scores: tuple

    def __post_init__(self):
        parents = tuple(tuple(sorted(int(p) for p in pa)) for pa in self.parents)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "family_scores", tuple(self.family_scores))
        if abs(self.score - sum(self.family_scores)) > 1e-9 * max(1.0, abs(self.score)):
            raise ValidationError("score must equal the sum of family scores")
        LatentNetwork(parents=parents,
                      cpts=tuple(np.tile([0.5, 0.5], (1 << len(pa), 1))
                                 for pa in parents))  # acyclicity check

    @property
    def m(self):
        return len(self.parents)

    def edges(self):
        return sorted((p, i) for i in range(self.m) for p in self.parents[i])

    def skeleton(self):
        return sorted({tuple(sorted((p, i))) for p, i in self.edges()})

    def immoralities(self):
        out = set()
        skel = set(self.skeleton())
        for i in range(self.m):
            for a, b in combinations(self.parents[i], 2):
                if tuple(sorted((a, b))) not in skel:
                    out.add((a, b, i))
        return sorted(out)

    def markov_equivalent(self, other):
        return (self.skeleton() == other.skeleton()
                and self.immoralities() == other.immoralities())


def entropy(moment):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.clip(moment.table, 0.0, 1.0)
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def mutual_information(joint, i, rest=None):
    """I(Y_i ; Y_rest) from a joint table over {i} | rest."""
    i = int(i)
    if rest is None:
        rest = tuple(v for v in joint.ids if v != i)
    rest = tuple(sorted(int(v) for v in rest))
    if i not in joint.ids or not set(rest) <= set(joint.ids):
        raise ValidationError("joint moment does not cover the requested split")
    if not rest:
        return 0.0
    return (entropy(joint.marginalize((i,)))
            + entropy(joint.marginalize(rest))
            - entropy(joint.marginalize((i,) + rest)))


def family_score(moments, i, parents, n_samples):
    """BIC contribution of one family:
    N * I(Y_i; Y_Pa) - N * H(Y_i) - log(N) * 2^{|Pa|}."""
    parents = tuple(sorted(parents))
    fam = (i,) + parents if parents else (i,)
    joint = moments.get(tuple(sorted(fam)))
    mi = mutual_information(joint, i, parents) if parents else 0.0
    h = entropy(moments.get((i,)))
    return n_samples * mi - n_samples * h - np.log(n_samples) * (1 << len(parents))


def _check_contiguous(moments):
    ids = moments.latent_ids
    if ids != tuple(range(len(ids))):
        raise ValidationError(
            "structure learning expects latent ids 0..m-1; got " + repr(ids))
    return ids


def bic_score(moments, parents, n_samples):
    """Total BIC of a candidate structure; decomposable over families."""
    _check_contiguous(moments)
    fams = []
    for i, pa in zip(moments.latent_ids, parents):
        need = tuple(sorted((i,) + tuple(pa)))
        if not moments.has(need) and pa:
            raise ValidationError(f"moment set lacks the family subset {need}")
        fams.append(family_score(moments, i, pa, n_samples))
    total = float(sum(fams))
    return ScoredStructure(parents=tuple(tuple(p) for p in parents),
                           score=total, family_scores=tuple(fams))


def chow_liu(moments, n_samples):
    """Maximum spanning tree on pairwise mutual information, oriented away
    from the lowest-id node of each component. Negative weights (possible on
    noisy recovered moments) are clamped to zero before comparison."""
    ids = moments.latent_ids
    m = len(ids)
    if m < 2:
        return bic_score(moments, tuple(() for _ in ids), n_samples)
    edges = []
    for a, b in combinations(range(m), 2):
        w = mutual_information(moments.get((ids[a], ids[b])), ids[a], (ids[b],))
        edges.append((max(w, 0.0), a, b))
    edges.sort(key=lambda e: (-e[0], e[1], e[2]))

    parent_uf = list(range(m))

    def find(u):
        while parent_uf[u] != u:
            parent_uf[u] = parent_uf[parent_uf[u]]
            u = parent_uf[u]
        return u

    chosen = []
    for w, a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent_uf[ra] = rb
            chosen.append((a, b))
            if len(chosen) == m - 1:
                break

    adj = [[] for _ in range(m)]
    for a, b in chosen:
        adj[a].append(b)
        adj[b].append(a)
    parents = [()] * m
    seen = set()
    for root in range(m):
        if root in seen:
            continue
        stack = [root]
        seen.add(root)
        while stack:
            u = stack.pop()
            for v in sorted(adj[u]):
                if v not in seen:
                    parents[v] = (u,)
                    seen.add(v)
                    stack.append(v)
    return bic_score(moments, tuple(parents), n_samples)


def exact_search(moments, n_samples, max_indegree):
    """Globally optimal BIC structure under an indegree bound, by per-family
    best-parent-set tables and dynamic programming over variable subsets."""
    ids = moments.latent_ids
    m = len(ids)
    if m > EXACT_SEARCH_GUARD:
        raise CapacityError(f"m={m} exceeds exact-search guard {EXACT_SEARCH_GUARD}")
    if max_indegree > moments.order - 1:
        raise ValidationError("need moment order >= max_indegree + 1")

    # family scores for every candidate parent set of size <= max_indegree
    fam = []
    for pos in range(m):
        scores = {}
        others = [q for q in range(m) if q != pos]
        for k in range(0, max_indegree + 1):
            for pa in combinations(others, k):
                pa_ids = tuple(ids[q] for q in pa)
                scores[frozenset(pa)] = family_score(moments, ids[pos], pa_ids,
                                                     n_samples)
        fam.append(scores)

    # best parent set contained in each candidate predecessor set
    full = 1 << m
    best_ps = [np.full(full, -np.inf) for _ in range(m)]
    best_pa = [[None] * full for _ in range(m)]
    for pos in range(m):
        for s in range(full):
            if s & (1 << pos):
                continue
            best = -np.inf
            arg = None
            members = [q for q in range(m) if s & (1 << q)]
            if len(members) <= max_indegree:
                key = frozenset(members)
                if key in fam[pos]:
                    best = fam[pos][key]
                    arg = tuple(members)
            for q in members:
                prev = best_ps[pos][s & ~(1 << q)]
                if prev > best:
                    best = prev
                    arg = best_pa[pos][s & ~(1 << q)]
            best_ps[pos][s] = best
            best_pa[pos][s] = arg

    # subset DP over sink orderings
    dp = np.full(full, -np.inf)
    choice = [None] * full
    dp[0] = 0.0
    for s in range(1, full):
        for pos in range(m):
            if not s & (1 << pos):
                continue
            rest = s & ~(1 << pos)
            cand = dp[rest] + best_ps[pos][rest]
            if cand > dp[s]:
                dp[s] = cand
                choice[s] = pos

    parents = [()] * m
    s = full - 1
    while s:
        pos = choice[s]
        rest = s & ~(1 << pos)
        parents[pos] = tuple(ids[q] for q in best_pa[pos][rest])
        s = rest
    return bic_score(moments, tuple(parents), n_samples)


def fit_cpts(moments, structure):
    """Maximum-likelihood CPTs from moment tables: P(y_i | y_pa) =
    mu_family / mu_pa, with negative clamping and row renormalization."""
    ids = moments.latent_ids
    cpts = []
    for i, pa in zip(ids, structure.parents):
        fam_ids = tuple(sorted((i,) + pa))
        joint = moments.get(fam_ids)
        n_rows = 1 << len(pa)
        cpt = np.zeros((n_rows, 2))
        for row in range(n_rows):
            pa_assign = {p: (row >> t) & 1 for t, p in enumerate(pa)}
            for v in (0, 1):
                cpt[row, v] = joint.table[table_index(fam_ids, {**pa_assign, i: v})]
            cpt[row] = np.maximum(cpt[row], 0.0)
            z = cpt[row].sum()
            if z < 1e-9:
                raise ConditioningError(
                    f"conditioning event for family {fam_ids} (parents={pa_assign}) "
                    "has near-zero probability")
            cpt[row] /= z
        cpts.append(cpt)
    # structure.parents are latent ids; LatentNetwork expects positions
    pos_of = {v: t for t, v in enumerate(ids)}
    parents_pos = tuple(tuple(pos_of[p] for p in pa) for pa in structure.parents)
    return LatentNetwork(parents=parents_pos, cpts=tuple(cpts))


def edge_list_with_signs(structure, moments):
    """Directed edges annotated with the sign of the pairwise covariance,
    for rendering correlation-colored structure graphs."""
    ids = moments.latent_ids
    out = []
    for p, i in structure.edges():
        a, b = sorted((ids[p], ids[i]))
        pair = moments.get((a, b))
        p11 = pair.table[3]
        p1a = pair.table[1] + pair.table[3]
        p1b = pair.table[2] + pair.table[3]
        cov = p11 - p1a * p1b
        out.append((ids[p], ids[i], 1 if cov >= 0 else -1))
    return out
