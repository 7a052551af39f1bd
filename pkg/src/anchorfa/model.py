"""Core model family: binary latent Bayesian network with noisy-or links to
binary observations, plus exact-inference oracles and synthetic generators.

Global variable ids: latent i has id i (0 <= i < m), observed j has id m + j.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ValidationError
from .tables import SubsetMoment, table_index

ENUMERATION_GUARD = 22


@dataclass(frozen=True)
class VariableSpace:
    n_observed: int
    m_latent: int
    observed_names: tuple = ()
    latent_names: tuple = ()

    def __post_init__(self):
        if self.n_observed < 1 or self.m_latent < 1:
            raise ValidationError("need at least one observed and one latent variable")
        obs = tuple(self.observed_names) or tuple(
            f"x{j}" for j in range(self.n_observed))
        lat = tuple(self.latent_names) or tuple(
            f"y{i}" for i in range(self.m_latent))
        if len(obs) != self.n_observed or len(set(obs)) != self.n_observed:
            raise ValidationError("observed names must be unique and match n_observed")
        if len(lat) != self.m_latent or len(set(lat)) != self.m_latent:
            raise ValidationError("latent names must be unique and match m_latent")
        object.__setattr__(self, "observed_names", obs)
        object.__setattr__(self, "latent_names", lat)

    def latent_gid(self, i):
        return i

    def observed_gid(self, j):
        return self.m_latent + j

    def is_latent_gid(self, gid):
        return gid < self.m_latent


@dataclass(frozen=True)
class LatentNetwork:
    """DAG over the latent variables with explicit CPTs.

    parents[i] is a sorted tuple of latent indices; cpts[i] has shape
    (2^{|parents[i]|}, 2) with rows indexed by the parent assignment in the
    package bit order and columns by the value of Y_i.
    """

    parents: tuple
    cpts: tuple

    def __post_init__(self):
        parents = tuple(tuple(sorted(int(p) for p in pa)) for pa in self.parents)
        cpts = tuple(np.asarray(c, dtype=float).reshape(1 << len(pa), 2)
                     for pa, c in zip(parents, self.cpts))
        if len(parents) != len(cpts):
            raise ValidationError("parents and cpts must have equal length")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "cpts", cpts)
        self.topological_order()  # raises on cycles
        for i, c in enumerate(cpts):
            if np.any(c < -1e-12) or np.any(c > 1 + 1e-12):
                raise ValidationError(f"CPT entries for latent {i} outside [0,1]")
            if np.any(np.abs(c.sum(axis=1) - 1.0) > 1e-9):
                raise ValidationError(f"CPT rows for latent {i} do not sum to 1")

    @property
    def m(self):
        return len(self.parents)

    def topological_order(self):
        order, seen = [], set()
        remaining = set(range(len(self.parents)))
        while remaining:
            ready = sorted(i for i in remaining
                           if all(p in seen for p in self.parents[i]))
            if not ready:
                raise ValidationError("latent parent relation contains a cycle")
            for i in ready:
                order.append(i)
                seen.add(i)
                remaining.discard(i)
        return order

    def has_edges(self):
        return any(self.parents[i] for i in range(self.m))

    def is_forest(self):
        return all(len(pa) <= 1 for pa in self.parents)

    def neighbors(self, i):
        """Undirected neighbors of latent i (requires a forest)."""
        nb = set(self.parents[i])
        for k in range(self.m):
            if i in self.parents[k]:
                nb.add(k)
        return tuple(sorted(nb))

    def prior_prob(self, y):
        p = 1.0
        for i in range(self.m):
            row = table_index(self.parents[i], {k: y[k] for k in self.parents[i]})
            p *= self.cpts[i][row, y[i]]
        return p

    def assignment_weights(self):
        """P(y) for all 2^m latent assignments, indexed in package bit order."""
        m = self.m
        if m > ENUMERATION_GUARD:
            raise CapacityError(f"m={m} exceeds enumeration guard {ENUMERATION_GUARD}")
        n_states = 1 << m
        bits = ((np.arange(n_states)[:, None] >> np.arange(m)) & 1).astype(np.int64)
        w = np.ones(n_states)
        for i in range(m):
            pa = self.parents[i]
            row = np.zeros(n_states, dtype=np.int64)
            for t, p in enumerate(pa):
                row |= bits[:, p] << t
            w *= self.cpts[i][row, bits[:, i]]
        return w


@dataclass(frozen=True)
class NoisyOrLoadings:
    """failures[i, j] in (0, 1], leaks[j] in [0, 1); failures[i, j] == 1
    exactly where edge_mask[i, j] is False."""

    failures: np.ndarray
    leaks: np.ndarray
    edge_mask: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.failures, dtype=float)
        l = np.asarray(self.leaks, dtype=float)
        e = np.asarray(self.edge_mask, dtype=bool)
        if f.ndim != 2 or e.shape != f.shape or l.shape != (f.shape[1],):
            raise ValidationError("inconsistent loading shapes")
        if np.any(f <= 0) or np.any(f > 1):
            raise ValidationError("failure probabilities must lie in (0, 1]")
        if np.any(l < 0) or np.any(l >= 1):
            raise ValidationError("leak probabilities must lie in [0, 1)")
        if np.any((f == 1.0) != ~e):
            raise ValidationError("failures must equal 1 exactly off the edge mask")
        object.__setattr__(self, "failures", f)
        object.__setattr__(self, "leaks", l)
        object.__setattr__(self, "edge_mask", e)


@dataclass(frozen=True)
class AnchorMap:
    """anchor_of[i] is the observed index of the anchor for latent i;
    conditionals[i, a, y] = P(A_i = a | Y_i = y)."""

    anchor_of: tuple
    conditionals: np.ndarray

    def __post_init__(self):
        anchor_of = tuple(int(a) for a in self.anchor_of)
        cond = np.asarray(self.conditionals, dtype=float).reshape(
            len(anchor_of), 2, 2)
        if len(set(anchor_of)) != len(anchor_of):
            raise ValidationError("anchors must be distinct observed variables")
        if np.any(np.abs(cond.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("anchor conditional columns must sum to 1")
        if np.any(np.abs(cond[:, 1, 1] - cond[:, 1, 0]) < 1e-12):
            raise ValidationError(
                "anchor conditional is degenerate: P(A=1|Y=1) == P(A=1|Y=0)")
        object.__setattr__(self, "anchor_of", anchor_of)
        object.__setattr__(self, "conditionals", cond)

    @property
    def m(self):
        return len(self.anchor_of)

    def conditional(self, i):
        """2x2 matrix M[a, y] = P(A_i = a | Y_i = y)."""
        return self.conditionals[i]


@dataclass(frozen=True)
class AdfaModel:
    space: VariableSpace
    latent: LatentNetwork
    loadings: NoisyOrLoadings
    anchors: AnchorMap

    def __post_init__(self):
        m, n = self.space.m_latent, self.space.n_observed
        if self.latent.m != m or self.loadings.failures.shape != (m, n):
            raise ValidationError("model component dimensions disagree")
        if self.anchors.m != m:
            raise ValidationError("anchor map must cover every latent variable")
        for i, a in enumerate(self.anchors.anchor_of):
            col = self.loadings.edge_mask[:, a]
            if not (col[i] and col.sum() == 1):
                raise ValidationError(
                    f"anchor column {a} must have latent {i} as its only parent")

    @property
    def m(self):
        return self.space.m_latent

    @property
    def n(self):
        return self.space.n_observed

    def negative_given_assignment(self, j, y):
        """P(x_j = 0 | y) for a full latent assignment."""
        p = 1.0 - self.loadings.leaks[j]
        for i in range(self.m):
            if y[i]:
                p *= self.loadings.failures[i, j]
        return p

    def negative_columns(self, bits):
        """P(x_j = 0 | y) for all columns, for an array of assignments.

        bits has shape (S, m); returns shape (S, n).
        """
        logf = np.log(self.loadings.failures)  # failures > 0
        return (1.0 - self.loadings.leaks)[None, :] * np.exp(bits @ logf)


@dataclass(frozen=True)
class BinaryDataset:
    observed_rows: np.ndarray
    latent_rows: np.ndarray = None

    def __post_init__(self):
        obs = np.asarray(self.observed_rows, dtype=np.uint8)
        if obs.ndim != 2:
            raise ValidationError("observed_rows must be a 2-D bit array")
        lat = self.latent_rows
        if lat is not None:
            lat = np.asarray(lat, dtype=np.uint8)
            if lat.ndim != 2 or lat.shape[0] != obs.shape[0]:
                raise ValidationError("latent_rows must align with observed_rows")
        object.__setattr__(self, "observed_rows", obs)
        object.__setattr__(self, "latent_rows", lat)

    @property
    def n_rows(self):
        return self.observed_rows.shape[0]


def joint_prob(model, y, x):
    """P(y, x) = P(y) * prod_j P(x_j | y) with the noisy-or link."""
    y = tuple(int(v) for v in y)
    x = tuple(int(v) for v in x)
    if len(y) != model.m or len(x) != model.n:
        raise ValidationError("assignment lengths do not match the variable space")
    p = model.latent.prior_prob(y)
    for j in range(model.n):
        p0 = model.negative_given_assignment(j, y)
        p *= p0 if x[j] == 0 else 1.0 - p0
    return p


def _latent_bits(m):
    states = np.arange(1 << m)
    return ((states[:, None] >> np.arange(m)) & 1).astype(np.int64)


def exact_marginal(model, subset):
    """Brute-force marginal table over a mixed latent/observed subset of
    global ids, by enumeration over all 2^m latent assignments."""
    subset = tuple(sorted(int(g) for g in subset))
    m = model.m
    if m > ENUMERATION_GUARD:
        raise CapacityError(f"m={m} exceeds enumeration guard {ENUMERATION_GUARD}")
    for g in subset:
        if g < 0 or g >= m + model.n:
            raise ValidationError(f"global id {g} out of range")
    bits = _latent_bits(m)
    w = model.latent.assignment_weights()
    lat_pos = [t for t, g in enumerate(subset) if g < m]
    obs_pos = [t for t, g in enumerate(subset) if g >= m]
    base_idx = np.zeros(1 << m, dtype=np.int64)
    for t in lat_pos:
        base_idx |= bits[:, subset[t]] << t
    neg = model.negative_columns(bits)  # (2^m, n)
    table = np.zeros(1 << len(subset))
    for combo in range(1 << len(obs_pos)):
        like = w.copy()
        idx = base_idx.copy()
        for c, t in enumerate(obs_pos):
            j = subset[t] - m
            xv = (combo >> c) & 1
            like = like * (neg[:, j] if xv == 0 else 1.0 - neg[:, j])
            idx = idx | (xv << t)
        np.add.at(table, idx, like)
    return SubsetMoment(subset, table).validate(tol=1e-9)


def quickscore_negative(model, j, include_leak=True):
    """P(x_j = 0) in closed form; valid only for independent latents."""
    if model.latent.has_edges():
        raise ValidationError("closed-form marginal requires independent latents")
    p = 1.0
    for i in range(model.m):
        p1 = model.latent.cpts[i][0, 1]
        p *= (1.0 - p1) + p1 * model.loadings.failures[i, j]
    if include_leak:
        p *= 1.0 - model.loadings.leaks[j]
    return p


def tree_negative_prob(model, j, conditioning=None, include_leak=True):
    """P(x_j = 0 | conditioning) by upward message passing over the latent
    forest. `conditioning` maps latent indices to fixed values."""
    net = model.latent
    if not net.is_forest():
        raise ValidationError("message passing requires a tree or forest")
    conditioning = dict(conditioning or {})
    children = [[] for _ in range(net.m)]
    roots = []
    for i in range(net.m):
        if net.parents[i]:
            children[net.parents[i][0]].append(i)
        else:
            roots.append(i)

    def subtree(i, weighted):
        """S_i(y_parent): sums over the subtree at i, optionally weighting
        each node by its failure factor f_{i,j}^{y_i}."""
        f = model.loadings.failures[i, j]
        child_tabs = [subtree(c, weighted) for c in children[i]]
        out = np.zeros(2)
        values = (conditioning[i],) if i in conditioning else (0, 1)
        for y_pa in (0, 1):
            total = 0.0
            for y_i in values:
                if net.parents[i]:
                    p = net.cpts[i][y_pa, y_i]
                else:
                    p = net.cpts[i][0, y_i]
                term = p * (f ** y_i if weighted else 1.0)
                for tab in child_tabs:
                    term *= tab[y_i]
                total += term
            out[y_pa] = total
        return out

    num, den = 1.0, 1.0
    for r in roots:
        num *= subtree(r, True)[0]
        den *= subtree(r, False)[0]
    if den <= 0:
        raise ValidationError("conditioning event has zero probability")
    p = num / den
    if include_leak:
        p *= 1.0 - model.loadings.leaks[j]
    return p


def sample_dataset(model, n_rows, seed):
    """Forward-sample the generative process. Deterministic given seed."""
    if n_rows < 1:
        raise ValidationError("need at least one row")
    rng = np.random.default_rng(seed)
    m, n = model.m, model.n
    order = model.latent.topological_order()
    y = np.zeros((n_rows, m), dtype=np.uint8)
    for i in order:
        pa = model.latent.parents[i]
        row = np.zeros(n_rows, dtype=np.int64)
        for t, p in enumerate(pa):
            row |= y[:, p].astype(np.int64) << t
        p1 = model.latent.cpts[i][row, 1]
        y[:, i] = rng.random(n_rows) < p1
    p0 = model.negative_columns(y)
    x = (rng.random((n_rows, n)) >= p0).astype(np.uint8)
    return BinaryDataset(observed_rows=x, latent_rows=y)


@dataclass(frozen=True)
class ParamRanges:
    """Sampling ranges for synthetic models. Defaults keep the mixing
    matrices well conditioned and the correction factors defined."""

    cpt_range: tuple = (0.1, 0.9)
    failure_range: tuple = (0.1, 0.9)
    leak_range: tuple = (0.01, 0.1)
    anchor_failure_range: tuple = (0.1, 0.5)
    edge_prob: float = 0.5

    def __post_init__(self):
        for lo, hi in (self.cpt_range, self.failure_range,
                       self.leak_range, self.anchor_failure_range):
            if not (0 <= lo <= hi <= 1):
                raise ValidationError("parameter ranges must satisfy 0 <= lo <= hi <= 1")
        if not (0 < self.cpt_range[0] and self.cpt_range[1] < 1):
            raise ValidationError("CPTs must be non-deterministic: cpt_range in (0,1)")


def _random_tree_parents(m, rng):
    if m == 1:
        return [()]
    if m == 2:
        return [(), (0,)]
    prufer = rng.integers(0, m, size=m - 2)
    degree = np.ones(m, dtype=int)
    for v in prufer:
        degree[v] += 1
    edges = []
    leaves = sorted(i for i in range(m) if degree[i] == 1)
    for v in prufer:
        leaf = leaves.pop(0)
        edges.append((leaf, v))
        degree[v] -= 1
        if degree[v] == 1:
            leaves.insert(np.searchsorted(leaves, v), int(v))
    edges.append((leaves[0], leaves[1]))
    adj = [[] for _ in range(m)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parents = [None] * m
    parents[0] = ()
    stack = [0]
    seen = {0}
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                parents[v] = (u,)
                seen.add(v)
                stack.append(v)
    return parents


def random_model(m, n, structure, seed, param_ranges=None):
    """Draw a valid synthetic model. `structure` is 'independent', 'tree' or
    'indegree-K' for an integer K. Anchors occupy the first m observed
    variables; anchor conditionals are derived from the anchor column's
    noisy-or parameters."""
    pr = param_ranges or ParamRanges()
    if n < m:
        raise ValidationError("need n >= m so that every latent has its own anchor")
    rng = np.random.default_rng(seed)

    if structure == "independent":
        parents = [() for _ in range(m)]
    elif structure == "tree":
        parents = _random_tree_parents(m, rng)
    elif isinstance(structure, str) and structure.startswith("indegree-"):
        k = int(structure.split("-", 1)[1])
        if k < 1:
            raise ValidationError("indegree bound must be >= 1")
        order = rng.permutation(m)
        parents = [()] * m
        for pos, i in enumerate(order):
            pool = order[:pos]
            take = min(len(pool), int(rng.integers(0, k + 1)))
            parents[i] = tuple(sorted(rng.choice(pool, size=take, replace=False)))
    else:
        raise ValidationError(f"unknown structure {structure!r}")

    lo, hi = pr.cpt_range
    cpts = []
    for pa in parents:
        p1 = rng.uniform(lo, hi, size=1 << len(pa))
        cpts.append(np.stack([1 - p1, p1], axis=1))
    latent = LatentNetwork(parents=tuple(parents), cpts=tuple(cpts))

    failures = np.ones((m, n))
    edge_mask = np.zeros((m, n), dtype=bool)
    leaks = rng.uniform(*pr.leak_range, size=n)
    for i in range(m):  # anchor columns: single parent
        edge_mask[i, i] = True
        failures[i, i] = rng.uniform(*pr.anchor_failure_range)
    for j in range(m, n):
        present = rng.random(m) < pr.edge_prob
        failures[present, j] = rng.uniform(*pr.failure_range, size=present.sum())
        edge_mask[:, j] = present
    loadings = NoisyOrLoadings(failures=failures, leaks=leaks, edge_mask=edge_mask)

    cond = np.zeros((m, 2, 2))
    for i in range(m):
        no_leak = 1.0 - leaks[i]
        cond[i, 0, 0] = no_leak
        cond[i, 0, 1] = no_leak * failures[i, i]
        cond[i, 1] = 1.0 - cond[i, 0]
    anchors = AnchorMap(anchor_of=tuple(range(m)), conditionals=cond)

    space = VariableSpace(n_observed=n, m_latent=m)
    return AdfaModel(space=space, latent=latent, loadings=loadings, anchors=anchors)
