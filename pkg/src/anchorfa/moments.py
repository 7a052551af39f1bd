"""Recovery of latent-variable moments from observed anchor moments.

Three constraint families are supported for the recovery optimization:
independent per-subset simplex constraints (exponentiated gradient), and the
local-consistency / marginal polytope relaxations (fully-corrective
conditional gradient with exact linear-minimization oracles).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import linprog

from .errors import CapacityError, ConditioningError, ConvergenceWarning, ValidationError
from .model import ENUMERATION_GUARD
from .tables import MomentSet, SubsetMoment, product_moment, subsets_up_to

CONSTRAINTS = ("simplex", "local", "marginal")


@dataclass(frozen=True)
class RecoveryConfig:
    """Solver settings for moment recovery.

    gap_tol is the conditional-gradient duality-gap stopping tolerance;
    eg_gap_tol is the simplex-optimality gap used by the exponentiated
    gradient solver. lam weights the pull toward the independent product
    distribution built from single-variable marginals.
    """

    constraint: str = "marginal"
    lam: float = 0.01
    gap_tol: float = 1e-4
    max_iters: int = 500
    step_rule: str = "line-search"
    epsilon_clamp: float = 1e-12
    eg_gap_tol: float = 1e-10
    eg_max_iters: int = 10000
    corrective_iters: int = 200

    def __post_init__(self):
        if self.constraint not in CONSTRAINTS:
            raise ValidationError(f"constraint must be one of {CONSTRAINTS}")
        if self.gap_tol <= 0 or self.eg_gap_tol <= 0:
            raise ValidationError("gap tolerances must be positive")
        if self.lam < 0:
            raise ValidationError("regularization weight must be nonnegative")
        if self.step_rule not in ("line-search", "harmonic"):
            raise ValidationError("step_rule must be 'line-search' or 'harmonic'")


@dataclass(frozen=True)
class MixingMatrix:
    """entries[a, z] = prod_k P(A_k = a_k | Z_k = z_k) over the sorted ids."""

    ids: tuple
    entries: np.ndarray

    def __post_init__(self):
        ids = tuple(sorted(int(i) for i in self.ids))
        entries = np.asarray(self.entries, dtype=float)
        d = 1 << len(ids)
        if entries.shape != (d, d):
            raise ValidationError("mixing matrix shape does not match ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "entries", entries)


def build_mixing(anchors, ids):
    """Kronecker product of the per-variable anchor conditionals for a sorted
    subset of global ids. Observed ids act as their own (perfect) anchors."""
    ids = tuple(sorted(int(i) for i in ids))
    blocks = []
    for g in ids:
        if g < anchors.m:
            c = anchors.conditional(g)
            if abs(np.linalg.det(c)) < 1e-12:
                raise ConditioningError(
                    f"anchor conditional for latent {g} is singular")
            blocks.append(c)
        else:
            blocks.append(np.eye(2))
    r = np.ones((1, 1))
    for b in blocks:  # ascending ids: later blocks become more significant bits
        r = np.kron(b, r)
    return MixingMatrix(ids=ids, entries=r)


def empirical_moments(data, subsets):
    """Add-zero empirical frequency tables over observed-column subsets."""
    if data.n_rows == 0:
        raise ValidationError("dataset is empty")
    rows = data.observed_rows
    out = []
    for ids in subsets:
        ids = tuple(sorted(int(i) for i in ids))
        if any(i < 0 or i >= rows.shape[1] for i in ids):
            raise ValidationError(f"observed ids {ids} out of range")
        idx = np.zeros(rows.shape[0], dtype=np.int64)
        for t, i in enumerate(ids):
            idx |= rows[:, i].astype(np.int64) << t
        counts = np.bincount(idx, minlength=1 << len(ids)).astype(float)
        out.append(SubsetMoment(ids, counts / rows.shape[0]))
    return out


def empirical_anchor_moments(data, anchors, order, extra_observed=()):
    """MomentSet keyed by latent ids whose tables are the empirical joint
    frequencies of the corresponding anchor columns. Bit t of each table
    carries the anchor of the (t+1)-th smallest latent id."""
    rows = data.observed_rows
    if rows.shape[0] == 0:
        raise ValidationError("dataset is empty")

    def count(ids):
        cols = [anchors.anchor_of[g] if g < anchors.m else g - anchors.m
                for g in ids]
        idx = np.zeros(rows.shape[0], dtype=np.int64)
        for t, c in enumerate(cols):
            idx |= rows[:, c].astype(np.int64) << t
        tab = np.bincount(idx, minlength=1 << len(ids)).astype(float)
        return SubsetMoment(tuple(ids), tab / rows.shape[0])

    latent_ids = tuple(range(anchors.m)) + tuple(sorted(extra_observed))
    return MomentSet.from_function(latent_ids, order, count)


def empirical_gid_moment(data, anchors, ids):
    """Empirical anchor-proxy table for one mixed subset of global ids: latent
    ids are replaced by their anchor columns, observed ids by themselves."""
    rows = data.observed_rows
    if rows.shape[0] == 0:
        raise ValidationError("dataset is empty")
    ids = tuple(sorted(int(i) for i in ids))
    idx = np.zeros(rows.shape[0], dtype=np.int64)
    for t, g in enumerate(ids):
        col = anchors.anchor_of[g] if g < anchors.m else g - anchors.m
        idx |= rows[:, col].astype(np.int64) << t
    tab = np.bincount(idx, minlength=1 << len(ids)).astype(float)
    return SubsetMoment(ids, tab / rows.shape[0])


def independent_marginal_vector(singletons, ids):
    """Product distribution over ids built from singleton moments."""
    return product_moment(singletons, ids)


# ---------------------------------------------------------------------------
# objectives


def _kl(p, q, eps):
    q = np.maximum(q, eps)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def _simplex_objective(mu, r, mu_a, lam, mu_ind, eps):
    val = _kl(mu_a, r @ mu, eps)
    if lam > 0:
        val += lam * _kl(mu_ind, mu, eps)
    return val


def _simplex_gradient(mu, r, mu_a, lam, mu_ind, eps):
    ratio = mu_a / np.maximum(r @ mu, eps)
    g = -(r.T @ ratio)
    if lam > 0:
        g = g - lam * mu_ind / np.maximum(mu, eps)
    return g


def _eg_minimize(objective, gradient, x0, max_iters, gap_tol):
    """Exponentiated gradient with backtracking on the probability simplex.

    Returns (x, converged). The objective value never increases."""
    x = np.asarray(x0, dtype=float)
    x = x / x.sum()
    fx = objective(x)
    eta = 1.0
    converged = False
    for _ in range(max_iters):
        g = gradient(x)
        gap = float(x @ g - g.min())
        if gap <= gap_tol:
            converged = True
            break
        accepted = False
        for _ in range(40):
            z = x * np.exp(-eta * (g - g.min()))
            s = z.sum()
            if not np.isfinite(s) or s <= 0:
                eta *= 0.5
                continue
            z /= s
            fz = objective(z)
            if fz <= fx:
                x, fx = z, fz
                eta *= 1.2
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # no float-representable improving step: numerical optimum
            converged = True
            break
    return x, converged


def recover_simplex(anchor_moment, mixing, config, mu_indep=None,
                    return_info=False):
    """Recover one latent subset table by minimizing
    KL(mu_anchor, R mu) + lam * KL(mu_indep, mu) over the simplex."""
    r = mixing.entries
    mu_a = anchor_moment.table
    if r.shape[0] != mu_a.size:
        raise ValidationError("mixing matrix and anchor moment sizes disagree")
    lam = config.lam
    if lam > 0 and mu_indep is None:
        mu_indep = SubsetMoment(mixing.ids, np.full(mu_a.size, 1.0 / mu_a.size))
    ind = mu_indep.table if mu_indep is not None else None
    eps = config.epsilon_clamp

    x0 = np.full(mu_a.size, 1.0 / mu_a.size)
    x, converged = _eg_minimize(
        lambda v: _simplex_objective(v, r, mu_a, lam, ind, eps),
        lambda v: _simplex_gradient(v, r, mu_a, lam, ind, eps),
        x0, config.eg_max_iters, config.eg_gap_tol)
    if not converged:
        warnings.warn("simplex recovery stopped before reaching tolerance",
                      ConvergenceWarning)
    moment = SubsetMoment(mixing.ids, x)
    if return_info:
        info = {"converged": converged,
                "objective": _simplex_objective(x, r, mu_a, lam, ind, eps)}
        return moment, info
    return moment


# ---------------------------------------------------------------------------
# flat vector layout for the joint recovery problem


class FlatLayout:
    """Concatenation order and offsets for all subset tables of size <= K."""

    def __init__(self, latent_ids, order):
        self.latent_ids = tuple(sorted(latent_ids))
        self.order = order
        self.subsets = list(subsets_up_to(self.latent_ids, order))
        self.offsets = {}
        pos = 0
        for z in self.subsets:
            self.offsets[z] = pos
            pos += 1 << len(z)
        self.size = pos
        self._pos_of = {v: t for t, v in enumerate(self.latent_ids)}

    def slice(self, z):
        start = self.offsets[z]
        return slice(start, start + (1 << len(z)))

    def to_vector(self, moment_set):
        vec = np.zeros(self.size)
        for z in self.subsets:
            vec[self.slice(z)] = moment_set.get(z).table
        return vec

    def to_moment_set(self, vec):
        ms = MomentSet(order=self.order, latent_ids=self.latent_ids)
        for z in self.subsets:
            ms.set(SubsetMoment(z, vec[self.slice(z)].copy()))
        return ms

    def vertex_from_assignment(self, assignment):
        """Indicator tables of a joint 0/1 assignment (dict id -> bit)."""
        vec = np.zeros(self.size)
        for z in self.subsets:
            idx = 0
            for t, v in enumerate(z):
                idx |= (assignment[v] & 1) << t
            vec[self.offsets[z] + idx] = 1.0
        return vec

    def uniform_vector(self):
        vec = np.zeros(self.size)
        for z in self.subsets:
            d = 1 << len(z)
            vec[self.slice(z)] = 1.0 / d
        return vec


def linear_oracle_marginal(gradient, layout=None):
    """Exact linear minimization over the marginal polytope by exhaustive
    enumeration of joint assignments. Ties break toward the lexicographically
    smallest assignment (all-zeros first).

    `gradient` may be a MomentSet-shaped vector paired with `layout`, or a
    MomentSet, in which case the layout is derived from it."""
    if layout is None:
        layout = FlatLayout(gradient.latent_ids, gradient.order)
        gradient = layout.to_vector(gradient)
    ids = layout.latent_ids
    m = len(ids)
    if m > ENUMERATION_GUARD:
        raise CapacityError(f"m={m} exceeds enumeration guard {ENUMERATION_GUARD}")

    best_val, best_a = np.inf, None
    chunk = 1 << 14
    for start in range(0, 1 << m, chunk):
        states = np.arange(start, min(start + chunk, 1 << m))
        scores = np.zeros(states.size)
        bits = (states[:, None] >> np.arange(m)) & 1
        for z in layout.subsets:
            idx = np.zeros(states.size, dtype=np.int64)
            for t, v in enumerate(z):
                idx |= bits[:, layout._pos_of[v]] << t
            scores += gradient[layout.slice(z)][idx]
        k = int(np.argmin(scores))
        if scores[k] < best_val:
            best_val = float(scores[k])
            best_a = int(states[k])
    assignment = {v: (best_a >> t) & 1 for t, v in enumerate(ids)}
    return layout.vertex_from_assignment(assignment), best_val, assignment


def _local_constraint_system(layout):
    """Equality system for the local consistency polytope: every table sums
    to one and marginalizing any table onto an immediate subset reproduces
    that subset's table."""
    rows, rhs = [], []
    for z in layout.subsets:
        row = np.zeros(layout.size)
        row[layout.slice(z)] = 1.0
        rows.append(row)
        rhs.append(1.0)
    for z in layout.subsets:
        if len(z) < 2:
            continue
        for drop in z:
            small = tuple(v for v in z if v != drop)
            drop_t = z.index(drop)
            for sub_idx in range(1 << len(small)):
                row = np.zeros(layout.size)
                # entries of the big table whose bits on `small` equal sub_idx
                for db in (0, 1):
                    big_idx = 0
                    for t, v in enumerate(z):
                        if v == drop:
                            big_idx |= db << t
                        else:
                            s_t = small.index(v)
                            big_idx |= ((sub_idx >> s_t) & 1) << t
                    row[layout.offsets[z] + big_idx] += 1.0
                row[layout.offsets[small] + sub_idx] -= 1.0
                rows.append(row)
                rhs.append(0.0)
    return np.array(rows), np.array(rhs)


def linear_oracle_local(gradient, layout=None):
    """Exact linear minimization over the local consistency polytope via LP.

    Accepts the same input forms as linear_oracle_marginal."""
    if layout is None:
        layout = FlatLayout(gradient.latent_ids, gradient.order)
        gradient = layout.to_vector(gradient)
    if not hasattr(layout, "_local_system"):
        layout._local_system = _local_constraint_system(layout)
    a_eq, b_eq = layout._local_system
    res = linprog(gradient, A_eq=a_eq, b_eq=b_eq, bounds=(0, 1),
                  method="highs")
    if not res.success:
        raise AssertionError(
            f"local consistency LP unexpectedly infeasible: {res.message}")
    return res.x, float(res.fun)


# ---------------------------------------------------------------------------
# joint recovery by fully-corrective conditional gradient


class _JointObjective:
    """Sum of per-subset KL terms, evaluated through one block-diagonal
    mixing matrix so value/gradient are single vectorized passes."""

    def __init__(self, layout, mixings, anchor_tables, lam, ind_tables, eps):
        self.layout = layout
        self.lam = lam
        self.eps = eps
        self.big_r = block_diag(*(mixings[z] for z in layout.subsets))
        self.a_vec = np.concatenate([anchor_tables[z] for z in layout.subsets])
        self._a_pos = self.a_vec > 0
        self._a_ent = np.sum(self.a_vec[self._a_pos]
                             * np.log(self.a_vec[self._a_pos]))
        if lam > 0:
            self.ind_vec = np.concatenate([ind_tables[z]
                                           for z in layout.subsets])
            self._i_pos = self.ind_vec > 0
            self._i_ent = np.sum(self.ind_vec[self._i_pos]
                                 * np.log(self.ind_vec[self._i_pos]))

    def value(self, vec):
        q = np.maximum(self.big_r @ vec, self.eps)
        total = self._a_ent - float(
            self.a_vec[self._a_pos] @ np.log(q[self._a_pos]))
        if self.lam > 0:
            mu = np.maximum(vec, self.eps)
            total += self.lam * (self._i_ent - float(
                self.ind_vec[self._i_pos] @ np.log(mu[self._i_pos])))
        return total

    def grad(self, vec):
        ratio = self.a_vec / np.maximum(self.big_r @ vec, self.eps)
        g = -(self.big_r.T @ ratio)
        if self.lam > 0:
            g = g - self.lam * self.ind_vec / np.maximum(vec, self.eps)
        return g


def _line_search(obj, mu, d, iters=40):
    """Exact bisection on the directional derivative of the convex 1-D slice."""
    def dphi(gamma):
        return float(obj.grad(mu + gamma * d) @ d)

    if dphi(0.0) >= 0:
        return 0.0
    if dphi(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if dphi(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def recover_polytope(anchor_moments, anchors, config, return_info=False):
    """Jointly recover all latent subset tables of size <= K over the local
    consistency or marginal polytope by fully-corrective conditional gradient.

    `anchor_moments` is a MomentSet keyed by latent ids whose tables are the
    observed anchor-tuple distributions."""
    if config.constraint not in ("local", "marginal"):
        raise ValidationError("joint recovery requires the local or marginal constraint")
    if not anchor_moments.is_complete():
        raise ValidationError("anchor moment set must cover all subsets up to K")
    layout = FlatLayout(anchor_moments.latent_ids, anchor_moments.order)
    mixings = {z: build_mixing(anchors, z).entries for z in layout.subsets}
    anchor_tables = {z: anchor_moments.get(z).table for z in layout.subsets}

    ind_tables = {}
    if config.lam > 0:
        singles = []
        for i in layout.latent_ids:
            singles.append(recover_simplex(
                anchor_moments.get((i,)), build_mixing(anchors, (i,)),
                RecoveryConfig(constraint="simplex", lam=0.0,
                               eg_gap_tol=config.eg_gap_tol,
                               eg_max_iters=config.eg_max_iters)))
        for z in layout.subsets:
            ind_tables[z] = product_moment(singles, z).table

    obj = _JointObjective(layout, mixings, anchor_tables, config.lam,
                          ind_tables, config.epsilon_clamp)

    if config.constraint == "marginal":
        def oracle(g):
            vertex, val, assignment = linear_oracle_marginal(g, layout)
            return vertex, tuple(sorted(assignment.items()))
    else:
        def oracle(g):
            vertex, val = linear_oracle_local(g, layout)
            return vertex, None

    mu = layout.uniform_vector()
    vertices = [mu.copy()]  # uniform start acts as a pseudo-vertex
    keys = [None]
    weights = np.array([1.0])
    objectives = [obj.value(mu)]
    gap = np.inf
    converged = False

    for t in range(config.max_iters):
        g = obj.grad(mu)
        s, key = oracle(g)
        gap = float(g @ (mu - s))
        if gap <= config.gap_tol:
            converged = True
            break

        if key is not None and key in keys:
            v_idx = keys.index(key)
        else:
            v_idx = None
            for k, v in enumerate(vertices):
                if np.allclose(v, s, atol=1e-12):
                    v_idx = k
                    break
            if v_idx is None:
                vertices.append(s)
                keys.append(key)
                weights = np.append(weights, 0.0)
                v_idx = len(vertices) - 1

        d = s - mu
        if config.step_rule == "harmonic":
            gamma = 2.0 / (t + 2.0)
        else:
            gamma = _line_search(obj, mu, d)
        weights = (1.0 - gamma) * weights
        weights[v_idx] += gamma
        vmat = np.array(vertices)
        mu = vmat.T @ weights
        f_ls = obj.value(mu)

        # fully-corrective pass: re-optimize the convex weights over the
        # active set; a small uniform mix lets dormant vertices revive
        w0 = 0.99 * weights + 0.01 / weights.size
        w_fc, _ = _eg_minimize(
            lambda w: obj.value(vmat.T @ w),
            lambda w: vmat @ obj.grad(vmat.T @ w),
            w0, config.corrective_iters, config.eg_gap_tol)
        if obj.value(vmat.T @ w_fc) <= f_ls:
            weights = w_fc
            mu = vmat.T @ weights
        objectives.append(obj.value(mu))

    if not converged:
        warnings.warn("conditional gradient stopped before reaching the "
                      "duality-gap tolerance", ConvergenceWarning)

    result = layout.to_moment_set(mu)
    if return_info:
        info = {"converged": converged, "gap": gap, "objectives": objectives,
                "n_vertices": len(vertices)}
        return result, info
    return result


def recover_moment_set_simplex(anchor_moments, anchors, config,
                               lam_singletons=0.0):
    """Per-subset independent simplex recovery (the weakest constraint).

    Singletons are recovered first (with lam_singletons) so that the
    independence regularizer for larger subsets has its product reference."""
    latent_ids = anchor_moments.latent_ids
    out = MomentSet(order=anchor_moments.order, latent_ids=latent_ids)
    cfg1 = RecoveryConfig(constraint="simplex", lam=lam_singletons,
                          gap_tol=config.gap_tol,
                          eg_gap_tol=config.eg_gap_tol,
                          eg_max_iters=config.eg_max_iters)
    singles = []
    for i in latent_ids:
        mom = recover_simplex(anchor_moments.get((i,)), build_mixing(anchors, (i,)),
                              cfg1)
        out.set(mom)
        singles.append(mom)
    for z in subsets_up_to(latent_ids, anchor_moments.order):
        if len(z) == 1:
            continue
        ind = product_moment(singles, z) if config.lam > 0 else None
        out.set(recover_simplex(anchor_moments.get(z), build_mixing(anchors, z),
                                config, mu_indep=ind))
    return out


def recover_moment_set(anchor_moments, anchors, config):
    """Dispatch on the configured constraint family."""
    if config.constraint == "simplex":
        return recover_moment_set_simplex(anchor_moments, anchors, config)
    return recover_polytope(anchor_moments, anchors, config)
