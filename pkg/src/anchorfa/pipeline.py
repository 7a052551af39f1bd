"""The three-stage learning pipeline: recover latent moments from anchor
moments, learn the latent structure, then estimate the noisy-or loadings.
Each stage can be run and persisted independently."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import AnchorfaError, CapacityError, ValidationError
from .loadings import (conditional_from_joint, estimate_leak, f_blanket,
                       f_direct, f_tree, prune_failures)
from .model import (ENUMERATION_GUARD, AdfaModel, LatentNetwork,
                    NoisyOrLoadings, VariableSpace)
from .moments import (RecoveryConfig, build_mixing, empirical_anchor_moments,
                      empirical_gid_moment, recover_moment_set,
                      recover_simplex)
from .structure import chow_liu, exact_search, fit_cpts
from .tables import product_moment

STRUCTURE_MODES = ("independent", "tree", "exact")


@dataclass(frozen=True)
class PipelineConfig:
    """Settings shared by the pipeline stages.

    `order` is the largest recovered latent subset size K; `lam_structure`
    and `lam_loadings` weight the independence regularizer in the two phases.
    `structure_mode` selects how the latent graph is chosen; `max_indegree`
    applies to the exact search only."""

    order: int = 2
    constraint: str = "marginal"
    lam_structure: float = 0.01
    lam_loadings: float = 0.1
    gap_tol: float = 0.005
    structure_mode: str = "tree"
    max_indegree: int = 2
    leak_method: str = "auto"
    seed: int = 0
    sampling_draws: int = 100000

    def __post_init__(self):
        if self.structure_mode not in STRUCTURE_MODES:
            raise ValidationError(
                f"structure_mode must be one of {STRUCTURE_MODES}")
        if self.structure_mode == "tree" and self.order < 2:
            raise ValidationError("tree structure learning needs order >= 2")
        if (self.structure_mode == "exact"
                and self.order < self.max_indegree + 1):
            raise ValidationError("exact search needs order >= max_indegree + 1")
        if self.leak_method not in ("auto", "quickscore", "tree-bp", "sampling"):
            raise ValidationError(f"unknown leak method {self.leak_method!r}")

    def recovery_config(self, phase):
        lam = self.lam_structure if phase == "structure" else self.lam_loadings
        constraint = self.constraint if phase == "structure" else "simplex"
        return RecoveryConfig(constraint=constraint, lam=lam,
                              gap_tol=self.gap_tol)

    def to_dict(self):
        return asdict(self)


def _stage(name):
    """Decorator tagging errors with the stage that raised them."""
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except AnchorfaError as e:
                e.args = (f"[{name}] {e.args[0] if e.args else ''}",) + e.args[1:]
                raise
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("moments")
def stage_moments(data, anchors, config):
    """Recover the latent moment set of order K from the anchor columns."""
    anchor_moments = empirical_anchor_moments(data, anchors, config.order)
    return recover_moment_set(anchor_moments, anchors,
                              config.recovery_config("structure"))


@_stage("structure")
def stage_structure(moments, n_rows, config):
    """Score and select the latent graph, then fit its CPTs."""
    if config.structure_mode == "tree":
        scored = chow_liu(moments, n_rows)
    elif config.structure_mode == "exact":
        scored = exact_search(moments, n_rows, config.max_indegree)
    else:
        from .structure import bic_score
        scored = bic_score(moments, tuple(() for _ in moments.latent_ids),
                           n_rows)
    return scored, fit_cpts(moments, scored)


def recover_mixed_moment(data, anchors, latent_subset, j, config, singletons):
    """Recover the joint over a latent subset and observed column j by
    per-subset simplex optimization on the anchor-proxy moment."""
    m = anchors.m
    ids = tuple(sorted(latent_subset)) + (m + j,)
    emp = empirical_gid_moment(data, anchors, ids)
    mixing = build_mixing(anchors, ids)
    cfg = config.recovery_config("loadings")
    mu_ind = None
    if cfg.lam > 0:
        obs_marg = empirical_gid_moment(data, anchors, (m + j,))
        mu_ind = product_moment(list(singletons) + [obs_marg], ids)
    return recover_simplex(emp, mixing, cfg, mu_indep=mu_ind)


def _markov_blanket(latent, i):
    blanket = set(latent.parents[i])
    for c in range(latent.m):
        if i in latent.parents[c]:
            blanket.add(c)
            blanket.update(latent.parents[c])
    blanket.discard(i)
    return tuple(sorted(blanket))


def _leak_method(config, latent):
    if config.leak_method != "auto":
        return config.leak_method
    if not latent.has_edges():
        return "quickscore"
    if latent.is_forest():
        return "tree-bp"
    return "sampling"


@_stage("loadings")
def stage_loadings(data, anchors, latent, moments, config, n_observed):
    """Estimate every failure probability and leak.

    The estimator is chosen by the latent structure: the direct ratio for
    independent latents, the tree-corrected ratio for forests, and the
    Markov-blanket ratio (at the all-zeros blanket assignment) otherwise.
    Anchor columns are inverted from the anchor conditionals instead."""
    m = latent.m
    failures = np.ones((m, n_observed))
    leaks = np.zeros(n_observed)
    anchor_cols = set(anchors.anchor_of)
    singletons = [moments.get((i,)) for i in range(m)]
    method = _leak_method(config, latent)
    rng = np.random.default_rng(config.seed)

    for i in range(m):
        a = anchors.anchor_of[i]
        c = anchors.conditional(i)
        if c[0, 0] < 1e-9:
            raise ValidationError(
                f"anchor conditional for latent {i} has P(A=0|Y=0) ~ 0")
        leaks[a] = min(max(1.0 - c[0, 0], 0.0), 1.0 - 1e-12)
        failures[i, a] = min(max(c[0, 1] / c[0, 0], 1e-9), 1.0)

    for j in range(n_observed):
        if j in anchor_cols:
            continue
        if latent.has_edges() and latent.is_forest():
            cond_singles = {}
            for i in range(m):
                joint = recover_mixed_moment(data, anchors, (i,), j, config,
                                             singletons)
                cond_singles[i] = conditional_from_joint(joint, m + j)
            for i in range(m):
                nbrs = latent.neighbors(i)
                cond_pairs, pair_moments = {}, {}
                for k in nbrs:
                    joint3 = recover_mixed_moment(data, anchors,
                                                  tuple(sorted((i, k))), j,
                                                  config, singletons)
                    cond_pairs[k] = conditional_from_joint(joint3, m + j)
                    pair_moments[k] = moments.get(tuple(sorted((i, k))))
                failures[i, j] = f_tree(i, nbrs, cond_singles[i], cond_pairs,
                                        pair_moments)
        elif not latent.has_edges():
            for i in range(m):
                joint = recover_mixed_moment(data, anchors, (i,), j, config,
                                             singletons)
                failures[i, j] = f_direct(conditional_from_joint(joint, m + j))
        else:
            for i in range(m):
                blanket = _markov_blanket(latent, i)
                subset = tuple(sorted(set(blanket) | {i}))
                if len(subset) + 1 > ENUMERATION_GUARD:
                    raise CapacityError(
                        f"blanket of latent {i} too large to recover jointly")
                joint = recover_mixed_moment(data, anchors, subset, j, config,
                                             singletons)
                cond = conditional_from_joint(joint, m + j)
                # condition on the highest-mass blanket configuration
                b = {k: int(np.argmax(singletons[k].table)) for k in blanket}
                failures[i, j] = f_blanket(cond, i, b)
        failures[:, j] = prune_failures(failures[:, j])
        p0_emp = float(np.mean(data.observed_rows[:, j] == 0))
        leaks[j] = estimate_leak(latent, failures[:, j], p0_emp, method,
                                 seed=int(rng.integers(2**63)),
                                 n_draws=config.sampling_draws)

    edge_mask = failures < 1.0
    return NoisyOrLoadings(failures=failures, leaks=leaks, edge_mask=edge_mask)


def run_pipeline(data, anchor_map, config, latent_names=None,
                 observed_names=None):
    """Execute moments -> structure -> loadings and assemble the model.

    Returns (model, artifacts) where artifacts maps stage names to their
    intermediate products."""
    n_observed = data.observed_rows.shape[1]
    moments = stage_moments(data, anchor_map, config)
    scored, latent = stage_structure(moments, data.n_rows, config)
    loadings = stage_loadings(data, anchor_map, latent, moments, config,
                              n_observed)
    space = VariableSpace(n_observed=n_observed, m_latent=anchor_map.m,
                          observed_names=tuple(observed_names or ()),
                          latent_names=tuple(latent_names or ()))
    model = AdfaModel(space=space, latent=latent, loadings=loadings,
                      anchors=anchor_map)
    artifacts = {"moments": moments, "structure": scored, "model": model}
    return model, artifacts
