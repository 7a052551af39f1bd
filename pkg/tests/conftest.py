"""Shared oracles for the test suite."""

import numpy as np

from anchorfa.model import exact_marginal
from anchorfa.tables import MomentSet, SubsetMoment


def population_anchor_moments(model, order, latent_ids=None):
    """Exact anchor-column moment set keyed by latent ids: the observable
    input of the recovery stage, computed by enumeration."""
    ids = tuple(latent_ids if latent_ids is not None else range(model.m))

    def anchor_moment(subset):
        cols = tuple(sorted(model.anchors.anchor_of[i] + model.m
                            for i in subset))
        mom = exact_marginal(model, cols)
        return SubsetMoment(tuple(subset), mom.table)

    return MomentSet.from_function(ids, order, anchor_moment)


def population_latent_moments(model, order):
    """Exact latent moment set (the recovery target), by enumeration."""
    return MomentSet.from_function(
        tuple(range(model.m)), order, lambda ids: exact_marginal(model, ids))


def sample_noisy_or(latent, failures, leaks, n_rows, seed):
    """Forward-sample a noisy-or model without anchor-map constraints,
    for building deliberately misspecified datasets."""
    rng = np.random.default_rng(seed)
    m = latent.m
    order = latent.topological_order()
    y = np.zeros((n_rows, m), dtype=np.uint8)
    for i in order:
        pa = latent.parents[i]
        row = np.zeros(n_rows, dtype=np.int64)
        for t, p in enumerate(pa):
            row |= y[:, p].astype(np.int64) << t
        y[:, i] = rng.random(n_rows) < latent.cpts[i][row, 1]
    neg = (1.0 - leaks)[None, :] * np.exp(y.astype(float) @ np.log(failures))
    x = (rng.random(neg.shape) >= neg).astype(np.uint8)
    return y, x
