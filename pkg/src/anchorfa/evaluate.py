"""Posterior inference, evaluation tasks, and Monte-Carlo EM refinement of
the noisy-or loadings with auxiliary firing variables."""

from dataclasses import dataclass, replace

import numpy as np

from .errors import CapacityError, ValidationError
from .model import ENUMERATION_GUARD, AdfaModel, NoisyOrLoadings, _latent_bits

LIKELIHOOD_FLOOR = 1e-12


def _assignment_posterior(model, x, clamp=None):
    """Unnormalized weights P(y, x) over all latent assignments, with
    optional clamping of some latents. Returns (bits, weights)."""
    m = model.m
    if m > ENUMERATION_GUARD:
        raise CapacityError(f"m={m} exceeds enumeration guard {ENUMERATION_GUARD}")
    bits = _latent_bits(m)
    w = model.latent.assignment_weights()
    neg = model.negative_columns(bits)
    x = np.asarray(x, dtype=np.int64)
    like = np.where(x[None, :] == 0, neg, 1.0 - neg).prod(axis=1)
    w = w * like
    if clamp:
        keep = np.ones(w.size, dtype=bool)
        for i, v in clamp.items():
            keep &= bits[:, i] == v
        w = np.where(keep, w, 0.0)
    return bits, w


def posterior_exact(model, x):
    """Exact per-latent posterior marginals P(y_i = 1 | x) by enumeration."""
    bits, w = _assignment_posterior(model, x)
    z = w.sum()
    if z <= 0:
        raise ValidationError("observed row has zero probability under the model")
    return (bits * w[:, None]).sum(axis=0) / z


def gibbs_posterior(model, x, sweeps, burn_in, seed):
    """Single-site Gibbs estimate of the posterior marginals. Deterministic
    given the seed; converges to posterior_exact as sweeps grow."""
    if sweeps <= burn_in:
        raise ValidationError("sweeps must exceed burn_in")
    rng = np.random.default_rng(seed)
    m = model.m
    y = rng.integers(0, 2, size=m)
    x = np.asarray(x, dtype=np.int64)
    tallies = np.zeros(m)
    kept = 0
    children = [[] for _ in range(m)]
    for c in range(m):
        for p in model.latent.parents[c]:
            children[p].append(c)
    logf = np.log(model.loadings.failures)
    for sweep in range(sweeps):
        for i in range(m):
            w = np.zeros(2)
            for v in (0, 1):
                y[i] = v
                row = 0
                for t, p in enumerate(model.latent.parents[i]):
                    row |= y[p] << t
                p_i = model.latent.cpts[i][row, v]
                for c in children[i]:
                    rc = 0
                    for t, p in enumerate(model.latent.parents[c]):
                        rc |= y[p] << t
                    p_i *= model.latent.cpts[c][rc, y[c]]
                neg = (1.0 - model.loadings.leaks) * np.exp(y @ logf)
                like = np.where(x == 0, neg, 1.0 - neg).prod()
                w[v] = p_i * like
            total = w.sum()
            if total <= 0:
                y[i] = 0
                continue
            y[i] = rng.random() < w[1] / total
        if sweep >= burn_in:
            tallies += y
            kept += 1
    return tallies / kept


def heldout_latent_loglik(latent, labels):
    """Mean log P(y) per row under the latent network, floored per factor."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 2 or labels.shape[1] != latent.m:
        raise ValidationError("label rows must have length m")
    total = 0.0
    for i in range(latent.m):
        pa = latent.parents[i]
        row = np.zeros(labels.shape[0], dtype=np.int64)
        for t, p in enumerate(pa):
            row |= labels[:, p] << t
        probs = latent.cpts[i][row, labels[:, i]]
        total += np.log(np.maximum(probs, LIKELIHOOD_FLOOR)).sum()
    return float(total / labels.shape[0])


def last_tag_predict(model, revealed_positive, x):
    """Rank the non-revealed latents by P(y_c = 1 | revealed positives, x).

    Returns a list of (latent, posterior) sorted descending, ties broken by
    latent id."""
    revealed = sorted(set(int(i) for i in revealed_positive))
    if len(revealed) >= model.m:
        raise ValidationError("at least one latent must remain unrevealed")
    clamp = {i: 1 for i in revealed}
    bits, w = _assignment_posterior(model, x, clamp=clamp)
    z = w.sum()
    if z <= 0:
        raise ValidationError("revealed evidence has zero probability")
    marg = (bits * w[:, None]).sum(axis=0) / z
    candidates = [i for i in range(model.m) if i not in clamp]
    return sorted(((i, float(marg[i])) for i in candidates),
                  key=lambda t: (-t[1], t[0]))


def last_tag_accuracy(model, dataset, seed=0, max_rows=None):
    """Withhold one random positive tag per eligible row and report top-1
    recovery accuracy. Rows with fewer than two positive tags are skipped."""
    if dataset.latent_rows is None:
        raise ValidationError("dataset must carry latent labels for evaluation")
    rng = np.random.default_rng(seed)
    hits = trials = 0
    for r in range(dataset.n_rows):
        y = dataset.latent_rows[r]
        positives = np.flatnonzero(y)
        if positives.size < 2:
            continue
        withheld = int(positives[rng.integers(positives.size)])
        revealed = [int(i) for i in positives if i != withheld]
        ranking = last_tag_predict(model, revealed, dataset.observed_rows[r])
        hits += ranking[0][0] == withheld
        trials += 1
        if max_rows is not None and trials >= max_rows:
            break
    if trials == 0:
        raise ValidationError("no evaluation rows with two or more positive tags")
    return hits / trials, trials


# ---------------------------------------------------------------------------
# Monte-Carlo EM for the loadings


@dataclass
class GibbsState:
    assignments: np.ndarray
    seed: int
    tallies: np.ndarray = None

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=np.uint8)


@dataclass
class AuxCounts:
    """Expected firing statistics of the auxiliary slot variable for one
    observed column: slots 0..m-1 are the latent parents in id order, slot m
    is the leak, slot m+1 means nothing fired (x = 0).

    fired[k] accumulates responsibility for slot k; tried[k] accumulates the
    eligible-trial mass for slot k (slot reached with an active parent)."""

    fired: np.ndarray
    tried: np.ndarray

    def cumulative(self):
        return np.cumsum(self.fired)

    def failure_update(self, k, current):
        """1 - fired/tried for slot k; the current value is kept when the
        slot was never eligible."""
        if self.tried[k] <= 0:
            return current
        return float(np.clip(1.0 - self.fired[k] / self.tried[k], 1e-9, 1.0))


def _gibbs_samples(model, data, sweeps, burn_in, retained, seed):
    """Retained latent samples per row; shape (rows * retained, m)."""
    rng = np.random.default_rng(seed)
    out = []
    keep_at = set(np.linspace(burn_in, sweeps - 1, retained).astype(int))
    m = model.m
    children = [[] for _ in range(m)]
    for c in range(m):
        for p in model.latent.parents[c]:
            children[p].append(c)
    logf = np.log(model.loadings.failures)
    for r in range(data.n_rows):
        x = data.observed_rows[r].astype(np.int64)
        y = rng.integers(0, 2, size=m)
        for sweep in range(sweeps):
            for i in range(m):
                w = np.zeros(2)
                for v in (0, 1):
                    y[i] = v
                    row = 0
                    for t, p in enumerate(model.latent.parents[i]):
                        row |= y[p] << t
                    p_i = model.latent.cpts[i][row, v]
                    for c in children[i]:
                        rc = 0
                        for t, p in enumerate(model.latent.parents[c]):
                            rc |= y[p] << t
                        p_i *= model.latent.cpts[c][rc, y[c]]
                    neg = (1.0 - model.loadings.leaks) * np.exp(y @ logf)
                    like = np.where(x == 0, neg, 1.0 - neg).prod()
                    w[v] = p_i * like
                total = w.sum()
                y[i] = 0 if total <= 0 else rng.random() < w[1] / total
            if sweep in keep_at:
                out.append(y.copy())
    return np.array(out, dtype=np.uint8)


def complete_data_loglik(failures, leaks, y_samples, x_samples):
    """sum over samples of log P(x_j | y) under the noisy-or link."""
    neg = (1.0 - leaks)[None, :] * np.exp(
        y_samples.astype(float) @ np.log(failures))
    like = np.where(x_samples == 0, neg, 1.0 - neg)
    return float(np.log(np.maximum(like, LIKELIHOOD_FLOOR)).sum())


def inner_em_step(failures, leaks, edge_mask, y_samples, x_samples):
    """One auxiliary-variable EM pass over a fixed set of (y, x) samples.

    The slot variable picks the first active parent (ascending id order,
    leak last) that fires; x_j = 0 routes all mass to the none-fired slot.
    The update 1 - fired/tried is the exact M-step, so the complete-data
    log-likelihood cannot decrease."""
    m, n = failures.shape
    s = y_samples.shape[0]
    y = y_samples.astype(float)
    new_f = failures.copy()
    new_l = leaks.copy()
    counts = []
    for j in range(n):
        x = x_samples[:, j]
        # slot failure probabilities per sample: parents 0..m-1 then leak
        slot_f = np.where(y > 0, failures[:, j][None, :], 1.0)  # (s, m)
        slot_f = np.concatenate([slot_f, np.full((s, 1), 1.0 - leaks[j])], axis=1)
        active = np.concatenate([y > 0, np.ones((s, 1), dtype=bool)], axis=1)
        prefix = np.cumprod(np.concatenate([np.ones((s, 1)), slot_f], axis=1),
                            axis=1)  # prefix[:, k] = prod of slots < k
        resp = prefix[:, :-1] * (1.0 - slot_f)  # unnormalized firing prob per slot
        p_none = prefix[:, -1]
        denom = 1.0 - p_none
        pos = x > 0
        resp = np.where(pos[:, None] & active,
                        resp / np.maximum(denom, 1e-300)[:, None], 0.0)
        # trial mass: slot k is reached iff no earlier slot fired
        reached = 1.0 - np.concatenate(
            [np.zeros((s, 1)), np.cumsum(resp, axis=1)[:, :-1]], axis=1)
        reached = np.where(pos[:, None], reached, 1.0)  # x=0: every slot reached
        tried = np.where(active, reached, 0.0)
        aux = AuxCounts(fired=resp.sum(axis=0), tried=tried.sum(axis=0))
        counts.append(aux)
        for i in range(m):
            if edge_mask[i, j]:
                new_f[i, j] = aux.failure_update(i, failures[i, j])
        leak_fail = aux.failure_update(m, 1.0 - leaks[j])
        new_l[j] = float(min(max(1.0 - leak_fail, 0.0), 1.0 - 1e-12))
    return new_f, new_l, counts


def em_refine(model, data, outer_steps, seed, sweeps=30, burn_in=10,
              retained=5, check_monotone=True):
    """Monte-Carlo EM on the failure and leak parameters with P(Y) fixed.

    Each outer step draws Gibbs samples of the latents per row, then runs one
    inner EM pass. Returns (refined model, trace); the trace records the
    complete-data log-likelihood before and after every inner step."""
    if outer_steps < 1:
        raise ValidationError("need at least one outer step")
    current = model
    trace = []
    rng = np.random.default_rng(seed)
    for step in range(outer_steps):
        samples = _gibbs_samples(current, data, sweeps, burn_in, retained,
                                 int(rng.integers(2**63)))
        x_rep = np.repeat(data.observed_rows, retained, axis=0)
        f, l = current.loadings.failures, current.loadings.leaks
        before = complete_data_loglik(f, l, samples, x_rep)
        new_f, new_l, _ = inner_em_step(f, l, current.loadings.edge_mask,
                                        samples, x_rep)
        after = complete_data_loglik(new_f, new_l, samples, x_rep)
        if check_monotone and after < before - 1e-7 * max(1.0, abs(before)):
            raise AssertionError(
                f"inner EM step decreased the complete-data log-likelihood: "
                f"{before} -> {after}")
        loadings = NoisyOrLoadings(failures=new_f, leaks=new_l,
                                   edge_mask=current.loadings.edge_mask)
        current = AdfaModel(space=current.space, latent=current.latent,
                            loadings=loadings, anchors=current.anchors)
        trace.append({"step": step, "loglik_before": before,
                      "loglik_after": after})
    return current, trace
