"""Estimation of anchor conditional distributions P(A | Y) when they are not
supplied: the two-anchor triplet tensor decomposition and the singly-labeled
empirical estimator."""

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, ValidationError
from .tables import SubsetMoment

EIGEN_GAP_TOL = 1e-6
MIN_LABELED_PER_CLASS = 20


@dataclass(frozen=True)
class TripletTensor:
    """2x2x2 joint table[w1, w2, x] = P(W1, W2, X)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float).reshape(2, 2, 2)
        if np.any(t < -1e-12):
            raise ValidationError("triplet tensor entries must be nonnegative")
        if abs(t.sum() - 1.0) > 1e-8:
            raise ValidationError("triplet tensor must sum to 1")
        object.__setattr__(self, "table", t)


def assemble_triplet(prior, cond_w1, cond_w2, cond_x):
    """Build the 2x2x2 joint from mixture parameters. Each cond is a 2x2
    table cond[v, y] = P(V = v | Y = y); prior is (P(y=0), P(y=1))."""
    prior = np.asarray(prior, dtype=float)
    a, b, c = (np.asarray(t, dtype=float).reshape(2, 2)
               for t in (cond_w1, cond_w2, cond_x))
    table = np.einsum("y,ay,by,cy->abc", prior, a, b, c)
    return TripletTensor(table=table)


def empirical_triplet(data, w1, w2, x):
    """Empirical 2x2x2 joint over three observed columns of a dataset."""
    cols = data.observed_rows[:, [w1, w2, x]].astype(np.int64)
    idx = cols[:, 0] * 4 + cols[:, 1] * 2 + cols[:, 2]
    counts = np.bincount(idx, minlength=8).astype(float)
    return TripletTensor(table=(counts / counts.sum()).reshape(2, 2, 2))


def triplet_decompose(tensor):
    """Recover (prior, cond_w1, cond_w2, cond_x) from a rank-2 triplet joint.

    Works on the pencil of the two slabs along X: with A[w1,y] = P(w1|y),
    B[w2,y] = P(w2|y) and M = P(W1,W2) = A diag(pi) B^T, the slab
    T1 = P(W1,W2,X=1) satisfies T1 M^{-1} = A diag(P(X=1|y)) A^{-1}, so an
    eigendecomposition yields the conditionals in closed form. Components are
    ordered so that P(W1=1|Y=1) > P(W1=1|Y=0)."""
    t = tensor.table
    t1 = t[:, :, 1]
    m_mat = t[:, :, 0] + t1
    det = np.linalg.det(m_mat)
    if abs(det) < 1e-12:
        raise ConditioningError("pairwise marginal P(W1, W2) is singular")
    pencil = t1 @ np.linalg.inv(m_mat)
    eigvals, eigvecs = np.linalg.eig(pencil)
    if np.max(np.abs(eigvals.imag)) > 1e-9:
        raise ConditioningError("pencil eigenvalues are complex; tensor is "
                                "not a valid rank-2 mixture")
    eigvals = eigvals.real
    eigvecs = eigvecs.real
    if abs(eigvals[0] - eigvals[1]) < EIGEN_GAP_TOL:
        raise ConditioningError(
            f"eigenvalue gap {abs(eigvals[0] - eigvals[1]):.3g} below "
            f"{EIGEN_GAP_TOL}; components are indistinguishable")

    col_sums = eigvecs.sum(axis=0)
    if np.any(np.abs(col_sums) < 1e-12):
        raise ConditioningError("eigenvector column sums vanish; cannot "
                                "normalize to probability columns")
    a = eigvecs / col_sums  # columns P(W1 | y)
    # order the two components by the label convention
    if not a[1, 1] > a[1, 0]:
        a = a[:, ::-1]
        eigvals = eigvals[::-1]
    try:
        a_inv = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        raise ConditioningError("conditional matrix P(W1|Y) is singular")
    prior = a_inv @ m_mat.sum(axis=1)
    if np.any(prior < 1e-12):
        raise ConditioningError("recovered prior has a non-positive component")
    b = m_mat.T @ a_inv.T / prior[None, :]  # columns P(W2 | y)
    cond_x = np.stack([1.0 - eigvals, eigvals], axis=0)

    clip = lambda arr: np.clip(arr, 0.0, 1.0)
    return clip(prior), clip(a), clip(b), clip(cond_x)


@dataclass(frozen=True)
class AnchorEstimate:
    """Smoothed empirical conditional with per-cell Hoeffding half-widths.

    conditional[a, y] = P(A = a | Y = y); half_width[y] bounds the deviation
    of the unsmoothed empirical frequency at the stated confidence."""

    conditional: np.ndarray
    half_width: np.ndarray
    n_per_class: np.ndarray


def singly_labeled_estimate(data, i, a, labeled_rows=None, min_count=None,
                            confidence=0.95):
    """Estimate P(A_a | Y_i) from rows whose latent labels are known.

    Uses add-one smoothing and reports a per-class Hoeffding half-width at
    the given confidence."""
    if data.latent_rows is None:
        raise ValidationError("dataset carries no latent labels")
    min_count = MIN_LABELED_PER_CLASS if min_count is None else min_count
    rows = (np.arange(data.n_rows) if labeled_rows is None
            else np.asarray(labeled_rows, dtype=np.int64))
    y = data.latent_rows[rows, i]
    x = data.observed_rows[rows, a]
    cond = np.zeros((2, 2))
    half = np.zeros(2)
    n_per = np.zeros(2, dtype=np.int64)
    alpha = 1.0 - confidence
    for v in (0, 1):
        mask = y == v
        n = int(mask.sum())
        n_per[v] = n
        if n < min_count:
            raise ValidationError(
                f"only {n} labeled rows with Y_{i}={v}; need {min_count}")
        pos = int(x[mask].sum())
        cond[1, v] = (pos + 1) / (n + 2)
        cond[0, v] = 1.0 - cond[1, v]
        half[v] = np.sqrt(np.log(2.0 / alpha) / (2.0 * n))
    return AnchorEstimate(conditional=cond, half_width=half, n_per_class=n_per)


def pick_third_view(data, w1, w2, candidates=None):
    """Choose the observed column maximizing the smaller of its mutual
    informations with the two anchor views; ties broken by column index."""
    from .structure import mutual_information

    n = data.observed_rows.shape[1]
    if candidates is None:
        candidates = [j for j in range(n) if j not in (w1, w2)]
    if not candidates:
        raise ValidationError("no candidate third views")

    def pair_mi(a, b):
        cols = data.observed_rows[:, [a, b]].astype(np.int64)
        counts = np.bincount(cols[:, 0] + 2 * cols[:, 1], minlength=4)
        joint = SubsetMoment((0, 1), counts / counts.sum())
        return mutual_information(joint, 0, (1,))

    best = max(((min(pair_mi(w1, j), pair_mi(w2, j)), -j) for j in candidates))
    return -best[1]
