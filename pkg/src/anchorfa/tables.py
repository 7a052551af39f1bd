"""Probability tables over variable subsets.

Bit-order convention used by every table in the package: the ids of a subset
are sorted ascending, and bit t (0-based, least significant) of a table index
carries the value of the (t+1)-th smallest id.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ValidationError

SUM_TOL = 1e-8


def table_index(ids, assignment):
    """Index into a 2^{|ids|} table for a {id: value} assignment."""
    idx = 0
    for t, v in enumerate(sorted(ids)):
        idx |= (assignment[v] & 1) << t
    return idx


def assignments(k):
    """All bit tuples of length k, in table-index order (LSB = position 0)."""
    for idx in range(1 << k):
        yield tuple((idx >> t) & 1 for t in range(k))


def marginalize_table(table, ids, keep_ids):
    """Sum a table over the ids not in keep_ids. Preserves bit order."""
    ids = tuple(sorted(ids))
    keep_ids = tuple(sorted(keep_ids))
    if not set(keep_ids) <= set(ids):
        raise ValidationError(f"{keep_ids} is not a subset of {ids}")
    k = len(ids)
    arr = np.asarray(table, dtype=float).reshape((2,) * k, order="F")
    # axis t of arr corresponds to ids[t] because bit t is the t-th smallest id
    drop_axes = tuple(t for t, v in enumerate(ids) if v not in keep_ids)
    out = arr.sum(axis=drop_axes) if drop_axes else arr
    return out.reshape(-1, order="F").copy()


@dataclass(frozen=True)
class SubsetMoment:
    """A probability table mu over a sorted subset of variable ids."""

    ids: tuple
    table: np.ndarray

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if list(ids) != sorted(set(ids)):
            raise ValidationError(f"ids must be sorted and unique, got {ids}")
        table = np.asarray(self.table, dtype=float).reshape(-1)
        if table.size != 1 << len(ids):
            raise ValidationError(
                f"table size {table.size} does not match 2^{len(ids)}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "table", table)

    def validate(self, tol=SUM_TOL):
        if np.any(self.table < -tol):
            raise ValidationError(f"negative entries in table for {self.ids}")
        if abs(self.table.sum() - 1.0) > tol:
            raise ValidationError(
                f"table for {self.ids} sums to {self.table.sum():.12g}")
        return self

    def prob(self, assignment):
        return float(self.table[table_index(self.ids, assignment)])

    def marginalize(self, keep_ids):
        return SubsetMoment(tuple(sorted(keep_ids)),
                            marginalize_table(self.table, self.ids, keep_ids))


def product_moment(singletons, ids):
    """Product distribution over ids built from singleton marginals."""
    ids = tuple(sorted(ids))
    by_id = {}
    for s in singletons:
        if len(s.ids) == 1:
            by_id[s.ids[0]] = s.table
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValidationError(f"missing singleton moments for {missing}")
    table = np.ones(1)
    for i in ids:  # ascending: each new id becomes the next-most-significant bit
        table = np.outer(by_id[i], table).reshape(-1)
    return SubsetMoment(ids, table)


@dataclass
class MomentSet:
    """One SubsetMoment for every subset of `latent_ids` of size 1..order."""

    order: int
    latent_ids: tuple
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        self.latent_ids = tuple(sorted(int(i) for i in self.latent_ids))
        self.moments = {tuple(sorted(k)): v for k, v in self.moments.items()}

    @classmethod
    def from_function(cls, latent_ids, order, fn):
        """Build by calling fn(ids) -> SubsetMoment for every subset."""
        ms = cls(order=order, latent_ids=tuple(latent_ids))
        for ids in subsets_up_to(ms.latent_ids, order):
            ms.moments[ids] = fn(ids)
        return ms

    def subsets(self):
        return sorted(self.moments, key=lambda s: (len(s), s))

    def get(self, ids):
        key = tuple(sorted(int(i) for i in ids))
        if key not in self.moments:
            raise ValidationError(f"moment set has no table for subset {key}")
        return self.moments[key]

    def has(self, ids):
        return tuple(sorted(ids)) in self.moments

    def set(self, moment):
        self.moments[moment.ids] = moment

    def singletons(self):
        return [self.moments[(i,)] for i in self.latent_ids]

    def is_complete(self):
        return all(ids in self.moments
                   for ids in subsets_up_to(self.latent_ids, self.order))

    def consistency_residual(self):
        """Max disagreement between any table and the marginalization of a
        table one size larger. Zero for moments of a single joint."""
        worst = 0.0
        for ids in self.subsets():
            if len(ids) < 2:
                continue
            big = self.moments[ids]
            for drop in ids:
                small_ids = tuple(v for v in ids if v != drop)
                if small_ids in self.moments:
                    r = np.abs(big.marginalize(small_ids).table
                               - self.moments[small_ids].table).max()
                    worst = max(worst, float(r))
        return worst


def subsets_up_to(ids, order):
    ids = tuple(sorted(ids))
    for k in range(1, order + 1):
        for c in combinations(ids, k):
            yield c
