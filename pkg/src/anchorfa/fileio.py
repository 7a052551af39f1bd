"""File formats: sparse binary datasets, anchor declarations, and JSON
serialization of models, moment sets and structures.

All writers emit deterministic bytes for identical inputs; JSON artifacts
carry a sha256 fingerprint of the configuration that produced them."""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import (AdfaModel, AnchorMap, BinaryDataset, LatentNetwork,
                    NoisyOrLoadings, VariableSpace)
from .structure import ScoredStructure
from .tables import MomentSet, SubsetMoment

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# sparse bit-row files


def _parse_sparse_rows(path, n_columns):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            row = np.zeros(n_columns, dtype=np.uint8)
            for tok in line.split():
                try:
                    idx = int(tok)
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: malformed index {tok!r}")
                if idx < 0 or idx >= n_columns:
                    raise ValidationError(
                        f"{path}:{lineno}: index {idx} out of range "
                        f"[0, {n_columns})")
                row[idx] = 1
            rows.append(row)
    if not rows:
        raise ValidationError(f"{path}: empty dataset")
    return np.array(rows, dtype=np.uint8)


def sniff_columns(path):
    """Smallest column count consistent with a sparse row file."""
    top = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            for tok in line.split():
                try:
                    top = max(top, int(tok))
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: malformed index {tok!r}")
    return top + 1


def parse_dataset(path, n_observed, latent_path=None, m_latent=None):
    """Read a sparse dataset: one row per line listing the indices of the
    positive observed variables; an optional parallel file holds latent
    labels in the same format."""
    obs = _parse_sparse_rows(path, n_observed)
    lat = None
    if latent_path is not None:
        if m_latent is None:
            raise ValidationError("latent label file requires m_latent")
        lat = _parse_sparse_rows(latent_path, m_latent)
        if lat.shape[0] != obs.shape[0]:
            raise ValidationError(
                f"{latent_path}: {lat.shape[0]} rows, expected {obs.shape[0]}")
    return BinaryDataset(observed_rows=obs, latent_rows=lat)


def write_sparse_rows(path, rows):
    with open(path, "w") as fh:
        for row in np.asarray(rows):
            fh.write(" ".join(str(int(j)) for j in np.flatnonzero(row)))
            fh.write("\n")


# ---------------------------------------------------------------------------
# anchor files


@dataclass(frozen=True)
class AnchorSpec:
    """Parsed anchor declarations: one latent per line, with optional anchor
    conditionals. Missing conditionals are estimated by the noise module."""

    names: tuple
    anchor_of: tuple
    conditionals: tuple  # per latent: 2x2 ndarray or None

    @property
    def m(self):
        return len(self.names)

    def is_complete(self):
        return all(c is not None for c in self.conditionals)

    def to_anchor_map(self):
        if not self.is_complete():
            missing = [self.names[i] for i, c in enumerate(self.conditionals)
                       if c is None]
            raise ValidationError(
                f"anchors without conditionals: {', '.join(missing)}")
        return AnchorMap(anchor_of=self.anchor_of,
                         conditionals=np.stack(self.conditionals))


def parse_anchors(path):
    """Anchor file: `latent_name observed_index [p_a1_given_y1 p_a1_given_y0]`
    per line; blank lines and #-comments ignored."""
    names, anchor_of, conds = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 4):
                raise ValidationError(
                    f"{path}:{lineno}: expected 2 or 4 fields, got {len(parts)}")
            name = parts[0]
            try:
                idx = int(parts[1])
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: malformed observed index {parts[1]!r}")
            if idx < 0:
                raise ValidationError(f"{path}:{lineno}: negative anchor index")
            if idx in anchor_of:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate anchor index {idx}")
            if name in names:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate latent name {name!r}")
            cond = None
            if len(parts) == 4:
                try:
                    p11, p10 = float(parts[2]), float(parts[3])
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: malformed conditional probabilities")
                if not (0 <= p11 <= 1 and 0 <= p10 <= 1):
                    raise ValidationError(
                        f"{path}:{lineno}: conditionals outside [0, 1]")
                # cond[a, y] = P(A=a | Y=y), columns ordered y=0, y=1
                cond = np.array([[1 - p10, 1 - p11], [p10, p11]])
            names.append(name)
            anchor_of.append(idx)
            conds.append(cond)
    if not names:
        raise ValidationError(f"{path}: no anchor declarations")
    return AnchorSpec(names=tuple(names), anchor_of=tuple(anchor_of),
                      conditionals=tuple(conds))


# ---------------------------------------------------------------------------
# JSON artifacts


def config_fingerprint(config):
    """sha256 of the canonical JSON encoding of a configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _dump(payload, path):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def _load(path, kind):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("kind") != kind:
        raise ValidationError(
            f"{path}: expected a {kind!r} artifact, found {payload.get('kind')!r}")
    return payload


def save_model(path, model, fingerprint=""):
    payload = {
        "kind": "adfa-model",
        "version": FORMAT_VERSION,
        "fingerprint": fingerprint,
        "n_observed": model.n,
        "m_latent": model.m,
        "observed_names": list(model.space.observed_names),
        "latent_names": list(model.space.latent_names),
        "parents": [list(p) for p in model.latent.parents],
        "cpts": [c.ravel().tolist() for c in model.latent.cpts],
        "failures": model.loadings.failures.tolist(),
        "leaks": model.loadings.leaks.tolist(),
        "edge_mask": model.loadings.edge_mask.astype(int).tolist(),
        "anchor_of": list(model.anchors.anchor_of),
        "anchor_conditionals": model.anchors.conditionals.tolist(),
    }
    _dump(payload, path)


def load_model(path):
    p = _load(path, "adfa-model")
    space = VariableSpace(n_observed=p["n_observed"], m_latent=p["m_latent"],
                          observed_names=tuple(p["observed_names"]),
                          latent_names=tuple(p["latent_names"]))
    latent = LatentNetwork(
        parents=tuple(tuple(pa) for pa in p["parents"]),
        cpts=tuple(np.asarray(c).reshape(-1, 2) for c in p["cpts"]))
    loadings = NoisyOrLoadings(failures=np.asarray(p["failures"]),
                               leaks=np.asarray(p["leaks"]),
                               edge_mask=np.asarray(p["edge_mask"], dtype=bool))
    anchors = AnchorMap(anchor_of=tuple(p["anchor_of"]),
                        conditionals=np.asarray(p["anchor_conditionals"]))
    return AdfaModel(space=space, latent=latent, loadings=loadings,
                     anchors=anchors)


def save_moment_set(path, moments, fingerprint=""):
    payload = {
        "kind": "moment-set",
        "version": FORMAT_VERSION,
        "fingerprint": fingerprint,
        "order": moments.order,
        "latent_ids": list(moments.latent_ids),
        "tables": {",".join(map(str, ids)): moments.moments[ids].table.tolist()
                   for ids in moments.subsets()},
    }
    _dump(payload, path)


def load_moment_set(path):
    p = _load(path, "moment-set")
    ms = MomentSet(order=p["order"], latent_ids=tuple(p["latent_ids"]))
    for key, table in p["tables"].items():
        ids = tuple(int(t) for t in key.split(","))
        ms.set(SubsetMoment(ids, np.asarray(table)))
    return ms


def save_structure(path, structure, fingerprint=""):
    payload = {
        "kind": "structure",
        "version": FORMAT_VERSION,
        "fingerprint": fingerprint,
        "parents": [list(p) for p in structure.parents],
        "score": structure.score,
        "family_scores": list(structure.family_scores),
    }
    _dump(payload, path)


def load_structure(path):
    p = _load(path, "structure")
    return ScoredStructure(parents=tuple(tuple(pa) for pa in p["parents"]),
                           score=p["score"],
                           family_scores=tuple(p["family_scores"]))
