"""Dataset assembly: merge source manifests onto a target catalog, fold
rare labels into OTHER, filter by quality score, and stratify a
train/validation split."""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass

import numpy as np

from .manifest import (
    DatasetManifest,
    LabelCatalog,
    ManifestError,
    SampleRecord,
    label_counts,
)


class CurationError(Exception):
    pass


class UnmappedLabel(CurationError):
    pass


class MissingScore(CurationError):
    pass


def merge(sources, target_catalog: LabelCatalog, label_map: dict) -> DatasetManifest:
    """Combine `sources` (iterable of (name, manifest)) onto `target_catalog`.

    `label_map` maps source name -> {source acronym -> target acronym}.
    A sample's target bit is set iff any of its source labels maps there.
    Ids are namespaced `<source>__<id>` to avoid collisions.
    """
    merged = []
    for name, m in sources:
        mapping = label_map.get(name)
        if mapping is None:
            raise UnmappedLabel(f"no label map for source {name!r}")
        # validate the whole source catalog up front
        target_idx = {}
        for acr in m.catalog.acronyms:
            if acr not in mapping:
                raise UnmappedLabel(f"source {name!r} label {acr!r} has no target mapping")
            tgt = mapping[acr]
            try:
                target_idx[acr] = target_catalog.index_of(tgt)
            except ManifestError:
                raise UnmappedLabel(f"source {name!r} label {acr!r} maps to unknown target {tgt!r}") from None
        for s in m.samples:
            bits = [0] * len(target_catalog)
            for j, acr in enumerate(m.catalog.acronyms):
                if s.labels[j]:
                    bits[target_idx[acr]] = 1
            merged.append(SampleRecord(f"{name}__{s.id}", s.image_path, tuple(bits)))
    return DatasetManifest(target_catalog, tuple(merged))


@dataclass(frozen=True)
class FoldReport:
    dropped_labels: tuple[str, ...]
    moved_samples: int

    def to_json(self) -> str:
        return json.dumps({"dropped_labels": list(self.dropped_labels),
                           "moved_samples": self.moved_samples}, indent=2)


def fold_rare_labels(m: DatasetManifest, min_count: int) -> tuple[DatasetManifest, FoldReport]:
    """Remove every non-NORMAL, non-OTHER label with fewer than `min_count`
    positives; affected samples gain the OTHER bit.  Sample count is
    unchanged, only the catalog narrows."""
    if min_count < 1:
        raise CurationError("min_count must be >= 1")
    counts = label_counts(m)
    cat = m.catalog
    drop = [j for j in range(len(cat))
            if j not in (cat.normal_index, cat.other_index) and counts[j] < min_count]
    if not drop:
        return m, FoldReport((), 0)

    keep = [j for j in range(len(cat)) if j not in drop]
    new_cat = LabelCatalog(
        labels=tuple(cat.labels[j] for j in keep),
        normal_index=keep.index(cat.normal_index),
        other_index=keep.index(cat.other_index),
    )
    new_other = new_cat.other_index
    moved = 0
    new_samples = []
    for s in m.samples:
        bits = [s.labels[j] for j in keep]
        if any(s.labels[j] for j in drop):
            if not bits[new_other]:
                bits[new_other] = 1
            moved += 1
        new_samples.append(SampleRecord(s.id, s.image_path, tuple(bits)))
    report = FoldReport(tuple(cat.acronyms[j] for j in drop), moved)
    return DatasetManifest(new_cat, tuple(new_samples), m.split_tag), report


def quality_filter(m: DatasetManifest, scores: dict[str, float], *,
                   drop_fraction: float | None = None,
                   threshold: float | None = None) -> DatasetManifest:
    """Drop low-quality samples, either the floor(f*N) lowest-scoring ones
    (ties broken by id ascending) or everything scoring below `threshold`."""
    if (drop_fraction is None) == (threshold is None):
        raise CurationError("specify exactly one of drop_fraction / threshold")
    for s in m.samples:
        if s.id not in scores:
            raise MissingScore(f"no quality score for id {s.id!r}")
    if threshold is not None:
        kept = [s for s in m.samples if scores[s.id] >= threshold]
    else:
        n_drop = math.floor(drop_fraction * len(m.samples))
        by_score = sorted(m.samples, key=lambda s: (scores[s.id], s.id))
        dropped = {s.id for s in by_score[:n_drop]}
        kept = [s for s in m.samples if s.id not in dropped]
    return DatasetManifest(m.catalog, tuple(kept), m.split_tag)


def split(m: DatasetManifest, val_fraction: float, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Iterative stratified train/validation split.

    Labels are processed in ascending order of positive count; each still
    unassigned sample carrying the current label goes to the side whose
    per-label quota has the most room left.  Ties fall back to overall
    capacity, then to the seeded RNG, so the result is deterministic.
    """
    if not (0.0 < val_fraction < 1.0):
        raise CurationError("val_fraction must be in (0, 1)")
    rng = random.Random(seed)
    n = len(m.samples)
    counts = label_counts(m)
    mat = m.label_matrix()

    want = {"val": counts * val_fraction, "train": counts * (1.0 - val_fraction)}
    room = {"val": n * val_fraction, "train": n * (1.0 - val_fraction)}
    assigned: dict[int, str] = {}

    order = sorted((j for j in range(len(m.catalog)) if counts[j] > 0), key=lambda j: counts[j])
    for j in order:
        idxs = [i for i in range(n) if mat[i, j] and i not in assigned]
        rng.shuffle(idxs)
        for i in idxs:
            if want["val"][j] > want["train"][j]:
                side = "val"
            elif want["val"][j] < want["train"][j]:
                side = "train"
            elif room["val"] > room["train"]:
                side = "val"
            elif room["val"] < room["train"]:
                side = "train"
            else:
                side = rng.choice(("train", "val"))
            assigned[i] = side
            room[side] -= 1
            for k in np.nonzero(mat[i])[0]:
                want[side][k] -= 1
    for i in range(n):  # label-free leftovers go by overall capacity
        if i not in assigned:
            side = "val" if room["val"] > room["train"] else "train"
            assigned[i] = side
            room[side] -= 1

    train = tuple(s for i, s in enumerate(m.samples) if assigned[i] == "train")
    val = tuple(s for i, s in enumerate(m.samples) if assigned[i] == "val")
    return (DatasetManifest(m.catalog, train, "train"),
            DatasetManifest(m.catalog, val, "validation"))


def read_label_map(path) -> dict[str, dict[str, str]]:
    """Read a `source,source_label,target_label` CSV into the merge mapping."""
    label_map: dict[str, dict[str, str]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["source", "source_label", "target_label"]:
            raise CurationError(f"{path}: unexpected label map header {header}")
        for src, src_label, tgt in reader:
            label_map.setdefault(src, {})[src_label] = tgt
    return label_map


def target_catalog_from_label_map(label_map: dict[str, dict[str, str]],
                                  normal: str = "NORMAL", other: str = "OTHER") -> LabelCatalog:
    """Derive the merge target catalog: distinct target labels in first-use
    order (sources in sorted order for determinism)."""
    seen: list[str] = []
    for src in sorted(label_map):
        for tgt in label_map[src].values():
            if tgt not in seen:
                seen.append(tgt)
    for required in (normal, other):
        if required not in seen:
            seen.append(required)
    return LabelCatalog.from_acronyms(seen, normal=normal, other=other)
