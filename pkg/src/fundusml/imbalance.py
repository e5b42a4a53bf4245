"""Multi-label imbalance measurement and random resampling.

Per-label imbalance rate IRLbl(j) = max_k count(k) / count(j), so the
majority label scores exactly 1.  meanIR is the arithmetic mean of IRLbl
and CVIR its coefficient of variation (population std / mean).

Two resampling families operate on a percentage-of-dataset clone/removal
budget B = floor(|m| * pct / 100):

* LP ROS / LP RUS treat each distinct label combination (powerset group)
  as one class and push group sizes toward the mean group size.
* ML ROS / ML RUS work per label: labels whose IRLbl exceeds (resp. falls
  below) the current meanIR receive clones (resp. removals).

Deficits and rates are recomputed after every placement round, so clones
participate in subsequent rounds.  Leftover budget is discarded once no
group or label qualifies.  Resampling only changes multiplicity, never a
sample's label vector.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

import numpy as np

from .manifest import DatasetManifest, SampleRecord, label_counts


class ImbalanceError(Exception):
    pass


class ZeroCountLabel(ImbalanceError):
    pass


@dataclass(frozen=True, eq=False)
class ImbalanceReport:
    acronyms: tuple[str, ...]
    per_label_ir: np.ndarray
    mean_ir: float
    cvir: float

    def to_json(self) -> str:
        return json.dumps({
            "per_label_ir": {a: v for a, v in zip(self.acronyms, self.per_label_ir.tolist())},
            "mean_ir": self.mean_ir,
            "cvir": self.cvir,
        }, indent=2)


def imbalance_report(m: DatasetManifest, include_labels=None) -> ImbalanceReport:
    counts = label_counts(m)
    if include_labels is None:
        idx = list(range(len(m.catalog)))
    else:
        idx = [m.catalog.index_of(a) for a in include_labels]
    for j in idx:
        if counts[j] == 0:
            raise ZeroCountLabel(f"label {m.catalog.acronyms[j]!r} has no positive samples")
    c = counts[idx].astype(float)
    ir = c.max() / c
    mean_ir = float(ir.mean())
    cvir = float(ir.std() / mean_ir)  # population std
    return ImbalanceReport(tuple(m.catalog.acronyms[j] for j in idx), ir, mean_ir, cvir)


def lp_transform(m: DatasetManifest) -> dict[tuple[int, ...], list[int]]:
    """Group sample indices by their exact label bit-pattern."""
    groups: dict[tuple[int, ...], list[int]] = {}
    for i, s in enumerate(m.samples):
        groups.setdefault(s.labels, []).append(i)
    return groups


def _budget(m: DatasetManifest, percentage: float) -> int:
    if percentage < 0:
        raise ImbalanceError("percentage must be >= 0")
    return int(len(m.samples) * percentage // 100)


def _clone(sample: SampleRecord, k: int) -> SampleRecord:
    return SampleRecord(f"{sample.id}__c{k}", sample.image_path, sample.labels)


def lp_ros(m: DatasetManifest, percentage: float, seed: int) -> DatasetManifest:
    """Label-powerset random oversampling: clone into groups below the mean
    group size, largest deficit first, one clone per group per round."""
    budget = _budget(m, percentage)
    samples = list(m.samples)
    groups = lp_transform(m)
    rng = random.Random(seed)
    placed = 0
    clone_n = 0
    while placed < budget and groups:
        mean = len(samples) / len(groups)
        below = sorted((g for g, members in groups.items() if len(members) < mean),
                       key=lambda g: (len(groups[g]), g))
        if not below:
            break
        for g in below:
            if placed >= budget:
                break
            pick = samples[rng.choice(groups[g])]
            clone_n += 1
            samples.append(_clone(pick, clone_n))
            groups[g].append(len(samples) - 1)
            placed += 1
    return DatasetManifest(m.catalog, tuple(samples), m.split_tag)


def lp_rus(m: DatasetManifest, percentage: float, seed: int) -> DatasetManifest:
    """Label-powerset random undersampling: remove from groups above the
    mean group size, largest surplus first, never pushing a group below it."""
    budget = _budget(m, percentage)
    groups = lp_transform(m)
    rng = random.Random(seed)
    removed: set[int] = set()
    total = len(m.samples)
    while len(removed) < budget and groups:
        mean = total / len(groups)
        above = sorted((g for g, members in groups.items() if len(members) > mean),
                       key=lambda g: (-len(groups[g]), g))
        if not above:
            break
        for g in above:
            if len(removed) >= budget:
                break
            if len(groups[g]) <= mean:
                continue
            victim = groups[g].pop(rng.randrange(len(groups[g])))
            removed.add(victim)
            total -= 1
    kept = tuple(s for i, s in enumerate(m.samples) if i not in removed)
    return DatasetManifest(m.catalog, kept, m.split_tag)


def _rates(counts: np.ndarray):
    """(included indices, IRLbl, meanIR) over labels with at least one positive."""
    idx = np.nonzero(counts > 0)[0]
    c = counts[idx].astype(float)
    ir = c.max() / c
    return idx, ir, float(ir.mean())


def ml_ros(m: DatasetManifest, percentage: float, seed: int) -> DatasetManifest:
    """Per-label random oversampling: labels with IRLbl above the meanIR
    get one clone per pass, recomputing the rates between passes."""
    budget = _budget(m, percentage)
    samples = list(m.samples)
    members: dict[int, list[int]] = {j: [] for j in range(len(m.catalog))}
    for i, s in enumerate(samples):
        for j, b in enumerate(s.labels):
            if b:
                members[j].append(i)
    rng = random.Random(seed)
    counts = label_counts(m).copy()
    placed = 0
    clone_n = 0
    while placed < budget:
        idx, ir, mean_ir = _rates(counts)
        minority = [j for j, r in zip(idx, ir) if r > mean_ir]
        if not minority:
            break
        for j in minority:
            if placed >= budget:
                break
            pick = samples[rng.choice(members[j])]
            clone_n += 1
            samples.append(_clone(pick, clone_n))
            i_new = len(samples) - 1
            for k, b in enumerate(pick.labels):
                if b:
                    members[k].append(i_new)
                    counts[k] += 1
            placed += 1
    return DatasetManifest(m.catalog, tuple(samples), m.split_tag)


def ml_rus(m: DatasetManifest, percentage: float, seed: int) -> DatasetManifest:
    """Per-label random undersampling: labels with IRLbl below the meanIR
    lose one sample per pass; only samples whose positive labels are all
    majority labels may be removed, so minority evidence is never deleted."""
    budget = _budget(m, percentage)
    rng = random.Random(seed)
    alive = list(range(len(m.samples)))
    counts = label_counts(m).copy()
    removed = 0
    while removed < budget:
        idx, ir, mean_ir = _rates(counts)
        majority = {j for j, r in zip(idx, ir) if r < mean_ir}
        if not majority:
            break
        progress = False
        for j in sorted(majority):
            if removed >= budget:
                break
            candidates = [i for i in alive
                          if m.samples[i].labels[j]
                          and all(k in majority for k, b in enumerate(m.samples[i].labels) if b)]
            if not candidates:
                continue
            victim = rng.choice(candidates)
            alive.remove(victim)
            for k, b in enumerate(m.samples[victim].labels):
                if b:
                    counts[k] -= 1
            removed += 1
            progress = True
        if not progress:
            break
    kept = tuple(m.samples[i] for i in alive)
    return DatasetManifest(m.catalog, kept, m.split_tag)
