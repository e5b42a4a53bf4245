"""Shared fixtures: count tables, manifest builders, the synthetic
three-source assembly corpus."""

from __future__ import annotations

import random

import numpy as np

from fundusml.imaging import QualityScore, write_quality_report
from fundusml.manifest import (
    DEFAULT_CATALOG,
    DatasetManifest,
    LabelCatalog,
    SampleRecord,
    save_manifest,
)

# (train, validation, total) per label of the default 20-class catalog
CLASS_COUNTS = {
    "DR": (396, 99, 495),
    "NORMAL": (395, 98, 493),
    "MH": (135, 34, 169),
    "ODC": (211, 52, 263),
    "TSLN": (125, 31, 156),
    "ARMD": (126, 32, 158),
    "DN": (130, 32, 162),
    "MYA": (71, 18, 89),
    "BRVO": (63, 16, 79),
    "ODP": (50, 12, 62),
    "CRVO": (44, 11, 55),
    "CNV": (48, 12, 60),
    "RS": (47, 11, 58),
    "ODE": (46, 11, 57),
    "LS": (37, 9, 46),
    "CSR": (29, 7, 36),
    "HTR": (28, 7, 35),
    "ASR": (26, 7, 33),
    "CRS": (24, 6, 30),
    "OTHER": (209, 52, 261),
}

TOTAL_COUNTS = [CLASS_COUNTS[a][2] for a in DEFAULT_CATALOG.acronyms]
VAL_COUNTS = [CLASS_COUNTS[a][1] for a in DEFAULT_CATALOG.acronyms]


def manifest_from_labelsets(labelsets, catalog, prefix="s"):
    """One sample per entry; each entry is an iterable of acronyms."""
    samples = tuple(
        SampleRecord(f"{prefix}{i}", f"{prefix}{i}.png",
                     tuple(1 if a in ls else 0 for a in catalog.acronyms))
        for i, ls in enumerate(labelsets))
    return DatasetManifest(catalog, samples)


def single_label_manifest(counts, catalog, prefix="s"):
    """counts[j] single-label samples per catalog position j."""
    labelsets = []
    for j, c in enumerate(counts):
        labelsets.extend([{catalog.acronyms[j]}] * c)
    return manifest_from_labelsets(labelsets, catalog, prefix)


def table_counts_manifest():
    return single_label_manifest(TOTAL_COUNTS, DEFAULT_CATALOG)


def random_manifest(rng: random.Random, max_samples=30, n_labels=5):
    """Small random multi-label manifest; every sample has >= 1 label."""
    acr = [f"L{j}" for j in range(n_labels - 2)] + ["NORMAL", "OTHER"]
    catalog = LabelCatalog.from_acronyms(acr)
    n = rng.randint(2, max_samples)
    labelsets = []
    for _ in range(n):
        k = rng.randint(1, min(3, n_labels))
        labelsets.append(set(rng.sample(acr, k)))
    return manifest_from_labelsets(labelsets, catalog)


def build_three_source_fixture(tmp_path):
    """Write source manifests, label map and quality scores for the
    assembly pipeline: 2451 single-label samples over NORMAL + 18 common
    diseases + 34 rare labels (each under 30 samples), split across three
    sources sized 143 / 388 / 1920.

    Returns (source paths dict, label_map path, scores path, expected total).
    """
    diseases = [f"D{i:02d}" for i in range(18)]
    disease_counts = [390, 200, 160, 140, 130, 120, 110, 90, 80,
                      70, 60, 55, 50, 45, 40, 36, 33, 30]
    rares = [f"R{i:02d}" for i in range(34)]
    rare_counts = [(i % 28) + 2 for i in range(34)]
    normal_count = 2451 - sum(disease_counts) - sum(rare_counts)
    assert normal_count >= 30

    acr = ["NORMAL", *diseases, *rares]
    catalog = LabelCatalog.from_acronyms(acr)

    labels = ["NORMAL"] * normal_count
    for name, c in zip(diseases, disease_counts):
        labels.extend([name] * c)
    for name, c in zip(rares, rare_counts):
        labels.extend([name] * c)
    random.Random(123).shuffle(labels)
    assert len(labels) == 2451

    source_sizes = {"aria": 143, "stare": 388, "rfmid": 1920}
    paths = {}
    score_rows = []
    start = 0
    for src, size in source_sizes.items():
        chunk = labels[start:start + size]
        start += size
        samples = tuple(
            SampleRecord(f"{src}{i:04d}", f"{src}{i:04d}.png",
                         tuple(1 if a == lab else 0 for a in acr))
            for i, lab in enumerate(chunk))
        m = DatasetManifest(catalog, samples)
        path = tmp_path / f"{src}.csv"
        save_manifest(m, path)
        paths[src] = path
        for i in range(size):
            rank = (len(score_rows) * 37) % 2451
            score_rows.append((f"{src}__{src}{i:04d}",
                               QualityScore(0.01 + 0.5 * rank / 2451, False)))

    map_path = tmp_path / "label_map.csv"
    with open(map_path, "w", encoding="utf-8") as f:
        f.write("source,source_label,target_label\n")
        for src in source_sizes:
            for a in acr:
                f.write(f"{src},{a},{a}\n")

    scores_path = tmp_path / "scores.csv"
    write_quality_report(score_rows, scores_path)
    return paths, map_path, scores_path, 2451
