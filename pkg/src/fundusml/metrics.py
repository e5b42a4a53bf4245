"""Per-label precision/recall/F1, average precision and ROC AUC, plus the
composite multi-label scores used for ranking fundus classifiers:

    ML_mAP / ML_F1 / ML_AUC  -- means over the disease labels T (every
                                label except NORMAL; OTHER is included)
    ML_Score    = (ML_mAP + ML_AUC) / 2
    Bin_AUC/F1  -- the NORMAL column, i.e. healthy-vs-diseased detection
    Model_Score = (ML_Score + Bin_AUC) / 2

Conventions: thresholded metrics use p >= threshold; 0/0 ratios are 0;
AUC is the Mann-Whitney statistic with ties counting 1/2; AP is
non-interpolated, ranking by descending score with original order
breaking ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .manifest import DatasetManifest, PredictionMatrix


class MetricError(Exception):
    pass


class LengthMismatch(MetricError):
    pass


class NoPositives(MetricError):
    pass


class SingleClass(MetricError):
    pass


def binary_prf(y, p, threshold: float = 0.5) -> tuple[float, float, float]:
    y = np.asarray(y, dtype=int)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise LengthMismatch(f"targets {y.shape} vs scores {p.shape}")
    pred = p >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def average_precision(y, p) -> float:
    """Non-interpolated AP: sum of precision@k over positive ranks, divided
    by the number of positives.  Ties rank by original index ascending."""
    y = np.asarray(y, dtype=int)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise LengthMismatch(f"targets {y.shape} vs scores {p.shape}")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    order = np.lexsort((np.arange(len(p)), -p))
    hits = y[order].cumsum()
    ranks = np.arange(1, len(p) + 1)
    return float((hits[y[order] == 1] / ranks[y[order] == 1]).sum() / n_pos)


def auc(y, p) -> float:
    """Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
    correctly, ties counting one half."""
    y = np.asarray(y, dtype=int)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise LengthMismatch(f"targets {y.shape} vs scores {p.shape}")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both a positive and a negative")
    ranks = rankdata(p, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def composite_scores(ml_map: float, ml_auc: float, bin_auc: float) -> tuple[float, float]:
    ml_score = (ml_map + ml_auc) / 2.0
    model_score = (ml_score + bin_auc) / 2.0
    return ml_score, model_score


@dataclass(frozen=True, eq=False)
class MetricReport:
    acronyms: tuple[str, ...]
    normal_acronym: str
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    ap: np.ndarray      # NaN where undefined (no positives)
    auc: np.ndarray     # NaN where undefined (single class)
    ml_f1: float
    ml_map: float
    ml_auc: float
    ml_score: float
    bin_auc: float
    bin_f1: float
    model_score: float
    undefined: tuple[str, ...] = field(default_factory=tuple)

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and np.isnan(v) else v
        per_label = {a: {"precision": self.precision[i], "recall": self.recall[i],
                         "f1": self.f1[i], "ap": clean(float(self.ap[i])),
                         "auc": clean(float(self.auc[i]))}
                     for i, a in enumerate(self.acronyms)}
        return json.dumps({
            "per_label": per_label,
            "ML_F1": self.ml_f1, "ML_mAP": self.ml_map, "ML_AUC": self.ml_auc,
            "ML_Score": self.ml_score, "Bin_AUC": clean(self.bin_auc),
            "Bin_F1": self.bin_f1, "Model_Score": clean(self.model_score),
            "undefined": list(self.undefined),
        }, indent=2)

    def summary_table(self) -> str:
        cols = ["ML_F1", "ML_mAP", "ML_AUC", "ML_Score", "Bin_AUC", "Bin_F1", "Model_Score"]
        vals = [self.ml_f1, self.ml_map, self.ml_auc, self.ml_score,
                self.bin_auc, self.bin_f1, self.model_score]
        head = "  ".join(f"{c:>11}" for c in cols)
        body = "  ".join(f"{v:>11.3f}" for v in vals)
        lines = [head, body, "", f"{'Class':>8}  {'Precision':>9}  {'Recall':>9}  {'F1':>9}  {'AUC':>9}"]
        for i, a in enumerate(self.acronyms):
            auc_s = "   n/a" if np.isnan(self.auc[i]) else f"{self.auc[i]:9.3f}"
            lines.append(f"{a:>8}  {self.precision[i]:9.3f}  {self.recall[i]:9.3f}  "
                         f"{self.f1[i]:9.3f}  {auc_s:>9}")
        return "\n".join(lines)


def riadd_report(m: DatasetManifest, p: PredictionMatrix, threshold: float = 0.5) -> MetricReport:
    """Full per-label and composite report for predictions `p` against the
    ground truth in `m`, aligned by sample id.

    Labels where AUC or AP is undefined on this data are flagged and left
    out of the affected mean.
    """
    if set(p.ids) != {s.id for s in m.samples} or len(p.ids) != len(m.samples):
        raise MetricError("prediction ids do not align with manifest ids")
    if p.acronyms != m.catalog.acronyms:
        raise MetricError("prediction columns do not match the catalog")
    row_of = {sid: i for i, sid in enumerate(p.ids)}
    probs = np.array([p.probs[row_of[s.id]] for s in m.samples])
    truth = m.label_matrix()

    n_labels = len(m.catalog)
    prec = np.zeros(n_labels)
    rec = np.zeros(n_labels)
    f1s = np.zeros(n_labels)
    aps = np.full(n_labels, np.nan)
    aucs = np.full(n_labels, np.nan)
    undefined = []
    for j in range(n_labels):
        prec[j], rec[j], f1s[j] = binary_prf(truth[:, j], probs[:, j], threshold)
        try:
            aps[j] = average_precision(truth[:, j], probs[:, j])
        except NoPositives:
            undefined.append(f"{m.catalog.acronyms[j]}:ap")
        try:
            aucs[j] = auc(truth[:, j], probs[:, j])
        except SingleClass:
            undefined.append(f"{m.catalog.acronyms[j]}:auc")

    disease = [j for j in range(n_labels) if j != m.catalog.normal_index]
    ml_f1 = float(np.mean(f1s[disease]))
    ml_map = float(np.nanmean(aps[disease]))
    ml_auc = float(np.nanmean(aucs[disease]))
    bin_auc = float(aucs[m.catalog.normal_index])
    bin_f1 = float(f1s[m.catalog.normal_index])
    ml_score, model_score = composite_scores(ml_map, ml_auc, bin_auc)
    return MetricReport(
        acronyms=m.catalog.acronyms,
        normal_acronym=m.catalog.normal_acronym,
        precision=prec, recall=rec, f1=f1s, ap=aps, auc=aucs,
        ml_f1=ml_f1, ml_map=ml_map, ml_auc=ml_auc, ml_score=ml_score,
        bin_auc=bin_auc, bin_f1=bin_f1, model_score=model_score,
        undefined=tuple(undefined),
    )
