"""Record-level challenge metrics.

Murmur and Extrasystole together form the positive (anomalous) class for
the binary metrics; Total Precision is computed over the three classes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .preprocessing import CLASSES

log = logging.getLogger(__name__)

DP_CLAMP = 1e-6
REPORT_COLUMNS = ["model", "C", "YI", "TP", "Spec", "Sens", "DP", "AUC"]

# Published rows (mean values only), column order as REPORT_COLUMNS.
PUBLISHED_MODEL_ROWS = {
    "AE-all": (0.55, 0.27, 1.54, 0.95, 0.32, 0.55, 0.68),
    "GI-all": (0.55, 0.23, 1.47, 0.92, 0.32, 0.40, 0.69),
    "GI-all-bn": (0.5, 0.29, 1.72, 0.96, 0.33, 0.60, 0.72),
    "GC-all": (0.30, 0.34, 2.15, 0.95, 0.39, 0.58, 0.68),
    "GC-all-bn": (0.65, 0.36, 1.84, 0.94, 0.41, 0.62, 0.70),
    "AE-n": (0.40, 0.36, 1.88, 0.96, 0.40, 0.66, 0.72),
    "GI-n": (0.25, 0.28, 1.80, 0.95, 0.33, 0.55, 0.73),
    "GC-n": (0.10, 0.29, 1.87, 0.95, 0.33, 0.56, 0.73),
}
# Literature comparison rows: (YI, TP, Spec, Sens, DP); no C, no AUC.
LITERATURE_ROWS = {
    "Balili et al.": (0.15, 1.36, 0.95, 0.2, 0.37),
    "Chakir et al.": (0.15, 1.58, 0.66, 0.49, 0.15),
    "Zhang et al.": (0.29, 2.03, 0.95, 0.34, 0.54),
}


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_counts(truth, predicted) -> np.ndarray:
    """3x3 counts, rows = true class, columns = predicted class."""
    m = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(truth, predicted):
        m[CLASSES.index(t), CLASSES.index(p)] += 1
    return m


def collapse_binary(counts) -> BinaryCounts:
    """Normal vs anomalous; Murmur/Extrasystole confusions still count as hits."""
    c = np.asarray(counts, dtype=np.int64)
    if c.shape != (3, 3) or (c < 0).any():
        raise ValueError("confusion counts must be a non-negative 3x3 matrix")
    return BinaryCounts(tp=int(c[1:, 1:].sum()), fp=int(c[0, 1:].sum()), tn=int(c[0, 0]), fn=int(c[1:, 0].sum()))


def _ratio(num, den, what, flags):
    if den == 0:
        msg = f"{what} undefined (zero denominator)"
        log.warning(msg)
        if flags is not None:
            flags.append(msg)
        return float("nan")
    return num / den


def sensitivity(b: BinaryCounts, flags: list | None = None) -> float:
    return _ratio(b.tp, b.tp + b.fn, "sensitivity", flags)


def specificity(b: BinaryCounts, flags: list | None = None) -> float:
    return _ratio(b.tn, b.tn + b.fp, "specificity", flags)


def youden(sens: float, spec: float) -> float:
    return sens + spec - 1


def total_precision(counts, flags: list | None = None) -> float:
    """Sum of the three per-class precisions; a never-predicted class adds 0."""
    return float(sum(per_class_precision(counts, flags)))


def per_class_precision(counts, flags: list | None = None) -> list[float]:
    c = np.asarray(counts, dtype=np.int64)
    out = []
    for k, cls in enumerate(CLASSES):
        col = c[:, k].sum()
        if col == 0:
            msg = f"class {cls} never predicted; its precision counts as 0"
            log.warning(msg)
            if flags is not None:
                flags.append(msg)
            out.append(0.0)
        else:
            out.append(c[k, k] / col)
    return out


def discriminant_power(sens: float, spec: float, flags: list | None = None) -> float:
    """(sqrt(3)/pi) * (logit(sens) + logit(spec)), rates clamped away from 0 and 1."""
    if math.isnan(sens) or math.isnan(spec):
        return float("nan")
    clamped = [min(max(r, DP_CLAMP), 1 - DP_CLAMP) for r in (sens, spec)]
    if clamped != [sens, spec]:
        msg = "discriminant power: rate at 0 or 1 clamped"
        log.warning(msg)
        if flags is not None:
            flags.append(msg)
    s, p = clamped
    return math.sqrt(3) / math.pi * (math.log(s / (1 - s)) + math.log(p / (1 - p)))


def roc_auc(scores, truth) -> float:
    """Probability that a random positive outranks a random negative (ties 1/2).

    Computed from integer rank sums so the result is an exact ratio.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        log.warning("AUC undefined without both positives and negatives")
        return float("nan")
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    # twice the average rank keeps everything integral
    rank2 = np.empty(len(s), dtype=np.int64)
    i = 0
    while i < len(ss):
        j = i
        while j + 1 < len(ss) and ss[j + 1] == ss[i]:
            j += 1
        rank2[order[i:j + 1]] = i + j + 2
        i = j + 1
    u2 = int(rank2[y].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


@dataclass
class MetricsReport:
    model: str
    C: float
    yi: float
    tp: float
    specificity: float
    sensitivity: float
    dp: float
    auc: float
    n_records: int
    per_class_precision: list = field(default_factory=list)
    confusion: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def row(self) -> list:
        return [self.model, self.C, self.yi, self.tp, self.specificity, self.sensitivity, self.dp, self.auc]

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(truth, predicted, anomaly_scores=None, model: str = "", C: float = float("nan")) -> MetricsReport:
    flags: list[str] = []
    counts = confusion_counts(truth, predicted)
    b = collapse_binary(counts)
    sens = sensitivity(b, flags)
    spec = specificity(b, flags)
    auc = float("nan")
    if anomaly_scores is not None:
        auc = roc_auc(anomaly_scores, [t != "Normal" for t in truth])
    return MetricsReport(
        model=model, C=C, yi=youden(sens, spec), tp=total_precision(counts, flags), specificity=spec,
        sensitivity=sens, dp=discriminant_power(sens, spec, flags), auc=auc, n_records=len(list(truth)),
        per_class_precision=per_class_precision(counts), confusion=counts.tolist(), flags=flags,
    )


def average_reports(reports: list[MetricsReport]) -> tuple[MetricsReport, dict]:
    """Mean of each metric over reports (e.g. the last saved checkpoints), plus std."""
    if not reports:
        raise ValueError("no reports to average")
    keys = ["yi", "tp", "specificity", "sensitivity", "dp", "auc"]
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    std = {k: float(np.std([getattr(r, k) for r in reports])) for k in keys}
    mean["yi"] = youden(mean["sensitivity"], mean["specificity"])
    first = reports[0]
    avg = MetricsReport(model=first.model, C=first.C, n_records=first.n_records,
                        flags=sorted({f for r in reports for f in r.flags}), **mean)
    return avg, std
