"""2x2 contingency tables and the eight-metric diagnostic suite."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .consensus import ReferenceLabeling
from .data import LabelScheme, PredictionRecord
from .errors import InputError
from .resampling import BootstrapSpec, IntervalEstimate, bootstrap_multi

METRIC_NAMES = (
    "sensitivity",
    "specificity",
    "ppv",
    "npv",
    "f1",
    "balanced_accuracy",
    "mcc",
    "jaccard",
)

# cell codes used when a dataset of visits is resampled
TP, FP, FN, TN = 0, 1, 2, 3


@dataclass(frozen=True)
class ContingencyTable:
    tp: int
    fp: int
    fn: int
    tn: int
    skipped: int = 0  # visits lacking a prediction or a consensus reference

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InputError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ContingencyTable":
        """The same table with the negative class taken as positive."""
        return ContingencyTable(self.tn, self.fn, self.fp, self.tp, self.skipped)

    def cells(self) -> np.ndarray:
        """One cell code per visit, in TP, FP, FN, TN order."""
        return np.repeat(np.arange(4), [self.tp, self.fp, self.fn, self.tn])


@dataclass(frozen=True)
class MetricSuite:
    """Each metric is ``None`` when its denominator is zero."""

    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    f1: float | None
    balanced_accuracy: float | None
    mcc: float | None
    jaccard: float | None

    def to_dict(self) -> dict[str, float | None]:
        return asdict(self)


def _ratio(num, den):
    return num / den if den else None


def compute_metrics(c: ContingencyTable) -> MetricSuite:
    if c.total <= 0:
        raise InputError("contingency table is empty")
    tp, fp, fn, tn = c.tp, c.fp, c.fn, c.tn
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    ppv = _ratio(tp, tp + fp)
    f1 = None
    if ppv is not None and sens is not None and ppv + sens > 0:
        f1 = 2 * ppv * sens / (ppv + sens)
    mcc_den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return MetricSuite(
        sensitivity=sens,
        specificity=spec,
        ppv=ppv,
        npv=_ratio(tn, tn + fn),
        f1=f1,
        balanced_accuracy=(sens + spec) / 2 if sens is not None and spec is not None else None,
        mcc=(tp * tn - fp * fn) / math.sqrt(mcc_den) if mcc_den else None,
        jaccard=_ratio(tp, tp + fp + fn),
    )


def build_contingency(
    predictions: Mapping[str, str | PredictionRecord],
    reference: ReferenceLabeling,
    scheme: LabelScheme | None = None,
) -> ContingencyTable:
    """Cross-tabulate predicted against reference labels on shared visits.

    Visits missing a prediction or lacking a consensus reference are
    counted in ``skipped`` and left out of the table.
    """
    scheme = scheme or reference.scheme
    pos = scheme.positive_class
    counts = [0, 0, 0, 0]
    matched = 0
    ref = reference.as_mapping()
    for vid in dict.fromkeys(list(predictions) + list(reference.visit_ids)):
        p = predictions.get(vid)
        r = ref.get(vid)
        if p is None or r is None:
            continue
        if isinstance(p, PredictionRecord):
            p = p.predicted_label
        pred_pos = scheme.normalize(p) == pos
        ref_pos = scheme.normalize(r) == pos
        counts[_cell(pred_pos, ref_pos)] += 1
        matched += 1
    if matched == 0:
        raise InputError("no visit has both a prediction and a consensus reference label")
    skipped = len(set(predictions) | set(reference.visit_ids)) - matched
    return ContingencyTable(*counts, skipped=skipped)


def _cell(pred_pos: bool, ref_pos: bool) -> int:
    if pred_pos:
        return TP if ref_pos else FP
    return FN if ref_pos else TN


def bootstrap_metrics(
    c: ContingencyTable, spec: BootstrapSpec, workers: int = 1
) -> dict[str, IntervalEstimate | None]:
    """Percentile intervals for the eight metrics, resampling visits with replacement.

    A metric undefined on the full table gets ``None`` instead of an interval.
    """
    defined = [k for k, v in compute_metrics(c).to_dict().items() if v is not None]

    def statistic(cells):
        tp, fp, fn, tn = (int(x) for x in np.bincount(cells, minlength=4))
        suite = compute_metrics(ContingencyTable(tp, fp, fn, tn)).to_dict()
        return {k: suite[k] for k in defined}

    ivs = bootstrap_multi(c.cells(), statistic, spec, workers) if defined else {}
    return {k: ivs.get(k) for k in METRIC_NAMES}
