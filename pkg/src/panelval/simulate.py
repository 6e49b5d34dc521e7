"""Synthetic annotation panels under conditional independence.

These generators are the ground truth for EM recovery, interval coverage
and calibration checks: the true class of every visit is returned with
the panel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import ProbabilitySeries
from .data import BINARY, AnnotationTable, PredictionRecord
from .errors import InputError

DEFAULT_SHAPES = ((4.0, 2.0), (1.0, 5.0))  # (alpha, beta) for truth = 1, truth = 0


@dataclass(frozen=True)
class PanelDesign:
    prevalence: float
    raters: tuple[tuple[float, float], ...]  # (sensitivity, specificity) per rater
    n: int
    seed: int = 0
    shapes: tuple[tuple[float, float], tuple[float, float]] = field(default=DEFAULT_SHAPES)

    def __post_init__(self):
        if self.n < 1:
            raise InputError("panel size n must be at least 1")
        if not (0.0 < self.prevalence < 1.0):
            raise InputError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        if not self.raters:
            raise InputError("a panel needs at least one rater")
        for se, sp in self.raters:
            # 1.0 is allowed so that noiseless raters can be simulated
            if not (0.0 < se <= 1.0 and 0.0 < sp <= 1.0):
                raise InputError(f"rater rates must lie in (0, 1], got ({se}, {sp})")
        for a, b in self.shapes:
            if a <= 0 or b <= 0:
                raise InputError("Beta shape parameters must be positive")
        object.__setattr__(self, "raters", tuple(tuple(map(float, r)) for r in self.raters))


def visit_ids(n: int) -> list[str]:
    width = max(6, len(str(n)))
    return [f"v{i + 1:0{width}d}" for i in range(n)]


def simulate_votes(design: PanelDesign) -> tuple[np.ndarray, np.ndarray]:
    """Truth vector (n,) and vote matrix (n, R) of 0/1 from the design's seed."""
    rng = np.random.default_rng(design.seed)
    truth = (rng.random(design.n) < design.prevalence).astype(np.int8)
    se = np.array([r[0] for r in design.raters])
    sp = np.array([r[1] for r in design.raters])
    u = rng.random((design.n, len(design.raters)))
    votes = np.where(truth[:, None] == 1, u < se, u >= sp).astype(np.int8)
    return truth, votes


def simulate_panel(design: PanelDesign) -> tuple[np.ndarray, AnnotationTable]:
    """Simulated panel as an annotation table with raters ``r1 .. rR``."""
    truth, votes = simulate_votes(design)
    # binary scheme: code 0 = Wellness (positive), 1 = Other
    codes = np.where(votes == 1, BINARY.positive_code, 1 - BINARY.positive_code)
    raters = [f"r{j + 1}" for j in range(votes.shape[1])]
    return truth, AnnotationTable(visit_ids(design.n), raters, codes, BINARY)


def simulate_probabilities(truth, shapes=DEFAULT_SHAPES, seed: int = 0) -> ProbabilitySeries:
    """Predicted probabilities drawn from a Beta distribution per true class."""
    truth = np.asarray(truth).astype(np.int8)
    (a1, b1), (a0, b0) = shapes
    if min(a1, b1, a0, b0) <= 0:
        raise InputError("Beta shape parameters must be positive")
    rng = np.random.default_rng(seed)
    p = np.where(truth == 1, rng.beta(a1, b1, truth.size), rng.beta(a0, b0, truth.size))
    return ProbabilitySeries(p, truth)


def simulated_predictions(truth, shapes=DEFAULT_SHAPES, seed: int = 0, threshold: float = 0.5):
    """Prediction records for :func:`visit_ids`, labelled positive at ``p >= threshold``."""
    series = simulate_probabilities(truth, shapes, seed)
    labels = BINARY.classes
    return [
        PredictionRecord(v, labels[0] if p >= threshold else labels[1], float(p))
        for v, p in zip(visit_ids(len(series)), series.p)
    ]


def simulate_calibrated(n: int, prevalence: float = 0.25, shapes=DEFAULT_SHAPES, seed: int = 0) -> ProbabilitySeries:
    """Perfectly calibrated series: Beta-mixture probabilities, outcomes ~ Bernoulli(p)."""
    if n < 1:
        raise InputError("n must be at least 1")
    (a1, b1), (a0, b0) = shapes
    rng = np.random.default_rng(seed)
    truth = rng.random(n) < prevalence
    p = np.where(truth, rng.beta(a1, b1, n), rng.beta(a0, b0, n))
    y = (rng.random(n) < p).astype(np.int8)
    return ProbabilitySeries(p, y)
