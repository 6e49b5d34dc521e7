"""Seeded bootstrap engine.

Every replicate ``r`` draws from its own generator, built from
``SeedSequence(seed, spawn_key=(r,))``. A replicate's random numbers
therefore depend only on ``(seed, r)``, never on which worker ran it or in
what order, and replicate values are stored by index before any quantile
is taken. Running with one worker or eight gives bit-identical results.

Quantiles use linear interpolation between the closest order statistics
(``numpy.quantile`` with ``method="linear"``), everywhere in the package.
"""

from __future__ import annotations

import math
import secrets
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from statistics import NormalDist
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InputError, NumericalError

DEFAULT_REPLICATES = 2000
DEFAULT_CONFIDENCE = 0.95
CHUNK = 64
_SEED_LIMIT = 2**64


def draw_seed() -> int:
    """Fresh random seed for runs where the caller gave none."""
    return secrets.randbits(63)


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    confidence: float = DEFAULT_CONFIDENCE

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise InputError(f"replicates must be a positive integer, got {self.replicates}")
        if not (0 <= self.seed < _SEED_LIMIT):
            raise InputError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not (0.0 < self.confidence < 1.0):
            raise InputError(f"confidence must lie in (0, 1), got {self.confidence}")


@dataclass(frozen=True)
class IntervalEstimate:
    estimate: float
    lower: float
    upper: float
    n_valid_replicates: int
    n_undefined_replicates: int

    def to_dict(self) -> dict:
        return asdict(self)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for replicate ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def quantile(values, q: float) -> float:
    """Empirical quantile with linear interpolation between order statistics.

    >>> quantile([1, 2, 3, 4], 0.5)
    2.5
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise InputError("quantile of an empty collection")
    if not (0.0 <= q <= 1.0):
        raise InputError(f"quantile level {q} outside [0, 1]")
    return float(np.quantile(arr, q, method="linear"))


def run_blocks(
    fn: Callable[[int, list[np.random.Generator]], list],
    replicates: int,
    seed: int,
    workers: int = 1,
    block_size: int = CHUNK,
) -> list:
    """Evaluate replicates in fixed-size blocks, results ordered by replicate index.

    ``fn(start, rngs)`` handles replicates ``start .. start + len(rngs) - 1``
    and returns one result per generator. Block boundaries depend only on
    ``block_size``, so the worker count never changes what a block computes.
    """

    def block(start: int) -> list:
        stop = min(start + block_size, replicates)
        out = fn(start, [replicate_rng(seed, r) for r in range(start, stop)])
        if len(out) != stop - start:
            raise RuntimeError("block function returned the wrong number of results")
        return list(out)

    starts = range(0, replicates, block_size)
    if workers <= 1:
        parts = [block(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, starts))
    return [v for part in parts for v in part]


def run_replicates(
    fn: Callable[[int, np.random.Generator], object],
    replicates: int,
    seed: int,
    workers: int = 1,
) -> list:
    """Evaluate ``fn(r, rng_r)`` for every replicate, results ordered by ``r``."""
    return run_blocks(
        lambda start, rngs: [fn(start + i, g) for i, g in enumerate(rngs)],
        replicates,
        seed,
        workers,
    )


def percentile_interval(estimate: float, values: Sequence, confidence: float) -> IntervalEstimate:
    """Percentile interval from replicate values; ``None``/NaN entries are undefined."""
    valid = [float(v) for v in values if v is not None and not math.isnan(v)]
    n_undefined = len(values) - len(valid)
    if not valid:
        raise NumericalError("every bootstrap replicate was undefined")
    alpha = (1.0 - confidence) / 2.0
    return IntervalEstimate(
        estimate=float(estimate),
        lower=quantile(valid, alpha),
        upper=quantile(valid, 1.0 - alpha),
        n_valid_replicates=len(valid),
        n_undefined_replicates=n_undefined,
    )


def _take(units, idx):
    if isinstance(units, np.ndarray):
        return units[idx]
    return [units[i] for i in idx]


def bootstrap_multi(
    units,
    statistic: Callable[[object], Mapping[str, float | None]],
    spec: BootstrapSpec,
    workers: int = 1,
) -> dict[str, IntervalEstimate]:
    """Percentile intervals for several statistics computed on the same resamples.

    ``statistic`` maps a dataset (same container type as ``units``) to a
    dict of named values; ``None`` marks a value undefined on that resample.
    """
    n = len(units)
    if n == 0:
        raise InputError("cannot bootstrap an empty dataset")
    full = statistic(units)
    undefined = [k for k, v in full.items() if v is None or math.isnan(v)]
    if undefined:
        raise NumericalError(f"statistic undefined on the full dataset: {', '.join(undefined)}")

    def one(r, rng):
        return statistic(_take(units, rng.integers(0, n, size=n)))

    reps = run_replicates(one, spec.replicates, spec.seed, workers)
    return {
        k: percentile_interval(v, [rep.get(k) for rep in reps], spec.confidence)
        for k, v in full.items()
    }


def bootstrap_ci(
    units,
    statistic: Callable[[object], float | None],
    spec: BootstrapSpec,
    workers: int = 1,
) -> IntervalEstimate:
    """Percentile bootstrap interval for a single statistic."""
    return bootstrap_multi(units, lambda d: {"value": statistic(d)}, spec, workers)["value"]


# -- sample-size simulation --------------------------------------------------


@dataclass(frozen=True)
class PowerReport:
    mode: str
    n: int
    sims: int
    sensitivity: float
    specificity: float
    prevalence: float
    target_halfwidth: float
    confidence: float
    mean_halfwidth_sensitivity: float | None
    mean_halfwidth_specificity: float | None
    fraction_sensitivity_adequate: float
    fraction_specificity_adequate: float
    fraction_adequate: float
    n_undefined_sensitivity: int
    n_undefined_specificity: int

    def to_dict(self) -> dict:
        return asdict(self)


def _wald_halfwidth(successes: int, trials: int, z: float) -> float | None:
    if trials == 0:
        return None
    p = successes / trials
    return z * math.sqrt(p * (1.0 - p) / trials)


def _boot_halfwidths(tp, fn, fp, tn, spec: BootstrapSpec):
    cells = np.repeat(np.arange(4), [tp, fn, fp, tn])
    keys = [k for k, m in (("sensitivity", tp + fn), ("specificity", fp + tn)) if m]

    def stat(d):
        c = np.bincount(d, minlength=4)
        pos, neg = c[0] + c[1], c[2] + c[3]
        vals = {"sensitivity": c[0] / pos if pos else None, "specificity": c[3] / neg if neg else None}
        return {k: vals[k] for k in keys}

    ivs = bootstrap_multi(cells, stat, spec)
    return tuple(
        (ivs[k].upper - ivs[k].lower) / 2.0 if k in ivs else None
        for k in ("sensitivity", "specificity")
    )


def power_simulation(
    sensitivity: float,
    specificity: float,
    prevalence: float,
    n: int,
    sims: int,
    target_halfwidth: float,
    seed: int,
    mode: str = "wald",
    confidence: float = DEFAULT_CONFIDENCE,
    boot_replicates: int = 500,
    workers: int = 1,
) -> PowerReport:
    """Simulate ``sims`` validation studies of ``n`` visits and summarize CI half-widths.

    Each study draws the number of truly positive visits from
    Binomial(n, prevalence), then true positives and true negatives from
    the classifier's sensitivity and specificity. Studies without any
    positive (or negative) visit leave that half-width undefined; undefined
    studies count as inadequate.
    """
    if not (0.0 < prevalence < 1.0):
        raise InputError(f"prevalence must lie strictly inside (0, 1), got {prevalence}")
    for name, v in (("sensitivity", sensitivity), ("specificity", specificity)):
        if not (0.0 <= v <= 1.0):
            raise InputError(f"{name} must lie in [0, 1], got {v}")
    if n < 1 or sims < 1:
        raise InputError("n and sims must be at least 1")
    if mode not in ("wald", "bootstrap"):
        raise InputError(f"unknown power mode {mode!r}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    boot = BootstrapSpec(boot_replicates, seed, confidence)

    def one(s, rng):
        n_pos = int(rng.binomial(n, prevalence))
        tp = int(rng.binomial(n_pos, sensitivity))
        tn = int(rng.binomial(n - n_pos, specificity))
        fn, fp = n_pos - tp, n - n_pos - tn
        if mode == "wald":
            return _wald_halfwidth(tp, n_pos, z), _wald_halfwidth(tn, n - n_pos, z)
        inner = BootstrapSpec(boot.replicates, int(rng.integers(0, 2**63)), confidence)
        return _boot_halfwidths(tp, fn, fp, tn, inner)

    results = run_replicates(one, sims, seed, workers)
    hw_se = [r[0] for r in results]
    hw_sp = [r[1] for r in results]

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return math.fsum(vals) / len(vals) if vals else None

    ok_se = [v is not None and v <= target_halfwidth for v in hw_se]
    ok_sp = [v is not None and v <= target_halfwidth for v in hw_sp]
    return PowerReport(
        mode=mode,
        n=n,
        sims=sims,
        sensitivity=sensitivity,
        specificity=specificity,
        prevalence=prevalence,
        target_halfwidth=target_halfwidth,
        confidence=confidence,
        mean_halfwidth_sensitivity=mean(hw_se),
        mean_halfwidth_specificity=mean(hw_sp),
        fraction_sensitivity_adequate=sum(ok_se) / sims,
        fraction_specificity_adequate=sum(ok_sp) / sims,
        fraction_adequate=sum(a and b for a, b in zip(ok_se, ok_sp)) / sims,
        n_undefined_sensitivity=sum(v is None for v in hw_se),
        n_undefined_specificity=sum(v is None for v in hw_sp),
    )
