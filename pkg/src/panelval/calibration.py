"""Quality of predicted probabilities: Brier score, concordance, recalibration.

The recalibration model regresses the binary outcome on the logit of the
predicted probability, ``P(y=1) = expit(a + b * logit(p))``; perfect
calibration is ``a = 0, b = 1``. Bias correction uses the plain bootstrap
estimate ``2 * apparent - mean(replicates)`` for both the curve and the
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit
from scipy.stats import rankdata

from .errors import ConvergenceError, InputError, NumericalError, SeparationError
from .resampling import BootstrapSpec, run_replicates

CLAMP = 1e-6
FAILURE_BUDGET = 0.01
DEFAULT_GRID = 100


@dataclass(frozen=True)
class ProbabilitySeries:
    """Predicted probability of the positive class paired with the 0/1 outcome."""

    p: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).ravel()
        y = np.asarray(self.y).ravel()
        if p.size == 0:
            raise InputError("probability series is empty")
        if p.shape != y.shape:
            raise InputError("probabilities and outcomes differ in length")
        if not np.all((p >= 0.0) & (p <= 1.0)):
            raise InputError("predicted probabilities must lie in [0, 1]")
        if not np.isin(y, (0, 1)).all():
            raise InputError("outcomes must be 0 or 1")
        p.flags.writeable = False
        y = y.astype(np.int8)
        y.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.p.size

    def take(self, idx) -> "ProbabilitySeries":
        return ProbabilitySeries(self.p[idx], self.y[idx])


def brier(series: ProbabilitySeries) -> float:
    return float(np.mean((series.p - series.y) ** 2))


def c_index(series: ProbabilitySeries) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2.

    Computed from mid-ranks (Mann-Whitney U), exact in floating point.
    """
    y = series.y.astype(bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise InputError("concordance needs both outcome classes")
    ranks = rankdata(series.p)  # mid-ranks, multiples of 1/2
    u = ranks[y].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


@dataclass(frozen=True)
class RecalibrationFit:
    intercept: float
    slope: float
    iterations: int = 0

    def __call__(self, t):
        """Calibrated probability at predicted probability ``t``."""
        return expit(self.intercept + self.slope * _logit(t))


def _logit(p):
    return logit(np.clip(p, CLAMP, 1.0 - CLAMP))


def _check_fit_input(z, y):
    pos, neg = z[y == 1], z[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise SeparationError("recalibration needs both outcome classes")
    if np.ptp(z) == 0.0:
        raise NumericalError("predicted probabilities do not vary; slope is not identifiable")
    if pos.min() >= neg.max() or pos.max() <= neg.min():
        raise SeparationError("predicted probabilities separate the outcomes; no finite MLE")


def _newton(z, y, tol=1e-10, max_iter=100):
    beta = np.array([0.0, 1.0])
    X = np.column_stack([np.ones_like(z), z])

    def nll(b):
        eta = X @ b
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))

    cur = nll(beta)
    for it in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu)
        W = mu * (1.0 - mu)
        H = (X * W[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular information matrix in recalibration fit") from None
        t = 1.0
        while True:
            cand = beta + t * step
            val = nll(cand)
            if val <= cur + 1e-12 * abs(cur) or t < 1e-8:
                break
            t /= 2.0
        beta, cur = cand, val
        if np.max(np.abs(t * step)) < tol:
            return beta, it
    raise ConvergenceError(f"recalibration fit did not converge in {max_iter} iterations")


def fit_recalibration(series: ProbabilitySeries) -> RecalibrationFit:
    """Logistic regression of the outcome on ``logit(p)``.

    Probabilities are clamped to ``[1e-6, 1 - 1e-6]`` first. Raises
    SeparationError when the outcome is perfectly separated (no finite
    MLE) and NumericalError when the predictions do not vary.
    """
    z = _logit(series.p)
    y = series.y.astype(float)
    _check_fit_input(z, y)
    (a, b), it = _newton(z, y)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ConvergenceError("recalibration fit diverged")
    return RecalibrationFit(float(a), float(b), it)


@dataclass(frozen=True)
class CalibrationReport:
    n: int
    brier: float
    c_index: float
    apparent_intercept: float
    apparent_slope: float
    corrected_intercept: float
    corrected_slope: float
    emax: float
    mean_abs_error: float
    curve: tuple[tuple[float, float, float], ...]  # (predicted, apparent, bias_corrected)
    replicates: int
    n_failed_replicates: int
    seed: int

    def summary(self) -> dict:
        """Scalar fields only, for JSON reports."""
        return {k: v for k, v in self.__dict__.items() if k != "curve"}


def _mean_curve(fits, z):
    acc = np.zeros_like(z)
    for a, b in fits:
        acc += expit(a + b * z)
    return acc / len(fits)


def bias_corrected_calibration(
    series: ProbabilitySeries,
    spec: BootstrapSpec,
    grid_size: int = DEFAULT_GRID,
    *,
    workers: int = 1,
    resample: bool = True,
) -> CalibrationReport:
    """Bootstrap bias-corrected calibration curve and summary indices.

    The grid spans the observed range of predicted probabilities. At each
    grid point the corrected curve is ``2 * apparent(g) - mean_r curve_r(g)``,
    where ``curve_r`` is the recalibration refit on bootstrap resample ``r``.
    ``emax`` is the largest ``|g - corrected(g)|`` on the grid and
    ``mean_abs_error`` the mean of ``|p_i - corrected(p_i)|`` over the
    observations. ``resample=False`` reuses the full data in every
    replicate, which makes the corrected curve equal the apparent one.
    """
    if grid_size < 2:
        raise InputError("calibration grid needs at least 2 points")
    apparent = fit_recalibration(series)
    n = len(series)

    def one(r, rng):
        idx = rng.integers(0, n, size=n) if resample else np.arange(n)
        try:
            f = fit_recalibration(series.take(idx))
        except NumericalError:
            return None
        return f.intercept, f.slope

    reps = run_replicates(one, spec.replicates, spec.seed, workers)
    fits = [f for f in reps if f is not None]
    failed = len(reps) - len(fits)
    if failed > FAILURE_BUDGET * spec.replicates:
        raise NumericalError(f"{failed} of {spec.replicates} bootstrap recalibration fits failed")

    grid = np.linspace(series.p.min(), series.p.max(), grid_size)
    zg = _logit(grid)
    app_curve = apparent(grid)
    corrected = 2.0 * app_curve - _mean_curve(fits, zg)

    zi = _logit(series.p)
    corrected_obs = 2.0 * apparent(series.p) - _mean_curve(fits, zi)
    mean_a = sum(a for a, _ in fits) / len(fits)
    mean_b = sum(b for _, b in fits) / len(fits)

    return CalibrationReport(
        n=n,
        brier=brier(series),
        c_index=c_index(series),
        apparent_intercept=apparent.intercept,
        apparent_slope=apparent.slope,
        corrected_intercept=2.0 * apparent.intercept - mean_a,
        corrected_slope=2.0 * apparent.slope - mean_b,
        emax=float(np.max(np.abs(grid - corrected))),
        mean_abs_error=float(np.mean(np.abs(series.p - corrected_obs))),
        curve=tuple(zip(grid.tolist(), app_curve.tolist(), corrected.tolist())),
        replicates=spec.replicates,
        n_failed_replicates=failed,
        seed=spec.seed,
    )
