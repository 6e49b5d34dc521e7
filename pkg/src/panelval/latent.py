"""Two-class latent class model under conditional independence, fit by EM.

Each visit has an unobserved true class (positive with probability
``prevalence``). Given the true class, raters vote independently: rater
``r`` votes positive on a true positive with probability ``se[r]`` and
votes negative on a true negative with probability ``sp[r]``. Missing votes
contribute a factor of one.

The data are summarized as distinct vote patterns with counts, so the cost
of an EM iteration does not depend on the number of visits. The EM core is
batched: it fits a stack of count vectors over the same patterns at once,
which is how bootstrap replicates are refit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import MISSING, AnnotationTable, LabelScheme, PredictionRecord
from .errors import ConvergenceError, IdentifiabilityError, InputError
from .resampling import BootstrapSpec, IntervalEstimate, percentile_interval, run_blocks

EPS = 1e-6
PARAM_TOL = 1e-8
LOGLIK_TOL = 1e-10
MAX_ITER = 10_000
ALGORITHM_ID = "algorithm"
FAILURE_BUDGET = 0.01
BLOCK = 250

POSITIVE, NEGATIVE, ABSENT = 1, 0, -1


@dataclass(frozen=True)
class VotePatternTable:
    """Distinct response vectors over (positive, negative, missing) with counts."""

    raters: tuple[str, ...]
    patterns: np.ndarray  # (P, R) of POSITIVE / NEGATIVE / ABSENT
    counts: np.ndarray  # (P,)

    def __post_init__(self):
        pats = np.asarray(self.patterns, dtype=np.int8)
        cnt = np.asarray(self.counts, dtype=np.int64)
        if pats.ndim != 2 or pats.shape[1] != len(self.raters):
            raise InputError("pattern length must equal the number of raters")
        if cnt.shape != (pats.shape[0],):
            raise InputError("one count per pattern is required")
        if pats.shape[0] == 0:
            raise InputError("vote pattern table is empty")
        if (cnt < 1).any():
            raise InputError("pattern counts must be at least 1")
        if not np.isin(pats, (POSITIVE, NEGATIVE, ABSENT)).all():
            raise InputError("pattern entries must be 1, 0 or -1")
        pats.flags.writeable = False
        cnt.flags.writeable = False
        object.__setattr__(self, "raters", tuple(self.raters))
        object.__setattr__(self, "patterns", pats)
        object.__setattr__(self, "counts", cnt)

    @property
    def n_raters(self) -> int:
        return len(self.raters)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_rows(cls, raters: Sequence[str], rows) -> "VotePatternTable":
        """Build from ``[(pattern, count), ...]``; repeated patterns are merged.

        Pattern entries may be 1/0/None or 1/0/-1.
        """
        merged: dict[tuple, int] = {}
        for pattern, count in rows:
            key = tuple(ABSENT if x is None else int(x) for x in pattern)
            merged[key] = merged.get(key, 0) + int(count)
        keys = [k for k, c in merged.items() if c > 0]
        return cls(tuple(raters), np.array(keys).reshape(len(keys), len(raters)), np.array([merged[k] for k in keys]))

    @classmethod
    def from_votes(cls, raters: Sequence[str], votes: np.ndarray) -> "VotePatternTable":
        """Build from a visits x raters array of 1 / 0 / -1."""
        votes = np.asarray(votes, dtype=np.int8)
        keep = (votes != ABSENT).any(axis=1)
        uniq, counts = np.unique(votes[keep], axis=0, return_counts=True)
        return cls(tuple(raters), uniq, counts)

    @classmethod
    def from_annotations(
        cls,
        table: AnnotationTable,
        predictions: Mapping[str, PredictionRecord | str] | None = None,
        positive_class: str | None = None,
        algorithm_id: str = ALGORITHM_ID,
    ) -> "VotePatternTable":
        """Positive/negative votes from an annotation panel.

        Any label other than the positive class counts as a negative vote.
        With ``predictions`` the classifier joins the panel as one more
        rater named ``algorithm_id``; visits it did not score get a missing
        vote, and predicted visits absent from the panel are ignored.
        """
        scheme: LabelScheme = table.scheme
        pos = scheme.classes.index(scheme.normalize(positive_class or scheme.positive_class))
        votes = np.where(table.codes == MISSING, ABSENT, (table.codes == pos).astype(np.int8))
        raters = list(table.raters)
        if predictions is not None:
            if algorithm_id in raters:
                raise InputError(f"rater id {algorithm_id!r} already used by the panel")
            col = np.full(table.n_visits, ABSENT, dtype=np.int8)
            for i, v in enumerate(table.visit_ids):
                p = predictions.get(v)
                if p is None:
                    continue
                label = p.predicted_label if isinstance(p, PredictionRecord) else p
                col[i] = int(scheme.normalize(label) == scheme.classes[pos])
            votes = np.column_stack([votes, col])
            raters.append(algorithm_id)
        return cls.from_votes(raters, votes)

    def expand(self) -> np.ndarray:
        """Visits x raters vote array, one row per counted visit."""
        return np.repeat(self.patterns, self.counts, axis=0)


@dataclass(frozen=True)
class LatentClassModel:
    prevalence: float
    sensitivity: tuple[float, ...]
    specificity: tuple[float, ...]
    raters: tuple[str, ...] = ()

    def __post_init__(self):
        se = tuple(float(x) for x in self.sensitivity)
        sp = tuple(float(x) for x in self.specificity)
        if len(se) != len(sp):
            raise InputError("sensitivity and specificity need one entry per rater")
        if not self.raters:
            object.__setattr__(self, "raters", tuple(f"r{i + 1}" for i in range(len(se))))
        elif len(self.raters) != len(se):
            raise InputError("one rater id per sensitivity entry is required")
        for v in (self.prevalence, *se, *sp):
            if not (0.0 < v < 1.0):
                raise InputError(f"latent class parameters must lie in (0, 1), got {v}")
        object.__setattr__(self, "prevalence", float(self.prevalence))
        object.__setattr__(self, "sensitivity", se)
        object.__setattr__(self, "specificity", sp)
        object.__setattr__(self, "raters", tuple(self.raters))

    def swapped(self) -> "LatentClassModel":
        """The label-switched model, which has the same likelihood."""
        return LatentClassModel(
            1.0 - self.prevalence,
            tuple(1.0 - s for s in self.specificity),
            tuple(1.0 - s for s in self.sensitivity),
            self.raters,
        )

    def is_canonical(self) -> bool:
        return sum(self.sensitivity) + sum(self.specificity) >= len(self.sensitivity)

    def canonical(self) -> "LatentClassModel":
        return self if self.is_canonical() else self.swapped()

    def as_arrays(self):
        return (
            np.array([self.prevalence]),
            np.array([self.sensitivity]),
            np.array([self.specificity]),
        )


@dataclass(frozen=True)
class EmTrace:
    iterations: int
    log_likelihoods: tuple[float, ...]
    converged: bool
    stop_reason: str  # "param_tol", "loglik_tol" or "max_iter"


# -- batched EM core ---------------------------------------------------------
# Shapes: patterns (P, R); counts (B, P); prevalence (B,); se, sp (B, R).


def _estep(pos, neg, counts, prev, se, sp):
    """Posterior positive-class weight per pattern and the log-likelihood per row."""
    log_a = np.log(prev)[:, None] + (
        pos[None] * np.log(se)[:, None, :] + neg[None] * np.log1p(-se)[:, None, :]
    ).sum(axis=2)
    log_b = np.log1p(-prev)[:, None] + (
        pos[None] * np.log1p(-sp)[:, None, :] + neg[None] * np.log(sp)[:, None, :]
    ).sum(axis=2)
    log_mix = np.logaddexp(log_a, log_b)
    w = np.exp(log_a - log_mix)
    return w, (counts * log_mix).sum(axis=1)


def _mstep(pos, neg, present, counts, w, se_old, sp_old):
    cw = counts * w
    cnw = counts * (1.0 - w)
    prev = cw.sum(axis=1) / counts.sum(axis=1)
    se_num = (cw[:, :, None] * pos[None]).sum(axis=1)
    se_den = (cw[:, :, None] * present[None]).sum(axis=1)
    sp_num = (cnw[:, :, None] * neg[None]).sum(axis=1)
    sp_den = (cnw[:, :, None] * present[None]).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(se_den > 0, se_num / se_den, se_old)
        sp = np.where(sp_den > 0, sp_num / sp_den, sp_old)
    return (
        np.clip(prev, EPS, 1.0 - EPS),
        np.clip(se, EPS, 1.0 - EPS),
        np.clip(sp, EPS, 1.0 - EPS),
    )


def _indicators(patterns):
    pos = (patterns == POSITIVE).astype(float)
    neg = (patterns == NEGATIVE).astype(float)
    return pos, neg, pos + neg


def _majority_weights(patterns, batch):
    npos = (patterns == POSITIVE).sum(axis=1)
    nneg = (patterns == NEGATIVE).sum(axis=1)
    w = np.where(npos > nneg, 1.0, np.where(npos < nneg, 0.0, 0.5))
    return np.broadcast_to(w, (batch, len(w)))


def _canonicalize(prev, se, sp):
    flip = (se + sp).mean(axis=1) < 1.0
    prev = np.where(flip, 1.0 - prev, prev)
    se2 = np.where(flip[:, None], 1.0 - sp, se)
    sp2 = np.where(flip[:, None], 1.0 - se, sp)
    return prev, se2, sp2


def _em_batch(
    patterns,
    counts,
    init=None,
    param_tol=PARAM_TOL,
    loglik_tol=LOGLIK_TOL,
    max_iter=MAX_ITER,
    record=False,
):
    """Run EM on each row of ``counts``; converged rows are frozen.

    ``init`` is ``(prev, se, sp)`` arrays, or None for a majority-vote start.
    Returns canonical ``prev, se, sp, loglik, iterations, stop_reason`` per
    row, plus the log-likelihood path of row 0 when ``record`` is set.
    """
    counts = np.asarray(counts, dtype=float)
    B = counts.shape[0]
    pos, neg, present = _indicators(patterns)
    R = patterns.shape[1]
    if init is None:
        w0 = _majority_weights(patterns, B)
        half = np.full((B, R), 0.5)
        prev, se, sp = _mstep(pos, neg, present, counts, w0, half, half)
    else:
        prev, se, sp = (np.array(np.broadcast_to(a, s), dtype=float) for a, s in zip(init, ((B,), (B, R), (B, R))))
        prev = np.clip(prev, EPS, 1 - EPS)
        se = np.clip(se, EPS, 1 - EPS)
        sp = np.clip(sp, EPS, 1 - EPS)

    w, ll = _estep(pos, neg, counts, prev, se, sp)
    iters = np.zeros(B, dtype=np.int64)
    reason = np.array(["max_iter"] * B, dtype=object)
    active = np.ones(B, dtype=bool)
    path = [float(ll[0])] if record else None

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        c = counts[idx]
        n_prev, n_se, n_sp = _mstep(pos, neg, present, c, w[idx], se[idx], sp[idx])
        n_w, n_ll = _estep(pos, neg, c, n_prev, n_se, n_sp)
        step = np.maximum(
            np.abs(n_prev - prev[idx]),
            np.maximum(np.abs(n_se - se[idx]).max(axis=1), np.abs(n_sp - sp[idx]).max(axis=1)),
        )
        rel = np.abs(n_ll - ll[idx]) / np.maximum(np.abs(ll[idx]), np.finfo(float).tiny)
        prev[idx], se[idx], sp[idx], w[idx], ll[idx] = n_prev, n_se, n_sp, n_w, n_ll
        iters[idx] += 1
        if record and active[0]:
            path.append(float(n_ll[0]))
        by_param = step < param_tol
        by_ll = (rel < loglik_tol) & ~by_param
        reason[idx[by_param]] = "param_tol"
        reason[idx[by_ll]] = "loglik_tol"
        active[idx[by_param | by_ll]] = False

    prev, se, sp = _canonicalize(prev, se, sp)
    return prev, se, sp, ll, iters, reason, path


def _check(data: VotePatternTable, check_identifiability: bool):
    R = data.n_raters
    if check_identifiability and not (2 * R + 1 <= 2**R - 1):
        raise IdentifiabilityError(
            f"{R} raters give {2**R - 1} degrees of freedom for {2 * R + 1} parameters; "
            "at least 3 raters are needed (pass check_identifiability=False to override)"
        )
    empty = [r for r, col in zip(data.raters, data.patterns.T) if (col == ABSENT).all()]
    if empty:
        raise InputError(f"rater(s) with no votes: {', '.join(empty)}")


def log_likelihood(model: LatentClassModel, data: VotePatternTable) -> float:
    """Observed-data log-likelihood of the vote patterns under ``model``."""
    if model.raters and len(model.sensitivity) != data.n_raters:
        raise InputError("model and data have different numbers of raters")
    pos, neg, _ = _indicators(data.patterns)
    prev, se, sp = model.as_arrays()
    _, ll = _estep(pos, neg, data.counts[None].astype(float), prev, se, sp)
    return float(ll[0])


def posterior(model: LatentClassModel, data: VotePatternTable) -> np.ndarray:
    """Posterior probability that each pattern's visits are truly positive."""
    pos, neg, _ = _indicators(data.patterns)
    prev, se, sp = model.as_arrays()
    w, _ = _estep(pos, neg, data.counts[None].astype(float), prev, se, sp)
    return w[0]


def em_step(model: LatentClassModel, data: VotePatternTable) -> LatentClassModel:
    """One E-step followed by one M-step (no canonicalization)."""
    pos, neg, present = _indicators(data.patterns)
    prev, se, sp = model.as_arrays()
    c = data.counts[None].astype(float)
    w, _ = _estep(pos, neg, c, prev, se, sp)
    p2, se2, sp2 = _mstep(pos, neg, present, c, w, se, sp)
    return LatentClassModel(p2[0], se2[0], sp2[0], data.raters)


def em_fit(
    data: VotePatternTable,
    init: LatentClassModel | None = None,
    *,
    param_tol: float = PARAM_TOL,
    loglik_tol: float = LOGLIK_TOL,
    max_iter: int = MAX_ITER,
    restarts: int = 0,
    seed: int = 0,
    check_identifiability: bool = True,
) -> tuple[LatentClassModel, EmTrace]:
    """Maximum-likelihood prevalence and per-rater sensitivity/specificity.

    Starts from ``init`` or, by default, from the majority vote of each
    pattern. With ``restarts > 0``, that many extra random starts are run
    and the fit with the highest log-likelihood is kept. Iteration stops
    when no parameter moves by ``param_tol`` or more, when the relative
    log-likelihood change drops below ``loglik_tol``, or after ``max_iter``
    iterations. The returned model is in canonical orientation (mean
    se + sp >= 1).
    """
    _check(data, check_identifiability)
    start = None if init is None else init.as_arrays()
    best = _em_batch(data.patterns, data.counts[None], start, param_tol, loglik_tol, max_iter, record=True)
    if restarts > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xE5,)))
        R = data.n_raters
        for _ in range(restarts):
            guess = (
                rng.uniform(0.05, 0.95, size=1),
                rng.uniform(0.5, 0.99, size=(1, R)),
                rng.uniform(0.5, 0.99, size=(1, R)),
            )
            fit = _em_batch(data.patterns, data.counts[None], guess, param_tol, loglik_tol, max_iter, record=True)
            if fit[3][0] > best[3][0] + 1e-9:
                best = fit
    prev, se, sp, _, iters, reason, path = best
    model = LatentClassModel(prev[0], se[0], sp[0], data.raters)
    trace = EmTrace(int(iters[0]), tuple(path), reason[0] != "max_iter", str(reason[0]))
    return model, trace


@dataclass(frozen=True)
class EmIntervals:
    prevalence: IntervalEstimate
    sensitivity: dict[str, IntervalEstimate]
    specificity: dict[str, IntervalEstimate]
    n_nonconverged: int
    replicates: int


def em_bootstrap_ci(
    data: VotePatternTable,
    spec: BootstrapSpec,
    fit: LatentClassModel | None = None,
    *,
    workers: int = 1,
    param_tol: float = PARAM_TOL,
    loglik_tol: float = LOGLIK_TOL,
    max_iter: int = MAX_ITER,
    check_identifiability: bool = True,
) -> EmIntervals:
    """Percentile intervals for every latent class parameter.

    Each replicate resamples visits with replacement (drawn as multinomial
    counts over the observed patterns), refits EM starting from the
    full-data fit and canonicalizes the result. Replicates that hit
    ``max_iter`` are dropped; more than 1% of them raises ConvergenceError.
    """
    _check(data, check_identifiability)
    if fit is None:
        fit, _ = em_fit(
            data, param_tol=param_tol, loglik_tol=loglik_tol, max_iter=max_iter,
            check_identifiability=check_identifiability,
        )
    N = data.total
    probs = data.counts / N
    init = fit.as_arrays()

    def block(start, rngs):
        counts = np.stack([g.multinomial(N, probs) for g in rngs])
        prev, se, sp, _, _, reason, _ = _em_batch(
            data.patterns, counts, init, param_tol, loglik_tol, max_iter
        )
        return [
            None if reason[i] == "max_iter" else (prev[i], se[i], sp[i])
            for i in range(len(rngs))
        ]

    reps = run_blocks(block, spec.replicates, spec.seed, workers, BLOCK)
    failed = sum(r is None for r in reps)
    if failed > FAILURE_BUDGET * spec.replicates:
        raise ConvergenceError(
            f"{failed} of {spec.replicates} bootstrap refits did not converge in {max_iter} iterations"
        )
    ok = [r for r in reps if r is not None]

    def interval(est, values):
        iv = percentile_interval(est, values, spec.confidence)
        return IntervalEstimate(iv.estimate, iv.lower, iv.upper, iv.n_valid_replicates, failed)

    return EmIntervals(
        prevalence=interval(fit.prevalence, [float(r[0]) for r in ok]),
        sensitivity={
            rid: interval(fit.sensitivity[j], [float(r[1][j]) for r in ok])
            for j, rid in enumerate(data.raters)
        },
        specificity={
            rid: interval(fit.specificity[j], [float(r[2][j]) for r in ok])
            for j, rid in enumerate(data.raters)
        },
        n_nonconverged=failed,
        replicates=spec.replicates,
    )
