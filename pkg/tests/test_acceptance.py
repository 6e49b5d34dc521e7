"""Acceptance gate: one test per criterion, each at its stated tolerance.

``pytest`` prints a PASS/FAIL line per criterion in the terminal summary.
"""

import itertools
import json
import time

import numpy as np
import pytest

from conftest import SUPP_TABLE_1, TABLE_2, TABLE_3, panel_from_patterns
from panelval.calibration import (
    ProbabilitySeries,
    bias_corrected_calibration,
    brier,
    c_index,
)
from panelval.cli import main
from panelval.consensus import fleiss_kappa_counts, majority_reference
from panelval.data import life_stage
from panelval.latent import (
    VotePatternTable,
    em_bootstrap_ci,
    em_fit,
    log_likelihood,
    LatentClassModel,
)
from panelval.metrics import bootstrap_metrics, compute_metrics
from panelval.resampling import BootstrapSpec, power_simulation
from panelval.simulate import PanelDesign, simulate_calibrated, simulate_votes

criterion = pytest.mark.criterion

TRUE_PREV = 0.25
TRUE_SE = (0.95, 0.90, 0.85)
TRUE_SP = (0.97, 0.95, 0.93)
RATERS = ("r1", "r2", "r3")


def best_time(fn, repeat=50):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


# -- 1 ------------------------------------------------------------------------------


@criterion(1, "metric reproduction from the Table 2 counts")
def test_c1_metric_reproduction():
    m = compute_metrics(TABLE_2).to_dict()
    for name, (est, _, _) in TABLE_3.items():
        assert abs(m[name] - est) <= 0.005, (name, m[name], est)
    assert best_time(lambda: compute_metrics(TABLE_2)) < 1e-3


# -- 2 ------------------------------------------------------------------------------


@criterion(2, "Fleiss kappa on the Supplemental Table 1 patterns")
def test_c2_kappa_reproduction():
    counts = [[v.count("Wellness"), v.count("Other")] for v, _, _ in SUPP_TABLE_1]
    weights = [n for _, n, _ in SUPP_TABLE_1]
    assert sum(weights) == 636
    k = fleiss_kappa_counts(counts, weights)
    assert abs(k - 0.909) <= 0.001
    assert best_time(lambda: fleiss_kappa_counts(counts, weights)) < 10e-3


# -- 3 ------------------------------------------------------------------------------


@criterion(3, "majority consensus matches every published reference label")
def test_c3_consensus_reproduction():
    ref = majority_reference(panel_from_patterns([(v, 1) for v, _, _ in SUPP_TABLE_1]))
    assert list(ref.labels) == [lab for _, _, lab in SUPP_TABLE_1]


# -- 4 ------------------------------------------------------------------------------


@criterion(4, "2000-replicate bootstrap CIs agree with Table 3 across 5 seeds")
def test_c4_bootstrap_agreement():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(5):
        ivs = bootstrap_metrics(TABLE_2, BootstrapSpec(2000, seed))
        for name, (_, lo, hi) in TABLE_3.items():
            iv = ivs[name]
            dev = max(abs(iv.lower - lo), abs(iv.upper - hi))
            worst = max(worst, dev)
            assert dev <= 0.02, (seed, name, iv.lower, iv.upper, lo, hi)
    assert time.perf_counter() - t0 < 10.0
    print(f"worst endpoint deviation {worst:.4f}")


# -- 5 ------------------------------------------------------------------------------


def _random_panel(seed, n=300):
    rng = np.random.default_rng(seed)
    design = PanelDesign(
        prevalence=float(rng.uniform(0.1, 0.9)),
        raters=[tuple(rng.uniform(0.55, 0.99, 2)) for _ in range(3)],
        n=n,
        seed=seed,
    )
    return VotePatternTable.from_votes(RATERS, simulate_votes(design)[1])


def _true_panel(n, seed):
    design = PanelDesign(TRUE_PREV, tuple(zip(TRUE_SE, TRUE_SP)), n, seed)
    return VotePatternTable.from_votes(RATERS, simulate_votes(design)[1])


def _grid_max_loglik(data, grid):
    """Exhaustive maximum of the log-likelihood over grid^7 (prev, se1..3, sp1..3)."""
    pats, counts = data.patterns, data.counts.astype(float)
    g = np.asarray(grid)
    best = -np.inf
    # factor tables: A[j][k, a] = P(vote of rater j in pattern k | positive, se = g[a])
    A = [np.where(pats[:, j, None] == 1, g[None], 1 - g[None]) for j in range(3)]
    B = [np.where(pats[:, j, None] == 0, g[None], 1 - g[None]) for j in range(3)]
    pos = A[0][:, :, None, None] * A[1][:, None, :, None] * A[2][:, None, None, :]  # (K, s1, s2, s3)
    neg = B[0][:, :, None, None] * B[1][:, None, :, None] * B[2][:, None, None, :]
    for prev in g:
        lik = prev * pos[..., None, None, None] + (1 - prev) * neg[:, None, None, None]
        ll = np.tensordot(counts, np.log(lik), axes=1)
        best = max(best, float(ll.max()))
    return best


@criterion(5, "EM: monotone likelihood, recovery, grid oracle, bootstrap coverage")
def test_c5_em_properties():
    t0 = time.perf_counter()

    # (a) monotone non-decreasing log-likelihood on 100 random panels
    for seed in range(100):
        _, trace = em_fit(_random_panel(seed))
        lls = np.array(trace.log_likelihoods)
        assert np.all(np.diff(lls) >= -1e-9 * np.abs(lls[:-1])), seed

    # (b) recovery on the n = 50,000 panel
    model, trace = em_fit(_true_panel(50_000, seed=11))
    assert trace.converged
    assert abs(model.prevalence - TRUE_PREV) <= 0.01
    assert np.all(np.abs(np.array(model.sensitivity) - TRUE_SE) <= 0.01)
    assert np.all(np.abs(np.array(model.specificity) - TRUE_SP) <= 0.01)

    # (c) EM maximum at least the brute-force grid maximum on a tiny instance
    tiny = VotePatternTable.from_rows(
        RATERS,
        [(p, c) for p, c in zip(itertools.product((1, 0), repeat=3), (9, 2, 3, 1, 2, 1, 3, 19))],
    )
    fit, _ = em_fit(tiny)
    grid = np.linspace(0.05, 0.95, 11)
    assert log_likelihood(fit, tiny) >= _grid_max_loglik(tiny, grid) - 1e-6

    # (d) 95% intervals cover the truth in >= 90 of 100 trials, per parameter
    hits = np.zeros(7, dtype=int)
    truth = np.r_[TRUE_PREV, TRUE_SE, TRUE_SP]
    for trial in range(100):
        data = _true_panel(5000, seed=10_000 + trial)
        ivs = em_bootstrap_ci(data, BootstrapSpec(2000, trial))
        los = [ivs.prevalence.lower] + [ivs.sensitivity[r].lower for r in RATERS] + [ivs.specificity[r].lower for r in RATERS]
        his = [ivs.prevalence.upper] + [ivs.sensitivity[r].upper for r in RATERS] + [ivs.specificity[r].upper for r in RATERS]
        hits += (np.array(los) <= truth) & (truth <= np.array(his))
    print("coverage per parameter (prev, se1..3, sp1..3):", hits.tolist())
    assert np.all(hits >= 90), hits.tolist()

    assert time.perf_counter() - t0 < 120.0


def test_grid_oracle_agrees_with_direct_evaluation():
    # spot-check the vectorized oracle against log_likelihood on a few grid points
    tiny = VotePatternTable.from_rows(RATERS, [((1, 1, 0), 3), ((0, 0, 0), 5), ((1, 0, 1), 2)])
    grid = np.array([0.2, 0.7])
    direct = max(
        log_likelihood(LatentClassModel(p, [a, b, c], [d, e, f]), tiny)
        for p, a, b, c, d, e, f in itertools.product(grid, repeat=7)
    )
    assert _grid_max_loglik(tiny, grid) == pytest.approx(direct, abs=1e-12)


# -- 6 ------------------------------------------------------------------------------


def _brute_c(p, y):
    pos, neg = p[y == 1], p[y == 0]
    return ((pos[:, None] > neg).sum() + 0.5 * (pos[:, None] == neg).sum()) / (pos.size * neg.size)


@criterion(6, "calibration on perfectly calibrated data, exact C index, constant-rate Brier")
def test_c6_calibration_properties():
    t0 = time.perf_counter()
    rep = bias_corrected_calibration(simulate_calibrated(5000, seed=0), BootstrapSpec(2000, 0))
    print(
        f"corrected slope {rep.corrected_slope:.4f} intercept {rep.corrected_intercept:.4f} "
        f"emax {rep.emax:.4f}"
    )
    assert 0.95 <= rep.corrected_slope <= 1.05
    assert -0.05 <= rep.corrected_intercept <= 0.05
    assert rep.emax <= 0.03

    rng = np.random.default_rng(0)
    for n in range(2, 201):
        p = rng.integers(0, 20, n) / 19 if n % 2 else rng.random(n)
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        assert c_index(ProbabilitySeries(p, y)) == _brute_c(p, y), n

    for n, k in [(10, 3), (622, 145), (1, 0), (7, 7)]:
        y = np.r_[np.ones(k), np.zeros(n - k)]
        r = k / n
        assert brier(ProbabilitySeries(np.full(n, r), y)) == pytest.approx(r * (1 - r), abs=1e-12)

    assert time.perf_counter() - t0 < 30.0


# -- 7 ------------------------------------------------------------------------------


@criterion(7, "power simulation half-widths at n = 400 and n = 622")
def test_c7_power_sanity():
    t0 = time.perf_counter()
    r400 = power_simulation(0.862, 0.935, 0.233, 400, 2000, 0.06, seed=0)
    r622 = power_simulation(0.862, 0.935, 0.233, 622, 2000, 0.06, seed=0)
    assert abs(r400.mean_halfwidth_sensitivity - 0.070) <= 0.005
    assert abs(r622.mean_halfwidth_sensitivity - 0.056) <= 0.005
    assert time.perf_counter() - t0 < 5.0


# -- 8 ------------------------------------------------------------------------------


@criterion(8, "stochastic subcommands are byte-identical at parallelism 1 and 8")
def test_c8_determinism(tmp_path):
    d = tmp_path
    # the second run reuses every path, so compare snapshots taken after each run
    runs = [
        ["simulate", "--prevalence", "0.25", "--rater", "0.95:0.97", "--rater", "0.90:0.95",
         "--rater", "0.85:0.93", "--n", "600", "--seed", "21", "--out", str(d / "panel.csv"),
         "--truth", str(d / "truth.csv"), "--predictions", str(d / "preds.csv")],
        ["validate", "--predictions", str(d / "preds.csv"), "--annotations", str(d / "panel.csv"),
         "--boot", "500", "--seed", "3", "--plot", str(d / "metrics.svg"), "--out", str(d / "validate.json")],
        ["em", "--annotations", str(d / "panel.csv"), "--boot", "300", "--seed", "4", "--restarts", "2",
         "--out", str(d / "em.json")],
        ["calibrate", "--predictions", str(d / "preds.csv"), "--annotations", str(d / "panel.csv"),
         "--boot", "300", "--seed", "5", "--curve", str(d / "curve.csv"), "--plot", str(d / "cal.svg"),
         "--out", str(d / "calibrate.json")],
        ["power", "--sens", "0.862", "--spec", "0.935", "--prevalence", "0.233", "--n", "622",
         "--sims", "200", "--mode", "bootstrap", "--boot", "100", "--seed", "6", "--out", str(d / "power.json")],
    ]
    snapshots = {}
    for w in (1, 8):
        for argv in runs:
            assert main(argv + ["--workers", str(w)]) == 0, argv[0]
        snapshots[w] = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    assert set(snapshots[1]) == {
        "panel.csv", "truth.csv", "preds.csv", "validate.json", "metrics.svg", "em.json",
        "calibrate.json", "curve.csv", "cal.svg", "power.json",
    }
    for name, payload in snapshots[1].items():
        assert payload == snapshots[8][name], name
    for name in ("validate.json", "em.json", "calibrate.json", "power.json"):
        assert json.loads(snapshots[1][name])["seed"] is not None


# -- 9 ------------------------------------------------------------------------------

# (species, upper bound of each closed-above interval) from the Table 1 footnote
FOOTNOTE = {
    "canine": [(1, "juvenile"), (4, "young_adult"), (7, "mature_adult"), (10, "senior"), (float("inf"), "geriatric")],
    "feline": [(1, "juvenile"), (2, "young_adult"), (10, "mature_adult"), (15, "senior"), (float("inf"), "geriatric")],
}


def _footnote_stage(species, age):
    return next(stage for upper, stage in FOOTNOTE[species] if age <= upper)


@criterion(9, "life stages reproduce the Table 1 footnote intervals")
def test_c9_life_stage():
    ages = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.5, 7.0, 8.0, 10.0, 12.0, 15.0, 16.0, 25.0]
    for species in FOOTNOTE:
        for age in ages:
            assert life_stage(species, age) == _footnote_stage(species, age), (species, age)
        for age in (1, 2, 4, 7, 10, 15):
            assert life_stage(species, float(age)) == _footnote_stage(species, age)
            assert life_stage(species, age + 1e-9) == _footnote_stage(species, age + 1e-9)
        assert life_stage(species, None) == "unknown"
