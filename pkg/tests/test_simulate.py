import numpy as np
import pytest

from panelval.calibration import c_index
from panelval.consensus import majority_reference
from panelval.errors import InputError
from panelval.simulate import (
    PanelDesign,
    simulate_calibrated,
    simulate_panel,
    simulate_probabilities,
    simulate_votes,
    simulated_predictions,
    visit_ids,
)


def test_noiseless_raters_reproduce_truth():
    truth, table = simulate_panel(PanelDesign(0.3, [(1.0, 1.0)] * 3, 500, seed=1))
    ref = majority_reference(table)
    assert [lab == "Wellness" for lab in ref.labels] == [bool(t) for t in truth]


def test_single_rater_positive_rate():
    # 0.25 * 0.9 + 0.75 * 0.2
    _, votes = simulate_votes(PanelDesign(0.25, [(0.9, 0.8)], 100_000, seed=2))
    assert votes.mean() == pytest.approx(0.375, abs=0.005)


def test_conditional_independence():
    truth, votes = simulate_votes(PanelDesign(0.4, [(0.8, 0.7), (0.75, 0.9)], 50_000, seed=3))
    for cls in (0, 1):
        v = votes[truth == cls].astype(float)
        assert abs(np.cov(v[:, 0], v[:, 1])[0, 1]) < 0.005


def test_uninformative_probabilities():
    truth = np.random.default_rng(0).integers(0, 2, 10_000)
    s = simulate_probabilities(truth, ((1, 1), (1, 1)), seed=4)
    assert c_index(s) == pytest.approx(0.5, abs=0.02)


def test_separated_probabilities():
    truth = np.r_[np.ones(50), np.zeros(50)]
    s = simulate_probabilities(truth, ((50, 1), (1, 50)), seed=5)
    assert c_index(s) == 1.0


def test_determinism():
    d = PanelDesign(0.25, [(0.95, 0.97), (0.9, 0.95)], 200, seed=6)
    t1, a = simulate_panel(d)
    t2, b = simulate_panel(d)
    assert np.array_equal(t1, t2) and a == b
    truth = t1
    assert simulated_predictions(truth, seed=1) == simulated_predictions(truth, seed=1)


def test_predictions_threshold_and_ids():
    preds = simulated_predictions(np.array([1, 0, 1]), seed=0, threshold=0.5)
    assert [p.visit_id for p in preds] == visit_ids(3) == ["v000001", "v000002", "v000003"]
    for p in preds:
        assert (p.predicted_label == "Wellness") == (p.probability >= 0.5)


def test_calibrated_series_is_calibrated():
    s = simulate_calibrated(50_000, seed=0)
    bins = np.digitize(s.p, np.linspace(0, 1, 11))
    for b in np.unique(bins):
        m = bins == b
        if m.sum() > 500:
            assert s.y[m].mean() == pytest.approx(s.p[m].mean(), abs=0.03)


@pytest.mark.parametrize(
    "kwargs",
    [dict(prevalence=0.0), dict(prevalence=1.0), dict(n=0), dict(raters=[(0.0, 0.9)]), dict(raters=[])],
)
def test_design_validation(kwargs):
    args = dict(prevalence=0.3, raters=[(0.9, 0.9)], n=10)
    args.update(kwargs)
    with pytest.raises(InputError):
        PanelDesign(**args)
