from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import SUPP_TABLE_1, O, W, panel_from_patterns
from panelval.consensus import (
    ReferenceLabeling,
    agreement_report,
    exact_match_rate,
    fleiss_kappa,
    fleiss_kappa_counts,
    majority_reference,
    parse_reference,
    qualification_gate,
    rater_match_rates,
    serialize_reference,
)
from panelval.data import BINARY, EXTENDED, AnnotationTable
from panelval.errors import InputError


def kappa_oracle(rows):
    """Fleiss' kappa by exact rational arithmetic over (category counts, multiplicity) rows."""
    k = sum(rows[0][0])
    N = sum(m for _, m in rows)
    p_bar = sum(Fraction(sum(c * c for c in n) - k, k * (k - 1)) * m for n, m in rows) / N
    cats = len(rows[0][0])
    p_j = [Fraction(sum(n[j] * m for n, m in rows), N * k) for j in range(cats)]
    p_e = sum(p * p for p in p_j)
    return (p_bar - p_e) / (1 - p_e)


SUPP_KAPPA = kappa_oracle(
    [((v.count(W), v.count(O)), n) for v, n, _ in SUPP_TABLE_1]
)


def test_kappa_oracle_matches_published_fractions():
    p_bar = Fraction(614, 636)
    p_e = Fraction(488, 1908) ** 2 + Fraction(1420, 1908) ** 2
    assert SUPP_KAPPA == (p_bar - p_e) / (1 - p_e)
    assert float(SUPP_KAPPA) == pytest.approx(0.909, abs=5e-4)


def test_majority_on_supplemental_patterns():
    for votes, _, expected in SUPP_TABLE_1:
        t = panel_from_patterns([(votes, 1)])
        ref = majority_reference(t)
        assert ref.labels == (expected,)
        assert ref.unanimous == (len(set(votes)) == 1,)


def test_majority_tie_is_no_consensus():
    t = panel_from_patterns([((W, O), 1)], raters=("a", "b"))
    ref = majority_reference(t)
    assert ref.labels == (None,)
    assert ref.vote_counts == ({"Wellness": 1, "Other": 1},)
    assert ref.n_no_consensus == 1


def test_majority_plurality_is_not_majority():
    cells = {("v", "a"): "Boarding", ("v", "b"): "Boarding", ("v", "c"): "Retail", ("v", "d"): "Wellness"}
    ref = majority_reference(AnnotationTable.from_cells(cells, EXTENDED))
    assert ref.labels == (None,)


def test_majority_sparse_uses_present_votes():
    cells = {("v", "a"): "Wellness", ("v", "b"): "Wellness", ("u", "a"): "Other"}
    ref = majority_reference(AnnotationTable.from_cells(cells, BINARY))
    assert ref.labels == ("Wellness", "Other")
    assert ref.unanimous == (True, True)


@given(st.lists(st.lists(st.sampled_from([0, 1]), min_size=3, max_size=3), min_size=1, max_size=30), st.permutations([0, 1, 2]))
def test_majority_permutation_invariant(rows, perm):
    codes = np.array(rows)
    t1 = AnnotationTable([f"v{i}" for i in range(len(rows))], ["a", "b", "c"], codes, BINARY)
    t2 = AnnotationTable(t1.visit_ids, [t1.raters[j] for j in perm], codes[:, perm], BINARY)
    assert majority_reference(t1).labels == majority_reference(t2).labels


def test_exact_match_supplemental(supp_panel):
    assert exact_match_rate(supp_panel) == pytest.approx(603 / 636)
    assert round(exact_match_rate(supp_panel), 4) == 0.9481


def test_exact_match_small_cases():
    assert exact_match_rate(panel_from_patterns([((W, W, W), 3), ((O, O, O), 2)])) == 1.0
    assert exact_match_rate(panel_from_patterns([((W, W), 1), ((W, O), 1)], raters=("a", "b"))) == 0.5


def test_exact_match_ignores_incomplete_visits():
    cells = {("v1", "a"): "Wellness", ("v1", "b"): "Wellness", ("v2", "a"): "Other"}
    assert exact_match_rate(AnnotationTable.from_cells(cells, BINARY)) == 1.0


def test_exact_match_errors():
    with pytest.raises(InputError):
        exact_match_rate(panel_from_patterns([((W,), 1)], raters=("a",)))
    cells = {("v1", "a"): "Wellness", ("v2", "b"): "Other"}
    with pytest.raises(InputError, match="every rater"):
        exact_match_rate(AnnotationTable.from_cells(cells, BINARY))


def test_kappa_supplemental(supp_panel):
    assert fleiss_kappa(supp_panel) == pytest.approx(float(SUPP_KAPPA), abs=1e-12)


def test_kappa_patterns_equal_expanded(supp_panel):
    counts = [[v.count(W), v.count(O)] for v, _, _ in SUPP_TABLE_1]
    weights = [n for _, n, _ in SUPP_TABLE_1]
    assert fleiss_kappa_counts(counts, weights) == pytest.approx(fleiss_kappa(supp_panel), abs=1e-12)


def test_kappa_small_cases():
    two = ("a", "b")
    assert fleiss_kappa(panel_from_patterns([((W, W), 1), ((O, O), 1)], raters=two)) == pytest.approx(1.0)
    chance = panel_from_patterns([((W, W), 1), ((W, O), 1), ((O, W), 1), ((O, O), 1)], raters=two)
    assert fleiss_kappa(chance) == pytest.approx(0.0, abs=1e-15)


def test_kappa_undefined_single_category():
    assert fleiss_kappa(panel_from_patterns([((W, W, W), 5)])) is None


def test_kappa_excludes_incomplete_visits():
    cells = {
        ("v1", "a"): "Wellness", ("v1", "b"): "Wellness",
        ("v2", "a"): "Other", ("v2", "b"): "Other",
        ("v3", "a"): "Wellness",
    }
    t = AnnotationTable.from_cells(cells, BINARY)
    assert fleiss_kappa(t) == pytest.approx(1.0)
    assert agreement_report(t).n_kappa_excluded == 1


@given(
    st.lists(st.lists(st.integers(0, 2), min_size=3, max_size=3), min_size=2, max_size=25),
    st.permutations([0, 1, 2]),
    st.permutations([0, 1, 2]),
)
def test_kappa_invariances(rows, rater_perm, label_perm):
    codes = np.array(rows)
    scheme = EXTENDED
    base = AnnotationTable([f"v{i}" for i in range(len(rows))], list("abc"), codes, scheme)
    k0 = fleiss_kappa(base)
    relabelled = AnnotationTable(base.visit_ids, base.raters, np.array(label_perm)[codes], scheme)
    permuted = AnnotationTable(base.visit_ids, [base.raters[j] for j in rater_perm], codes[:, rater_perm], scheme)
    for other in (fleiss_kappa(relabelled), fleiss_kappa(permuted)):
        if k0 is None:
            assert other is None
        else:
            assert other == pytest.approx(k0, abs=1e-12)
    if k0 is not None:
        as_rows = [(tuple(int((r == j).sum()) for j in range(5)), 1) for r in codes]
        assert k0 == pytest.approx(float(kappa_oracle(as_rows)), abs=1e-12)


def test_kappa_unanimous_with_two_categories_is_one():
    t = panel_from_patterns([((W, W, W), 4), ((O, O, O), 9)])
    assert fleiss_kappa(t) == pytest.approx(1.0)


def test_rater_match_supplemental(supp_panel):
    rates = rater_match_rates(supp_panel, majority_reference(supp_panel))
    assert rates == pytest.approx({"V1": 625 / 636, "V2": 630 / 636, "V3": 620 / 636})
    assert [round(r, 3) for r in rates.values()] == [0.983, 0.991, 0.975]


def test_rater_match_identity_and_complement():
    t = panel_from_patterns([((W, O), 3), ((O, W), 4)], raters=("a", "b"))
    ref = {v: t.label(i, 0) for i, v in enumerate(t.visit_ids)}
    rates = rater_match_rates(t, ref)
    assert rates == {"a": 1.0, "b": 0.0}


def test_rater_match_excludes_no_consensus():
    t = panel_from_patterns([((W, O), 1), ((W, W), 1)], raters=("a", "b"))
    assert rater_match_rates(t, majority_reference(t)) == {"a": 1.0, "b": 1.0}


def test_rater_match_no_countable_votes():
    t = panel_from_patterns([((W, O), 2)], raters=("a", "b"))
    with pytest.raises(InputError, match="no votes"):
        rater_match_rates(t, majority_reference(t))


@pytest.mark.parametrize("rate, passed", [(0.973, True), (0.85, True), (0.849, False), (1.0, True)])
def test_qualification_gate(rate, passed):
    assert qualification_gate(rate) is passed


def test_qualification_gate_range():
    with pytest.raises(InputError):
        qualification_gate(1.2)


def test_reference_csv_roundtrip(tmp_path, supp_panel):
    ref = majority_reference(supp_panel)
    text = serialize_reference(ref)
    assert text.splitlines()[0] == "visit_id,reference_label,unanimous,votes_wellness,votes_other"
    p = tmp_path / "ref.csv"
    p.write_text(text)
    back = parse_reference(p)
    assert back == ref


def test_reference_csv_minimal_columns(tmp_path):
    p = tmp_path / "ref.csv"
    p.write_text("visit_id,reference_label\nv1,wellness\nv2,\n")
    ref = parse_reference(p)
    assert ref.labels == ("Wellness", None)
    assert ref.as_mapping() == {"v1": "Wellness"}


def test_reference_from_labels():
    ref = ReferenceLabeling.from_labels({"a": "other", "b": "Wellness"})
    assert ref.get("a") == "Other" and "b" in ref and ref.get("zzz") is None


def test_agreement_report(supp_panel):
    rep = agreement_report(supp_panel)
    assert rep.n_visits == 636 and rep.n_complete == 636 and rep.n_no_consensus == 0
    assert rep.exact_match_rate == pytest.approx(603 / 636)
    assert rep.fleiss_kappa == pytest.approx(float(SUPP_KAPPA))
