"""Majority-consensus reference labels and inter-rater agreement."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import BINARY, MISSING, AnnotationTable, LabelScheme, csv_rows
from .errors import InputError

DEFAULT_QUALIFICATION_THRESHOLD = 0.85


@dataclass(frozen=True)
class ReferenceLabeling:
    """Per-visit consensus label, vote counts and unanimity flag.

    ``labels[i]`` is ``None`` when no label holds a strict majority of the
    votes cast on visit ``i``.
    """

    scheme: LabelScheme
    visit_ids: tuple[str, ...]
    labels: tuple[str | None, ...]
    vote_counts: tuple[dict[str, int], ...]
    unanimous: tuple[bool, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.visit_ids)})

    def __len__(self):
        return len(self.visit_ids)

    def get(self, visit_id: str) -> str | None:
        i = self._index.get(visit_id)
        return None if i is None else self.labels[i]

    def __contains__(self, visit_id):
        return visit_id in self._index

    def as_mapping(self) -> dict[str, str]:
        """Visits that reached consensus, mapped to their reference label."""
        return {v: lab for v, lab in zip(self.visit_ids, self.labels) if lab is not None}

    @property
    def n_no_consensus(self) -> int:
        return sum(lab is None for lab in self.labels)

    @classmethod
    def from_labels(cls, labels: Mapping[str, str], scheme: LabelScheme = BINARY) -> "ReferenceLabeling":
        """Wrap a plain visit -> label mapping (no vote information)."""
        vids = tuple(labels)
        norm = tuple(scheme.normalize(labels[v]) for v in vids)
        return cls(
            scheme,
            vids,
            norm,
            tuple({c: int(c == lab) for c in scheme.classes} for lab in norm),
            tuple(True for _ in vids),
        )


def majority_reference(table: AnnotationTable) -> ReferenceLabeling:
    """Reference label = the label with strictly more than half the present votes.

    Ties and pluralities short of a majority give no consensus; they are
    reported, never broken.
    """
    counts = table.category_counts()
    present = counts.sum(axis=1)
    classes = table.scheme.classes
    labels = []
    for row, n in zip(counts, present):
        top = int(np.argmax(row))
        labels.append(classes[top] if 2 * row[top] > n else None)
    votes = tuple({c: int(row[j]) for j, c in enumerate(classes)} for row in counts)
    unanimous = tuple(bool(row.max() == n) for row, n in zip(counts, present))
    return ReferenceLabeling(table.scheme, table.visit_ids, tuple(labels), votes, unanimous)


REFERENCE_HEADER = ("visit_id", "reference_label")


def reference_rows(ref: ReferenceLabeling) -> tuple[tuple[str, ...], list[tuple]]:
    """Header and rows of the reference export CSV."""
    header = REFERENCE_HEADER + ("unanimous",) + tuple(f"votes_{c.lower()}" for c in ref.scheme.classes)
    rows = [
        (v, lab or "", str(un).lower(), *(votes.get(c, 0) for c in ref.scheme.classes))
        for v, lab, votes, un in zip(ref.visit_ids, ref.labels, ref.vote_counts, ref.unanimous)
    ]
    return header, rows


def serialize_reference(ref: ReferenceLabeling) -> str:
    header, rows = reference_rows(ref)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def parse_reference(path, scheme: LabelScheme = BINARY) -> ReferenceLabeling:
    """Read a reference CSV. Only ``visit_id,reference_label`` are required;
    an empty reference label means no consensus."""
    vids, labels, votes, unanimous = [], [], [], []
    seen = set()
    for line, rec, row in csv_rows(path, REFERENCE_HEADER):
        vid = rec.get("visit_id", "")
        if not vid:
            raise InputError(f"{path}:{line}: empty visit_id")
        if vid in seen:
            raise InputError(f"{path}:{line}: duplicate visit {vid!r}")
        seen.add(vid)
        raw = rec.get("reference_label", "")
        try:
            lab = scheme.normalize(raw) if raw else None
        except InputError as e:
            raise InputError(f"{path}:{line}: {e}") from None
        vc = {}
        for c in scheme.classes:
            text = rec.get(f"votes_{c.lower()}", "")
            if text:
                try:
                    vc[c] = int(text)
                except ValueError:
                    raise InputError(f"{path}:{line}: votes_{c.lower()} {text!r} is not an integer") from None
        vids.append(vid)
        labels.append(lab)
        votes.append(vc)
        unanimous.append(rec.get("unanimous", "").lower() == "true")
    if not vids:
        raise InputError(f"{path}: no reference rows")
    return ReferenceLabeling(scheme, tuple(vids), tuple(labels), tuple(votes), tuple(unanimous))


def exact_match_rate(table: AnnotationTable) -> float:
    """Share of fully annotated visits on which every rater chose the same label."""
    if table.n_raters < 2:
        raise InputError("exact match needs at least 2 raters")
    full = (table.codes != MISSING).all(axis=1)
    if not full.any():
        raise InputError("no visit was labelled by every rater")
    codes = table.codes[full]
    same = (codes == codes[:, :1]).all(axis=1)
    return float(same.sum() / full.sum())


def fleiss_kappa_counts(counts, weights=None) -> float | None:
    """Fleiss' kappa from a subjects x categories count matrix.

    Every row must sum to the same number of ratings k >= 2. ``weights``
    gives a multiplicity per row, so a table of distinct vote patterns
    with their frequencies gives the same value as the expanded table.
    Returns ``None`` when chance agreement is 1 (only one category used).
    """
    n = np.asarray(counts, dtype=float)
    if n.ndim != 2 or n.shape[0] == 0:
        raise InputError("kappa needs a non-empty subjects x categories matrix")
    w = np.ones(n.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    k = n.sum(axis=1)
    if not np.all(k == k[0]) or k[0] < 2:
        raise InputError("every subject needs the same number (>= 2) of ratings")
    k = k[0]
    N = w.sum()
    p_i = ((n**2).sum(axis=1) - k) / (k * (k - 1))
    p_bar = (w * p_i).sum() / N
    p_j = (w[:, None] * n).sum(axis=0) / (N * k)
    p_e = (p_j**2).sum()
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-15):
        return None
    return float((p_bar - p_e) / (1.0 - p_e))


def fleiss_kappa(table: AnnotationTable) -> float | None:
    """Fleiss' kappa over the visits rated by every rater.

    Visits with a missing vote are left out; see :func:`agreement_report`
    for the excluded count.
    """
    full = (table.codes != MISSING).all(axis=1)
    if not full.any():
        raise InputError("no visit was labelled by every rater")
    return fleiss_kappa_counts(table.category_counts()[full])


def rater_match_rates(table: AnnotationTable, reference) -> dict[str, float]:
    """Per rater, the share of their votes that equal the visit's reference label.

    ``reference`` is a :class:`ReferenceLabeling` or a plain visit -> label
    mapping. Visits without a reference label do not count.
    """
    if isinstance(reference, ReferenceLabeling):
        ref = reference.as_mapping()
    else:
        ref = {v: table.scheme.normalize(lab) for v, lab in reference.items() if lab is not None}
    ref_codes = np.array(
        [table.scheme.classes.index(ref[v]) if v in ref else MISSING for v in table.visit_ids]
    )
    rates = {}
    for j, r in enumerate(table.raters):
        col = table.codes[:, j]
        mask = (col != MISSING) & (ref_codes != MISSING)
        if not mask.any():
            raise InputError(f"rater {r!r} has no votes on visits with a reference label")
        rates[r] = float((col[mask] == ref_codes[mask]).mean())
    return rates


def qualification_gate(rate: float, threshold: float = DEFAULT_QUALIFICATION_THRESHOLD) -> bool:
    if not (0.0 <= rate <= 1.0):
        raise InputError(f"match rate {rate} outside [0, 1]")
    return rate >= threshold


@dataclass
class AgreementReport:
    n_visits: int
    n_complete: int
    exact_match_rate: float | None
    fleiss_kappa: float | None
    n_kappa_excluded: int
    n_no_consensus: int
    per_rater_match: dict[str, float]


def agreement_report(table: AnnotationTable) -> AgreementReport:
    ref = majority_reference(table)
    complete = int((table.codes != MISSING).all(axis=1).sum())
    return AgreementReport(
        n_visits=table.n_visits,
        n_complete=complete,
        exact_match_rate=exact_match_rate(table) if complete and table.n_raters >= 2 else None,
        fleiss_kappa=fleiss_kappa(table) if complete and table.n_raters >= 2 else None,
        n_kappa_excluded=table.n_visits - complete,
        n_no_consensus=ref.n_no_consensus,
        per_rater_match=rater_match_rates(table, ref),
    )
