"""Domain types and file ingestion for annotation panels, predictions and pets.

Three CSV layouts are read here:

* annotations: ``visit_id,rater_id,label`` (one row per visit and rater)
* predictions: ``visit_id,label,probability`` (probability may be empty)
* pets:        ``visit_id,species,sex,age_years`` (age may be empty)

Labels are matched case-insensitively after trimming whitespace and are
stored in the canonical casing of their :class:`LabelScheme`.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .resampling import quantile

ANNOTATION_HEADER = ("visit_id", "rater_id", "label")
PREDICTION_HEADER = ("visit_id", "label", "probability")
PET_HEADER = ("visit_id", "species", "sex", "age_years")

MISSING = -1


@dataclass(frozen=True)
class LabelScheme:
    """Ordered set of visit classes plus the class treated as positive."""

    name: str
    classes: tuple[str, ...]
    positive_class: str

    def __post_init__(self):
        lowered = [c.lower() for c in self.classes]
        if len(set(lowered)) != len(lowered):
            raise InputError(f"scheme {self.name!r} has duplicate classes")
        if len(lowered) < 2:
            raise InputError(f"scheme {self.name!r} needs at least 2 classes")
        if self.positive_class not in self.classes:
            raise InputError(f"positive class {self.positive_class!r} not in scheme")

    def normalize(self, raw: str) -> str:
        """Return the canonical spelling of ``raw`` or raise InputError."""
        key = raw.strip().lower()
        for c in self.classes:
            if c.lower() == key:
                return c
        raise InputError(f"label {raw!r} is not in the {self.name} scheme {list(self.classes)}")

    def code(self, label: str) -> int:
        return self.classes.index(self.normalize(label))

    @property
    def positive_code(self) -> int:
        return self.classes.index(self.positive_class)

    def is_positive(self, label: str) -> bool:
        return self.normalize(label) == self.positive_class


BINARY = LabelScheme("binary", ("Wellness", "Other"), "Wellness")
EXTENDED = LabelScheme(
    "extended", ("Wellness", "NonWellness", "Boarding", "Grooming", "Retail"), "Wellness"
)
SCHEMES = {"binary": BINARY, "extended": EXTENDED}


def get_scheme(name: str) -> LabelScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise InputError(f"unknown label scheme {name!r}; choose from {sorted(SCHEMES)}") from None


class AnnotationTable:
    """Visits x raters matrix of labels, possibly sparse.

    ``codes[i, j]`` is the index into ``scheme.classes`` of the label rater
    ``j`` gave visit ``i``, or ``MISSING``.
    """

    def __init__(self, visit_ids: Sequence[str], raters: Sequence[str], codes, scheme: LabelScheme):
        self.visit_ids = tuple(visit_ids)
        self.raters = tuple(raters)
        self.scheme = scheme
        codes = np.array(codes, dtype=np.int64).reshape(len(self.visit_ids), len(self.raters))
        if len(set(self.visit_ids)) != len(self.visit_ids):
            raise InputError("visit ids are not unique")
        if len(set(self.raters)) != len(self.raters):
            raise InputError("rater ids are not unique")
        if codes.size and (codes.min() < MISSING or codes.max() >= len(scheme.classes)):
            raise InputError("label code outside the scheme")
        empty = np.flatnonzero((codes != MISSING).sum(axis=1) == 0)
        if empty.size:
            raise InputError(f"visit {self.visit_ids[empty[0]]!r} has no labels")
        codes.flags.writeable = False
        self.codes = codes

    @classmethod
    def from_cells(
        cls, cells: Mapping[tuple[str, str], str], scheme: LabelScheme
    ) -> "AnnotationTable":
        """Build from ``{(visit_id, rater_id): label}``, keeping first-seen order."""
        visits: dict[str, int] = {}
        raters: dict[str, int] = {}
        for v, r in cells:
            visits.setdefault(v, len(visits))
            raters.setdefault(r, len(raters))
        codes = np.full((len(visits), len(raters)), MISSING, dtype=np.int64)
        for (v, r), label in cells.items():
            codes[visits[v], raters[r]] = scheme.code(label)
        return cls(list(visits), list(raters), codes, scheme)

    @property
    def n_visits(self) -> int:
        return len(self.visit_ids)

    @property
    def n_raters(self) -> int:
        return len(self.raters)

    def label(self, visit_index: int, rater_index: int) -> str | None:
        c = self.codes[visit_index, rater_index]
        return None if c == MISSING else self.scheme.classes[c]

    def cells(self) -> dict[tuple[str, str], str]:
        out = {}
        for i, v in enumerate(self.visit_ids):
            for j, r in enumerate(self.raters):
                c = self.codes[i, j]
                if c != MISSING:
                    out[(v, r)] = self.scheme.classes[c]
        return out

    def category_counts(self) -> np.ndarray:
        """Visits x classes matrix of vote counts."""
        k = len(self.scheme.classes)
        out = np.zeros((self.n_visits, k), dtype=np.int64)
        for j in range(k):
            out[:, j] = (self.codes == j).sum(axis=1)
        return out

    def binarize(self, positive_class: str | None = None) -> "AnnotationTable":
        """Collapse to the binary scheme: the positive class versus everything else."""
        pos = self.scheme.normalize(positive_class or self.scheme.positive_class)
        pos_code = self.scheme.classes.index(pos)
        codes = np.where(
            self.codes == MISSING,
            MISSING,
            np.where(self.codes == pos_code, BINARY.positive_code, 1 - BINARY.positive_code),
        )
        return AnnotationTable(self.visit_ids, self.raters, codes, BINARY)

    def __eq__(self, other):
        if not isinstance(other, AnnotationTable):
            return NotImplemented
        return (
            self.visit_ids == other.visit_ids
            and self.raters == other.raters
            and self.scheme == other.scheme
            and np.array_equal(self.codes, other.codes)
        )

    def __repr__(self):
        return (
            f"AnnotationTable({self.n_visits} visits, {self.n_raters} raters, "
            f"scheme={self.scheme.name})"
        )


@dataclass(frozen=True)
class PredictionRecord:
    visit_id: str
    predicted_label: str
    probability: float | None = None

    def __post_init__(self):
        p = self.probability
        if p is not None and not (0.0 <= p <= 1.0):
            raise InputError(f"probability {p} for visit {self.visit_id!r} outside [0, 1]")


SPECIES = ("canine", "feline")
SEXES = ("female", "female_spayed", "male", "male_neutered", "unknown")
_SPECIES_ALIASES = {"dog": "canine", "cat": "feline"}


@dataclass(frozen=True)
class PetRecord:
    visit_id: str
    species: str
    sex: str = "unknown"
    age_years: float | None = None

    def __post_init__(self):
        if self.species not in SPECIES:
            raise InputError(f"species {self.species!r} not in {SPECIES}")
        if self.sex not in SEXES:
            raise InputError(f"sex {self.sex!r} not in {SEXES}")
        if self.age_years is not None and not (self.age_years >= 0):
            raise InputError(f"negative age {self.age_years} for visit {self.visit_id!r}")


LIFE_STAGES = ("juvenile", "young_adult", "mature_adult", "senior", "geriatric", "unknown")

# Upper (inclusive) age bounds of juvenile, young adult, mature adult, senior.
_STAGE_BOUNDS = {
    "canine": (1.0, 4.0, 7.0, 10.0),
    "feline": (1.0, 2.0, 10.0, 15.0),
}


def life_stage(species: str, age_years: float | None) -> str:
    """Life stage for a dog or cat of the given age in years.

    Intervals are closed on the right, so an age sitting exactly on a bound
    belongs to the younger stage. A missing age gives ``"unknown"``.
    """
    species = _SPECIES_ALIASES.get(species, species)
    if species not in _STAGE_BOUNDS:
        raise InputError(f"species {species!r} not in {SPECIES}")
    if age_years is None:
        return "unknown"
    if not age_years >= 0:
        raise InputError(f"negative age {age_years}")
    return LIFE_STAGES[bisect.bisect_left(_STAGE_BOUNDS[species], age_years)]


# -- CSV ingestion -----------------------------------------------------------


def csv_rows(path, header: Sequence[str]):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    text = path.read_text(encoding="utf-8-sig")
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise InputError(f"{path}: empty file, expected header {','.join(header)}") from None
    got = [h.strip().lower() for h in first]
    if got[: len(header)] != list(header):
        raise InputError(f"{path}:1: header {first!r} does not start with {','.join(header)}")
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        yield reader.line_num, dict(zip(got, (c.strip() for c in row))), row


def _require(path, line, rec, row, names):
    if len(row) < len(names):
        raise InputError(f"{path}:{line}: expected {len(names)} fields, got {len(row)}")
    for n in names:
        if not rec.get(n):
            raise InputError(f"{path}:{line}: empty {n}")


def parse_annotations(path, scheme: LabelScheme = BINARY) -> AnnotationTable:
    """Read an annotations CSV into an :class:`AnnotationTable`."""
    cells: dict[tuple[str, str], str] = {}
    for line, rec, row in csv_rows(path, ANNOTATION_HEADER):
        _require(path, line, rec, row, ANNOTATION_HEADER)
        key = (rec["visit_id"], rec["rater_id"])
        if key in cells:
            raise InputError(f"{path}:{line}: duplicate cell for visit {key[0]!r}, rater {key[1]!r}")
        try:
            cells[key] = scheme.normalize(rec["label"])
        except InputError as e:
            raise InputError(f"{path}:{line}: {e}") from None
    if not cells:
        raise InputError(f"{path}: no annotation rows")
    return AnnotationTable.from_cells(cells, scheme)


def serialize_annotations(table: AnnotationTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANNOTATION_HEADER)
    for (v, r), label in table.cells().items():
        w.writerow((v, r, label))
    return buf.getvalue()


def write_annotations(table: AnnotationTable, path) -> None:
    Path(path).write_text(serialize_annotations(table), encoding="utf-8")


def _parse_float(path, line, name, text):
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"{path}:{line}: {name} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise InputError(f"{path}:{line}: {name} {text!r} is not finite")
    return value


def parse_predictions(path, scheme: LabelScheme = BINARY) -> dict[str, PredictionRecord]:
    out: dict[str, PredictionRecord] = {}
    for line, rec, row in csv_rows(path, PREDICTION_HEADER):
        _require(path, line, rec, row, PREDICTION_HEADER[:2])
        vid = rec["visit_id"]
        if vid in out:
            raise InputError(f"{path}:{line}: duplicate visit {vid!r}")
        prob = rec.get("probability") or None
        try:
            out[vid] = PredictionRecord(
                vid,
                scheme.normalize(rec["label"]),
                None if prob is None else _parse_float(path, line, "probability", prob),
            )
        except InputError as e:
            raise InputError(f"{path}:{line}: {e}") from None
    if not out:
        raise InputError(f"{path}: no prediction rows")
    return out


def serialize_predictions(records: Iterable[PredictionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for r in records:
        w.writerow((r.visit_id, r.predicted_label, "" if r.probability is None else repr(r.probability)))
    return buf.getvalue()


def parse_pets(path) -> list[PetRecord]:
    out = []
    seen = set()
    for line, rec, row in csv_rows(path, PET_HEADER):
        _require(path, line, rec, row, PET_HEADER[:2])
        vid = rec["visit_id"]
        if vid in seen:
            raise InputError(f"{path}:{line}: duplicate visit {vid!r}")
        seen.add(vid)
        species = rec["species"].lower()
        sex = (rec.get("sex") or "unknown").lower().replace(" ", "_")
        age = rec.get("age_years") or None
        try:
            out.append(
                PetRecord(
                    vid,
                    _SPECIES_ALIASES.get(species, species),
                    sex,
                    None if age is None else _parse_float(path, line, "age_years", age),
                )
            )
        except InputError as e:
            raise InputError(f"{path}:{line}: {e}") from None
    return out


# -- cohort summary ----------------------------------------------------------


@dataclass
class SpeciesSummary:
    n: int
    percent_of_total: float | None
    sex: dict[str, dict[str, float | int | None]] = field(default_factory=dict)
    life_stage: dict[str, dict[str, float | int | None]] = field(default_factory=dict)
    age_median: float | None = None
    age_q1: float | None = None
    age_q3: float | None = None
    n_age_missing: int = 0


def _facet(values: Sequence[str], levels: Sequence[str], total: int):
    counts = Counter(values)
    return {
        lv: {"n": counts[lv], "percent": (100.0 * counts[lv] / total) if total else None}
        for lv in levels
    }


def cohort_summary(pets: Iterable[PetRecord]) -> dict[str, SpeciesSummary]:
    """Counts and percentages by sex and life stage per species, plus age median and IQR.

    Percentages use per-species totals (pets with no recorded age included)
    and are left unrounded.
    """
    pets = list(pets)
    total = len(pets)
    out = {}
    for sp in SPECIES:
        group = [p for p in pets if p.species == sp]
        n = len(group)
        ages = sorted(p.age_years for p in group if p.age_years is not None)
        s = SpeciesSummary(
            n=n,
            percent_of_total=(100.0 * n / total) if total else None,
            sex=_facet([p.sex for p in group], SEXES, n),
            life_stage=_facet([life_stage(sp, p.age_years) for p in group], LIFE_STAGES, n),
            n_age_missing=n - len(ages),
        )
        if ages:
            s.age_median = quantile(ages, 0.5)
            s.age_q1 = quantile(ages, 0.25)
            s.age_q3 = quantile(ages, 0.75)
        out[sp] = s
    return out
