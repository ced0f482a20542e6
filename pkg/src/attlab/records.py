"""Patient-level data model: dose plans, records, cohorts, validation, CSV I/O.

All types are immutable after construction and safe to share across
concurrent tasks. ``validate`` reports problems instead of raising, so a
caller can surface every violation at once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import SchemaError

SCHEMA_VERSION = "1"

MAX_DOSE_GY = 80.0

DOSE_FIELDS = ("dose_sup_pcm", "dose_mid_pcm", "dose_inf_pcm", "dose_oral_cavity")

CSV_HEADER = (
    "id",
    "period",
    "treatment",
    "baseline_dysphagia",
    "tumor_location",
    "dose_sup_pcm",
    "dose_mid_pcm",
    "dose_inf_pcm",
    "dose_oral_cavity",
    "dose_sup_pcm_proton",
    "dose_mid_pcm_proton",
    "dose_inf_pcm_proton",
    "dose_oral_cavity_proton",
    "outcome",
)

# Dose values are carried in CSV with up to 4 decimal places.
DOSE_DECIMALS = 4


class Period(Enum):
    PRE = "pre"
    POST = "post"


class Treatment(Enum):
    STANDARD = 0
    TARGET = 1


class TumorLocation(Enum):
    OROPHARYNX = "oropharynx"
    NASOPHARYNX = "nasopharynx"
    LARYNX = "larynx"
    ORAL_CAVITY = "oral_cavity"


LOCATIONS = tuple(TumorLocation)


class CohortLabel(Enum):
    PRE_INTRODUCTION = "pre_introduction"
    POST_INTRODUCTION = "post_introduction"

    @property
    def period(self) -> Period:
        return Period.PRE if self is CohortLabel.PRE_INTRODUCTION else Period.POST


@dataclass(frozen=True, slots=True)
class DosePlan:
    """Mean planned dose (Gy) to the four swallowing-related organs."""

    dose_sup_pcm: float
    dose_mid_pcm: float
    dose_inf_pcm: float
    dose_oral_cavity: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dose_sup_pcm, self.dose_mid_pcm, self.dose_inf_pcm, self.dose_oral_cavity)


@dataclass(frozen=True, slots=True)
class PotentialOutcomes:
    """Latent ground truth attached to synthetic records only.

    ``y0``/``y1`` are the outcomes the patient would experience under the
    standard and target treatment; ``p0``/``p1`` the true risks they were
    drawn from.
    """

    y0: int
    y1: int
    p0: float
    p1: float


@dataclass(frozen=True, slots=True)
class PatientRecord:
    id: str
    period: Period
    treatment: Treatment
    baseline_dysphagia: int
    tumor_location: TumorLocation
    photon_doses: DosePlan
    outcome: int
    proton_doses: DosePlan | None = None
    latent: PotentialOutcomes | None = None


@dataclass(frozen=True)
class Cohort:
    """An ordered, immutable collection of patient records."""

    records: tuple[PatientRecord, ...]
    label: CohortLabel
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def treated(self) -> tuple[PatientRecord, ...]:
        return tuple(r for r in self.records if r.treatment is Treatment.TARGET)

    def standard(self) -> tuple[PatientRecord, ...]:
        return tuple(r for r in self.records if r.treatment is Treatment.STANDARD)


@dataclass(frozen=True, slots=True)
class SchemaViolation:
    record_id: str | None
    field: str | None
    rule: str

    def __str__(self) -> str:
        where = self.record_id if self.record_id is not None else "<cohort>"
        field = f".{self.field}" if self.field else ""
        return f"{where}{field}: {self.rule}"


def _check_dose_plan(rid: str, field: str, plan: DosePlan, out: list[SchemaViolation]) -> None:
    for organ, value in zip(DOSE_FIELDS, plan.as_tuple()):
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            out.append(SchemaViolation(rid, f"{field}.{organ}", "dose must be finite"))
        elif value < 0.0 or value > MAX_DOSE_GY:
            out.append(
                SchemaViolation(rid, f"{field}.{organ}", f"dose {value} Gy outside [0, {MAX_DOSE_GY}]")
            )


def validate(cohort: Cohort) -> list[SchemaViolation]:
    """Check every record against the data-model invariants.

    Returns an empty list iff the cohort is well formed. Never raises.
    """
    violations: list[SchemaViolation] = []
    if len(cohort.records) == 0:
        violations.append(SchemaViolation(None, None, "cohort empty"))
        return violations

    expected_period = cohort.label.period
    for rec in cohort.records:
        rid = rec.id
        if rec.period is not expected_period:
            violations.append(
                SchemaViolation(rid, "period", f"period {rec.period.value} does not match cohort label")
            )
        if rec.period is Period.PRE:
            if rec.treatment is not Treatment.STANDARD:
                violations.append(
                    SchemaViolation(rid, "treatment", "pre-introduction records must be standard-treated")
                )
            if rec.proton_doses is not None:
                violations.append(
                    SchemaViolation(rid, "proton_doses", "pre-introduction records must not carry a proton plan")
                )
        if rec.treatment is Treatment.TARGET:
            if rec.period is not Period.POST:
                violations.append(
                    SchemaViolation(rid, "treatment", "target-treated records must be post-introduction")
                )
            if rec.proton_doses is None:
                violations.append(
                    SchemaViolation(rid, "proton_doses", "target-treated records must carry a proton plan")
                )
        if rec.outcome not in (0, 1):
            violations.append(SchemaViolation(rid, "outcome", f"outcome {rec.outcome!r} not in {{0,1}}"))
        if rec.baseline_dysphagia not in (0, 1):
            violations.append(
                SchemaViolation(rid, "baseline_dysphagia", f"value {rec.baseline_dysphagia!r} not in {{0,1}}")
            )
        _check_dose_plan(rid, "photon_doses", rec.photon_doses, violations)
        if rec.proton_doses is not None:
            _check_dose_plan(rid, "proton_doses", rec.proton_doses, violations)
        if rec.latent is not None:
            lat = rec.latent
            for name, p in (("p0", lat.p0), ("p1", lat.p1)):
                if not (0.0 < p < 1.0):
                    violations.append(SchemaViolation(rid, f"latent.{name}", f"risk {p} outside (0,1)"))
            if lat.y0 not in (0, 1) or lat.y1 not in (0, 1):
                violations.append(SchemaViolation(rid, "latent", "potential outcomes must be binary"))
            expected = lat.y0 if rec.treatment is Treatment.STANDARD else lat.y1
            if rec.outcome != expected:
                violations.append(
                    SchemaViolation(rid, "outcome", "outcome does not equal the potential outcome for the received treatment")
                )
    return violations


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def format_dose(value: float) -> str:
    """Canonical dose text: at most 4 decimals, no trailing zeros."""
    text = f"{value:.{DOSE_DECIMALS}f}"
    return text.rstrip("0").rstrip(".") if "." in text else text


def _record_to_row(rec: PatientRecord) -> list[str]:
    proton = rec.proton_doses.as_tuple() if rec.proton_doses is not None else ("",) * 4
    return [
        rec.id,
        rec.period.value,
        str(rec.treatment.value),
        str(rec.baseline_dysphagia),
        rec.tumor_location.value,
        *[format_dose(v) for v in rec.photon_doses.as_tuple()],
        *[format_dose(v) if v != "" else "" for v in proton],
        str(rec.outcome),
    ]


def write_cohort_csv(cohort: Cohort, path: str | Path) -> None:
    """Write a cohort in the canonical CSV schema (latent fields are not persisted)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in cohort.records:
            writer.writerow(_record_to_row(rec))


def _parse_enum(raw: str, mapping: dict, rid: str, field: str, out: list[SchemaViolation]):
    try:
        return mapping[raw]
    except KeyError:
        out.append(SchemaViolation(rid, field, f"unknown value {raw!r} (expected one of {sorted(mapping)})"))
        return None


def _parse_float(raw: str, rid: str, field: str, out: list[SchemaViolation]) -> float | None:
    try:
        return float(raw)
    except ValueError:
        out.append(SchemaViolation(rid, field, f"not a number: {raw!r}"))
        return None


def _parse_int01(raw: str, rid: str, field: str, out: list[SchemaViolation]) -> int | None:
    if raw in ("0", "1"):
        return int(raw)
    out.append(SchemaViolation(rid, field, f"expected 0 or 1, got {raw!r}"))
    return None


def read_cohort_csv(path: str | Path, label: CohortLabel) -> Cohort:
    """Parse a cohort CSV. Raises ``SchemaError`` listing all parse problems."""
    violations: list[SchemaViolation] = []
    records: list[PatientRecord] = []
    period_map = {p.value: p for p in Period}
    treatment_map = {str(t.value): t for t in Treatment}
    location_map = {loc.value: loc for loc in TumorLocation}

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError([SchemaViolation(None, None, "file is empty, header required")])
        if tuple(header) != CSV_HEADER:
            raise SchemaError(
                [SchemaViolation(None, None, f"bad header: expected {','.join(CSV_HEADER)}")]
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                violations.append(
                    SchemaViolation(f"line {lineno}", None, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
                )
                continue
            rid = row[0] or f"line {lineno}"
            period = _parse_enum(row[1], period_map, rid, "period", violations)
            treatment = _parse_enum(row[2], treatment_map, rid, "treatment", violations)
            dysphagia = _parse_int01(row[3], rid, "baseline_dysphagia", violations)
            location = _parse_enum(row[4], location_map, rid, "tumor_location", violations)
            photon_vals = [_parse_float(row[5 + i], rid, DOSE_FIELDS[i], violations) for i in range(4)]
            proton_raw = row[9:13]
            proton_vals: list[float | None] = []
            if all(v == "" for v in proton_raw):
                proton = None
            elif any(v == "" for v in proton_raw):
                violations.append(
                    SchemaViolation(rid, "proton_doses", "proton dose columns must be all empty or all present")
                )
                proton = None
            else:
                proton_vals = [
                    _parse_float(proton_raw[i], rid, DOSE_FIELDS[i] + "_proton", violations) for i in range(4)
                ]
                proton = None if any(v is None for v in proton_vals) else DosePlan(*proton_vals)
            outcome = _parse_int01(row[13], rid, "outcome", violations)

            if None in (period, treatment, dysphagia, location, outcome) or any(
                v is None for v in photon_vals
            ):
                continue
            records.append(
                PatientRecord(
                    id=rid,
                    period=period,
                    treatment=treatment,
                    baseline_dysphagia=dysphagia,
                    tumor_location=location,
                    photon_doses=DosePlan(*photon_vals),
                    outcome=outcome,
                    proton_doses=proton,
                )
            )

    if violations:
        raise SchemaError(violations)
    return Cohort(records=tuple(records), label=label)
