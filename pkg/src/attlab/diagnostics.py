"""Executable validity diagnostics.

Covers the supportive-evidence procedures available in this design:
univariable overlap between the model-development cohort and the treated
group (positivity), mean calibration on post-introduction standard-treated
patients (a negative-control group where the correct estimate is null),
the same check run on the treated group using their target-treatment plans
under a shared dose-response assumption, calibration curves, and AUROC.

AUROC is reported for completeness; by itself it says nothing about the
validity of counterfactual-prediction estimates, since restricted case mix
can push it toward 0.5 even for a perfectly transportable model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EstimandError, UndefinedMetricError
from .glm import ModelFit, PlanSource, predict_risk
from .records import Cohort, DOSE_FIELDS, Period, Treatment
from .rng import substream

# Stochastic-concern triggers. The range check tolerates a small fraction of
# values outside the development range: with ~100 treated and ~750
# development patients drawn from the same distribution, at least one value
# lands outside the development min/max in roughly a fifth of samples, so a
# literal any-exceedance rule would flag healthy data.
OUTSIDE_FRACTION_THRESHOLD = 0.05
SMD_THRESHOLD = 0.5

DEFAULT_CALIBRATION_BINS = 10


class OverlapVerdict(Enum):
    NO_FLAGS = "no_flags"
    STOCHASTIC_CONCERN = "stochastic_concern"
    STRUCTURAL_VIOLATION = "structural_violation"


@dataclass(frozen=True)
class CovariateOverlap:
    name: str
    pre_min: float
    pre_max: float
    post_min: float
    post_max: float
    outside_fraction: float
    smd: float

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "pre_range": [self.pre_min, self.pre_max],
            "post_treated_range": [self.post_min, self.post_max],
            "outside_fraction": self.outside_fraction,
            "smd": self.smd,
        }


@dataclass(frozen=True)
class OverlapReport:
    covariates: tuple[CovariateOverlap, ...]
    missing_categories: tuple[str, ...]
    verdict: OverlapVerdict

    def to_json_dict(self) -> dict:
        return {
            "covariates": [c.to_json_dict() for c in self.covariates],
            "missing_categories": list(self.missing_categories),
            "verdict": self.verdict.value,
        }


def _smd(treated: np.ndarray, reference: np.ndarray) -> float:
    v_t = float(np.var(treated, ddof=1)) if treated.shape[0] > 1 else 0.0
    v_r = float(np.var(reference, ddof=1)) if reference.shape[0] > 1 else 0.0
    pooled = np.sqrt((v_t + v_r) / 2.0)
    if pooled == 0.0 or not np.isfinite(pooled):
        return 0.0
    return float((np.mean(treated) - np.mean(reference)) / pooled)


def positivity_report(
    pre: Cohort,
    post_treated,
    *,
    outside_threshold: float = OUTSIDE_FRACTION_THRESHOLD,
    smd_threshold: float = SMD_THRESHOLD,
) -> OverlapReport:
    """Univariable overlap between the pre cohort and the treated group.

    Structural violation: a category (or binary level) present among the
    treated but absent from the development data, where the model has no
    information at all. Stochastic concern: range exceedance above the
    tolerance or a standardized mean difference beyond ``smd_threshold``.
    """
    pre_records = list(pre.records)
    treated = list(post_treated)
    if not pre_records or not treated:
        raise ConfigurationError("positivity report needs non-empty pre and treated groups")

    covariates: list[CovariateOverlap] = []
    structural = False
    stochastic = False

    def add(name: str, pre_vals: np.ndarray, post_vals: np.ndarray) -> None:
        nonlocal stochastic
        outside = float(np.mean((post_vals < pre_vals.min()) | (post_vals > pre_vals.max())))
        smd = _smd(post_vals, pre_vals)
        if outside > outside_threshold or abs(smd) > smd_threshold:
            stochastic = True
        covariates.append(
            CovariateOverlap(
                name=name,
                pre_min=float(pre_vals.min()),
                pre_max=float(pre_vals.max()),
                post_min=float(post_vals.min()),
                post_max=float(post_vals.max()),
                outside_fraction=outside,
                smd=smd,
            )
        )

    pre_dys = np.array([r.baseline_dysphagia for r in pre_records], dtype=float)
    post_dys = np.array([r.baseline_dysphagia for r in treated], dtype=float)
    add("baseline_dysphagia", pre_dys, post_dys)
    if set(np.unique(post_dys)) - set(np.unique(pre_dys)):
        structural = True

    for i, organ in enumerate(DOSE_FIELDS):
        pre_vals = np.array([r.photon_doses.as_tuple()[i] for r in pre_records])
        post_vals = np.array([r.photon_doses.as_tuple()[i] for r in treated])
        add(organ, pre_vals, post_vals)

    pre_locations = {r.tumor_location for r in pre_records}
    missing = sorted(
        {r.tumor_location for r in treated if r.tumor_location not in pre_locations},
        key=lambda loc: loc.value,
    )
    if missing:
        structural = True

    if structural:
        verdict = OverlapVerdict.STRUCTURAL_VIOLATION
    elif stochastic:
        verdict = OverlapVerdict.STOCHASTIC_CONCERN
    else:
        verdict = OverlapVerdict.NO_FLAGS
    return OverlapReport(
        covariates=tuple(covariates),
        missing_categories=tuple(loc.value for loc in missing),
        verdict=verdict,
    )


@dataclass(frozen=True)
class CalibrationBin:
    mean_predicted: float
    observed_rate: float
    count: int

    def to_json_dict(self) -> dict:
        return {"mean_predicted": self.mean_predicted, "observed_rate": self.observed_rate, "count": self.count}


@dataclass(frozen=True)
class CalibrationReport:
    n: int
    mean_observed: float
    mean_predicted: float
    mean_difference: float
    ci_low: float
    ci_high: float
    curve: tuple[CalibrationBin, ...]
    auroc: float

    def to_json_dict(self) -> dict:
        auroc = None if np.isnan(self.auroc) else self.auroc
        return {
            "n": self.n,
            "mean_observed": self.mean_observed,
            "mean_predicted": self.mean_predicted,
            "mean_difference": self.mean_difference,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "curve": [b.to_json_dict() for b in self.curve],
            "auroc": auroc,
        }


def _tie_averaged_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(values.shape[0], dtype=float)
    i = 0
    n = values.shape[0]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(predictions, outcomes) -> float:
    """Probability a random event outranks a random non-event; ties count 0.5."""
    predictions = np.asarray(predictions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    n_events = int(np.sum(outcomes == 1))
    n_nonevents = int(np.sum(outcomes == 0))
    if n_events == 0 or n_nonevents == 0:
        raise UndefinedMetricError("AUROC undefined: need at least one event and one non-event")
    ranks = _tie_averaged_ranks(predictions)
    rank_sum = float(np.sum(ranks[outcomes == 1]))
    u = rank_sum - n_events * (n_events + 1) / 2.0
    return u / (n_events * n_nonevents)


def calibration_curve(predictions, outcomes, n_bins: int = DEFAULT_CALIBRATION_BINS) -> tuple[CalibrationBin, ...]:
    """Equal-frequency calibration bins; ties broken by stable input order.

    Adjacent bins holding one and the same tied prediction value are merged,
    so constant predictions collapse to a single effective bin.
    """
    predictions = np.asarray(predictions, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    n = predictions.shape[0]
    if n < n_bins:
        raise ConfigurationError(f"{n} observations cannot fill {n_bins} bins; use fewer bins")
    order = np.argsort(predictions, kind="stable")
    chunks: list[np.ndarray] = []
    for chunk in np.array_split(order, n_bins):
        p = predictions[chunk]
        if chunks and p.min() == p.max():
            prev = predictions[chunks[-1]]
            if prev.min() == prev.max() == p.min():
                chunks[-1] = np.concatenate([chunks[-1], chunk])
                continue
        chunks.append(chunk)
    return tuple(
        CalibrationBin(
            mean_predicted=float(np.mean(predictions[chunk])),
            observed_rate=float(np.mean(outcomes[chunk])),
            count=int(chunk.shape[0]),
        )
        for chunk in chunks
    )


def _calibration_report(
    predictions: np.ndarray,
    outcomes: np.ndarray,
    *,
    n_bins: int,
    n_replicates: int,
    seed: int,
) -> CalibrationReport:
    n = predictions.shape[0]
    mean_observed = float(np.mean(outcomes))
    mean_predicted = float(np.mean(predictions))
    diffs = np.empty(n_replicates)
    for r in range(n_replicates):
        idx = substream(seed, r).integers(0, n, n)
        diffs[r] = float(np.mean(outcomes[idx]) - np.mean(predictions[idx]))
    lo, hi = np.percentile(diffs, [2.5, 97.5])
    try:
        roc = auroc(predictions, outcomes)
    except UndefinedMetricError:
        roc = float("nan")
    curve = calibration_curve(predictions, outcomes, n_bins) if n >= n_bins else ()
    return CalibrationReport(
        n=n,
        mean_observed=mean_observed,
        mean_predicted=mean_predicted,
        mean_difference=mean_observed - mean_predicted,
        ci_low=float(lo),
        ci_high=float(hi),
        curve=curve,
        auroc=roc,
    )


def negative_control_check(
    post_standard,
    fit: ModelFit,
    *,
    n_bins: int = DEFAULT_CALIBRATION_BINS,
    n_replicates: int = 2000,
    seed: int = 0,
) -> CalibrationReport:
    """Mean calibration on post-introduction standard-treated patients.

    These patients received the treatment the model was built for, so the
    observed-minus-predicted difference should be close to zero whenever
    the validity conditions hold; a systematic difference signals drift.
    """
    records = list(post_standard)
    if not records:
        raise EstimandError("negative-control group is empty; supportive evidence unavailable")
    offenders = [r.id for r in records if r.treatment is not Treatment.STANDARD or r.period is not Period.POST]
    if offenders:
        raise ConfigurationError(
            f"negative-control check expects post-period standard-treated records; offending ids: {', '.join(offenders[:5])}"
        )
    predictions = predict_risk(fit, records, PlanSource.PHOTON)
    outcomes = np.array([r.outcome for r in records], dtype=float)
    return _calibration_report(predictions, outcomes, n_bins=n_bins, n_replicates=n_replicates, seed=seed)


def dose_transport_check(
    post_treated,
    fit: ModelFit,
    *,
    n_bins: int = DEFAULT_CALIBRATION_BINS,
    n_replicates: int = 2000,
    seed: int = 0,
) -> CalibrationReport:
    """Calibration of the model on the treated group via their target plans.

    Valid as a check only under a shared dose-response assumption: the
    dose-outcome relationship learned under the standard treatment must
    carry over to the target treatment's delivered doses.
    """
    records = list(post_treated)
    if not records:
        raise EstimandError("treated group is empty; dose-transport check unavailable")
    predictions = predict_risk(fit, records, PlanSource.PROTON)
    outcomes = np.array([r.outcome for r in records], dtype=float)
    return _calibration_report(predictions, outcomes, n_bins=n_bins, n_replicates=n_replicates, seed=seed)


def write_curve_csv(report: CalibrationReport, path: str | Path) -> None:
    """Calibration curve as CSV for external plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_mean_pred", "bin_obs_rate", "count"])
        for b in report.curve:
            writer.writerow([repr(b.mean_predicted), repr(b.observed_rate), b.count])
