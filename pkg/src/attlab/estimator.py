"""ATT estimation from counterfactual predictions, with bootstrap intervals.

The point estimator compares observed outcomes among target-treated
patients with their model-predicted outcomes under the standard treatment
(evaluated on the standard-treatment plan). Intervals come from patient
level resampling in one of two modes: ``FIXED_MODEL`` treats the outcome
model as given and resamples only the treated sample; ``FULL`` also
resamples the model-development cohort and refits per replicate, which
propagates model-development sampling variance into the interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    ConfigurationError,
    EstimandError,
    StatisticalError,
    UnstableBootstrapError,
)
from .glm import ModelFit, ModelSpec, PlanSource, build_design, fit_logistic, predict_design, predict_risk
from .records import PatientRecord, Treatment
from .rng import substream

PERCENTILE_LO = 2.5
PERCENTILE_HI = 97.5
Z_975 = 1.959963984540054
MAX_FAILURE_FRACTION = 0.05


class EffectScale(Enum):
    RISK_DIFFERENCE = "rd"
    RISK_RATIO = "rr"
    ODDS_RATIO = "or"


class BootstrapMode(Enum):
    FIXED_MODEL = "fixed"
    FULL = "full"


class IntervalMethod(Enum):
    PERCENTILE = "percentile"
    NORMAL = "normal"


def odds(p: float) -> float:
    if p >= 1.0:
        raise EstimandError(f"odds undefined at probability {p}")
    return p / (1.0 - p)


@dataclass(frozen=True)
class BootstrapConfig:
    n_replicates: int = 2000
    seed: int = 0
    mode: BootstrapMode = BootstrapMode.FULL
    interval: IntervalMethod = IntervalMethod.PERCENTILE

    def __post_init__(self):
        if self.n_replicates < 100:
            raise ConfigurationError(
                f"bootstrap needs >= 100 replicates for interval construction, got {self.n_replicates}"
            )

    def to_json_dict(self) -> dict:
        return {
            "n_replicates": self.n_replicates,
            "seed": int(self.seed),
            "mode": self.mode.value,
            "interval": self.interval.value,
        }


@dataclass(frozen=True)
class AttEstimate:
    scale: EffectScale
    point: float
    ci_low: float | None
    ci_high: float | None
    n_treated: int
    mean_observed: float
    mean_predicted: float
    bootstrap: BootstrapConfig | None = None
    n_failed_replicates: int = 0

    def to_json_dict(self) -> dict:
        return {
            "scale": self.scale.value,
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_treated": self.n_treated,
            "mean_observed": self.mean_observed,
            "mean_predicted": self.mean_predicted,
            "bootstrap": self.bootstrap.to_json_dict() if self.bootstrap else None,
            "n_failed_replicates": self.n_failed_replicates,
        }


def att_from_means(mean_observed: float, mean_predicted: float, scale: EffectScale) -> float:
    """Effect on the chosen scale from the two group means."""
    if scale is EffectScale.RISK_DIFFERENCE:
        return mean_observed - mean_predicted
    if scale is EffectScale.RISK_RATIO:
        if mean_predicted == 0.0:
            raise EstimandError("risk ratio undefined: mean predicted risk is 0")
        return mean_observed / mean_predicted
    if mean_observed in (0.0, 1.0):
        raise EstimandError(f"odds ratio undefined: observed event rate is {mean_observed}")
    return odds(mean_observed) / odds(mean_predicted)


def _check_treated(records) -> list[PatientRecord]:
    records = list(records)
    if not records:
        raise EstimandError("no treated patients: the ATT is undefined on an empty sample")
    not_target = [r.id for r in records if r.treatment is not Treatment.TARGET]
    if not_target:
        raise EstimandError(
            f"estimator expects target-treated records only; offending ids: {', '.join(not_target[:5])}"
        )
    return records


def estimate_att(post_treated, fit: ModelFit, scale: EffectScale) -> float:
    """Point estimate: observed event rate minus/over predicted counterfactual rate."""
    records = _check_treated(post_treated)
    predictions = predict_risk(fit, records, PlanSource.PHOTON)
    mean_observed = float(np.mean([r.outcome for r in records]))
    mean_predicted = float(np.mean(predictions))
    return att_from_means(mean_observed, mean_predicted, scale)


def _interval(points: np.ndarray, point: float, method: IntervalMethod) -> tuple[float, float]:
    if method is IntervalMethod.PERCENTILE:
        lo, hi = np.percentile(points, [PERCENTILE_LO, PERCENTILE_HI])
        return float(lo), float(hi)
    sd = float(np.std(points, ddof=1))
    return point - Z_975 * sd, point + Z_975 * sd


def bootstrap_ci(
    pre_records,
    post_treated,
    spec: ModelSpec,
    scale: EffectScale,
    config: BootstrapConfig,
    *,
    fit: ModelFit | None = None,
) -> AttEstimate:
    """Bootstrap interval for the ATT.

    Replicate ``r`` draws from an RNG stream derived from ``(seed, r)``, so
    results do not depend on execution order. Replicates whose refit or
    effect computation fails are dropped and counted; more than 5% failures
    raises ``UnstableBootstrapError``.
    """
    treated = _check_treated(post_treated)
    pre_records = list(pre_records)
    if fit is None:
        y_pre_records = np.array([r.outcome for r in pre_records], dtype=float)
        X_pre_all, names = build_design(pre_records, spec, PlanSource.PHOTON)
        fit = fit_logistic(X_pre_all, y_pre_records, column_names=names, spec=spec)
    else:
        X_pre_all, _ = build_design(pre_records, spec, PlanSource.PHOTON)
        y_pre_records = np.array([r.outcome for r in pre_records], dtype=float)

    X_post, _ = build_design(treated, spec, PlanSource.PHOTON)
    y_post = np.array([r.outcome for r in treated], dtype=float)
    n_treated = len(treated)
    n_pre = len(pre_records)

    predictions = predict_design(fit.beta_hat, X_post)
    mean_observed = float(np.mean(y_post))
    mean_predicted = float(np.mean(predictions))
    point = att_from_means(mean_observed, mean_predicted, scale)

    replicates = np.empty(config.n_replicates)
    n_failed = 0
    n_ok = 0
    for r in range(config.n_replicates):
        rng = substream(config.seed, r)
        try:
            if config.mode is BootstrapMode.FULL:
                idx_pre = rng.integers(0, n_pre, n_pre)
                idx_post = rng.integers(0, n_treated, n_treated)
                refit = fit_logistic(
                    X_pre_all[idx_pre], y_pre_records[idx_pre], column_names=fit.column_names
                )
                if not refit.converged:
                    raise StatisticalError("replicate fit did not converge")
                preds_r = predict_design(refit.beta_hat, X_post[idx_post])
            else:
                idx_post = rng.integers(0, n_treated, n_treated)
                preds_r = predictions[idx_post]
            replicates[n_ok] = att_from_means(
                float(np.mean(y_post[idx_post])), float(np.mean(preds_r)), scale
            )
            n_ok += 1
        except StatisticalError:
            n_failed += 1

    if n_failed > MAX_FAILURE_FRACTION * config.n_replicates:
        raise UnstableBootstrapError(n_failed, config.n_replicates)

    ci_low, ci_high = _interval(replicates[:n_ok], point, config.interval)
    return AttEstimate(
        scale=scale,
        point=point,
        ci_low=ci_low,
        ci_high=ci_high,
        n_treated=n_treated,
        mean_observed=mean_observed,
        mean_predicted=mean_predicted,
        bootstrap=config,
        n_failed_replicates=n_failed,
    )


@dataclass(frozen=True)
class SensitivityRow:
    label: str
    estimate: AttEstimate | None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "estimate": self.estimate.to_json_dict() if self.estimate else None,
            "error": self.error,
        }


@dataclass(frozen=True)
class SensitivityResult:
    rows: tuple[SensitivityRow, ...]
    max_spread: float

    def to_json_dict(self) -> dict:
        return {"rows": [row.to_json_dict() for row in self.rows], "max_spread": self.max_spread}


def sensitivity_analysis(
    pre_records,
    post_treated,
    spec_variants: list[tuple[str, ModelSpec]],
    scale: EffectScale,
    bootstrap: BootstrapConfig | None = None,
) -> SensitivityResult:
    """Re-estimate the ATT under each model spec variant.

    Per-variant fit failures are recorded in the row rather than raised, so
    one fragile spec cannot sink the whole comparison.
    """
    if len(spec_variants) < 2:
        raise ConfigurationError("sensitivity analysis needs at least two spec variants")
    treated = _check_treated(post_treated)
    pre_records = list(pre_records)
    rows: list[SensitivityRow] = []
    for label, spec in spec_variants:
        try:
            if bootstrap is not None:
                estimate = bootstrap_ci(pre_records, treated, spec, scale, bootstrap)
            else:
                from .glm import fit_model

                fit = fit_model(pre_records, spec)
                predictions = predict_risk(fit, treated, PlanSource.PHOTON)
                mean_observed = float(np.mean([r.outcome for r in treated]))
                mean_predicted = float(np.mean(predictions))
                estimate = AttEstimate(
                    scale=scale,
                    point=att_from_means(mean_observed, mean_predicted, scale),
                    ci_low=None,
                    ci_high=None,
                    n_treated=len(treated),
                    mean_observed=mean_observed,
                    mean_predicted=mean_predicted,
                )
            rows.append(SensitivityRow(label=label, estimate=estimate))
        except StatisticalError as exc:
            rows.append(SensitivityRow(label=label, estimate=None, error=str(exc)))
    points = [row.estimate.point for row in rows if row.estimate is not None]
    spread = float(max(points) - min(points)) if len(points) >= 2 else 0.0
    return SensitivityResult(rows=tuple(rows), max_spread=spread)
