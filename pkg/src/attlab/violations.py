"""Monte Carlo violation lab.

Runs replicated generate / fit / estimate pipelines under each controlled
condition-violation scenario and aggregates bias against each replicate's
own ground truth, interval coverage when a bootstrap is configured, the
negative-control calibration signal, and positivity verdict frequencies.
Truth is recomputed per replicate from the latent risks of that replicate's
treated patients, so bias is measured against the sample-level estimand.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from .diagnostics import positivity_report
from .errors import ConfigurationError, ScenarioError, StatisticalError
from .estimator import BootstrapConfig, EffectScale, bootstrap_ci, estimate_att
from .glm import ModelSpec, PlanSource, fit_model, predict_risk
from .records import Treatment
from .rng import derive_seed
from .synth import DoseTruncation, GeneratorConfig, ViolationShift, generate, true_att

MAX_SCENARIO_FAILURE_FRACTION = 0.10


class ScenarioName(Enum):
    BASELINE = "baseline"
    TRANSPORTABILITY_DRIFT = "transportability_drift"
    IGNORABILITY_CONFOUNDER = "ignorability_confounder"
    POSITIVITY_TRUNCATION = "positivity_truncation"
    MISSPECIFICATION = "misspecification"


# Default shift per scenario: one condition broken at a time, at a strength
# chosen to produce a clearly visible directional bias.
DEFAULT_SHIFTS: dict[ScenarioName, ViolationShift] = {
    ScenarioName.BASELINE: ViolationShift(),
    ScenarioName.TRANSPORTABILITY_DRIFT: ViolationShift(secular_dose_drift=5.0),
    ScenarioName.IGNORABILITY_CONFOUNDER: ViolationShift(unmeasured_confounder_strength=1.0),
    ScenarioName.POSITIVITY_TRUNCATION: ViolationShift(
        support_truncation=DoseTruncation(organ="dose_sup_pcm", max_gy=50.0)
    ),
    ScenarioName.MISSPECIFICATION: ViolationShift(nonlinearity_amplitude=0.8),
}


@dataclass(frozen=True)
class Scenario:
    name: ScenarioName
    shift: ViolationShift
    n_replicates: int = 500
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    spec: ModelSpec = field(default_factory=ModelSpec)
    bootstrap: BootstrapConfig | None = None

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ConfigurationError("scenario needs at least one replicate")
        if (self.name is ScenarioName.BASELINE) != self.shift.is_neutral():
            raise ConfigurationError(
                "baseline must carry an all-neutral shift and non-baseline scenarios a non-neutral one"
            )


def standard_scenario(
    name: ScenarioName,
    *,
    n_replicates: int = 500,
    seed: int = 0,
    generator: GeneratorConfig | None = None,
    bootstrap: BootstrapConfig | None = None,
) -> Scenario:
    """A scenario from the built-in catalog of per-condition shifts."""
    return Scenario(
        name=name,
        shift=DEFAULT_SHIFTS[name],
        n_replicates=n_replicates,
        seed=seed,
        generator=generator if generator is not None else GeneratorConfig(),
        bootstrap=bootstrap,
    )


@dataclass(frozen=True)
class ReplicateOutcome:
    estimate: float
    truth: float
    nc_difference: float
    verdict: str
    covered: bool | None
    failed: bool
    error: str | None = None


@dataclass(frozen=True)
class BiasReport:
    scenario: str
    n_replicates: int
    n_failed: int
    mean_bias: float
    sd_bias: float
    mean_estimate: float
    mean_truth: float
    rmse: float
    coverage: float | None
    mean_nc_difference: float
    nc_negative_fraction: float
    verdict_counts: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
            "mean_bias": self.mean_bias,
            "sd_bias": self.sd_bias,
            "mean_estimate": self.mean_estimate,
            "mean_truth": self.mean_truth,
            "rmse": self.rmse,
            "coverage": self.coverage,
            "mean_nc_difference": self.mean_nc_difference,
            "nc_negative_fraction": self.nc_negative_fraction,
            "verdict_counts": dict(self.verdict_counts),
        }


CSV_COLUMNS = (
    "scenario",
    "n_replicates",
    "n_failed",
    "mean_bias",
    "sd_bias",
    "mean_estimate",
    "mean_truth",
    "rmse",
    "coverage",
    "mean_nc_difference",
    "nc_negative_fraction",
    "verdict_no_flags",
    "verdict_stochastic_concern",
    "verdict_structural_violation",
)


def _run_replicate(scenario: Scenario, r: int) -> ReplicateOutcome:
    """One generate / fit / estimate / diagnose pass; failures are data, not crashes."""
    world_seed = derive_seed(scenario.seed, r)
    config = replace(scenario.generator, seed=world_seed, shift=scenario.shift)
    world = generate(config)
    treated = world.post.treated()
    standard = [rec for rec in world.post.records if rec.treatment is Treatment.STANDARD]
    try:
        fit = fit_model(world.pre.records, scenario.spec)
        if not fit.converged:
            raise StatisticalError("outcome model did not converge")
        estimate = estimate_att(treated, fit, EffectScale.RISK_DIFFERENCE)
        truth = true_att(world, EffectScale.RISK_DIFFERENCE)

        if standard:
            nc_predictions = predict_risk(fit, standard, PlanSource.PHOTON)
            nc_outcomes = np.array([rec.outcome for rec in standard], dtype=float)
            nc_difference = float(np.mean(nc_outcomes) - np.mean(nc_predictions))
        else:
            nc_difference = float("nan")

        verdict = positivity_report(world.pre, treated).verdict.value

        covered: bool | None = None
        if scenario.bootstrap is not None:
            boot = replace(scenario.bootstrap, seed=derive_seed(scenario.seed, r, 1))
            interval = bootstrap_ci(
                world.pre.records, treated, scenario.spec, EffectScale.RISK_DIFFERENCE, boot, fit=fit
            )
            covered = bool(interval.ci_low <= truth <= interval.ci_high)
        return ReplicateOutcome(
            estimate=estimate,
            truth=truth,
            nc_difference=nc_difference,
            verdict=verdict,
            covered=covered,
            failed=False,
        )
    except StatisticalError as exc:
        return ReplicateOutcome(
            estimate=float("nan"),
            truth=float("nan"),
            nc_difference=float("nan"),
            verdict="failed",
            covered=None,
            failed=True,
            error=str(exc),
        )


def run_scenario(
    scenario: Scenario,
    threads: int = 1,
    progress: Callable[[str], None] | None = None,
) -> BiasReport:
    """Run all replicates of one scenario and aggregate.

    Replicate r draws everything from streams derived from (seed, r), so the
    report is identical for any ``threads`` value. Raises ``ScenarioError``
    if more than 10% of replicates fail.
    """
    n = scenario.n_replicates
    if threads > 1 and n > 1:
        chunksize = max(1, n // (threads * 8))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(partial(_run_replicate, scenario), range(n), chunksize=chunksize))
    else:
        outcomes = []
        for r in range(n):
            outcomes.append(_run_replicate(scenario, r))
            if progress is not None and (r + 1) % 50 == 0:
                progress(f"{scenario.name.value}: replicate {r + 1}/{n}")

    failed = [o for o in outcomes if o.failed]
    if len(failed) > MAX_SCENARIO_FAILURE_FRACTION * n:
        raise ScenarioError(
            f"scenario {scenario.name.value}: {len(failed)}/{n} replicates failed "
            f"(first error: {failed[0].error})"
        )
    ok = [o for o in outcomes if not o.failed]
    bias = np.array([o.estimate - o.truth for o in ok])
    nc = np.array([o.nc_difference for o in ok])
    covered = [o.covered for o in ok if o.covered is not None]
    verdict_counts: dict[str, int] = {}
    for o in ok:
        verdict_counts[o.verdict] = verdict_counts.get(o.verdict, 0) + 1

    return BiasReport(
        scenario=scenario.name.value,
        n_replicates=n,
        n_failed=len(failed),
        mean_bias=float(np.mean(bias)),
        sd_bias=float(np.std(bias, ddof=1)) if len(ok) > 1 else 0.0,
        mean_estimate=float(np.mean([o.estimate for o in ok])),
        mean_truth=float(np.mean([o.truth for o in ok])),
        rmse=float(np.sqrt(np.mean(bias**2))),
        coverage=float(np.mean(covered)) if covered else None,
        mean_nc_difference=float(np.mean(nc)),
        nc_negative_fraction=float(np.mean(nc < 0.0)),
        verdict_counts=verdict_counts,
    )


@dataclass(frozen=True)
class SuiteResult:
    reports: tuple[BiasReport, ...]
    failures: tuple[tuple[str, str], ...]

    def to_json_dict(self) -> dict:
        return {
            "reports": [r.to_json_dict() for r in self.reports],
            "failures": [{"scenario": name, "error": msg} for name, msg in self.failures],
        }


def run_suite(
    scenarios,
    threads: int = 1,
    progress: Callable[[str], None] | None = None,
) -> SuiteResult:
    """Run several scenarios; per-scenario failures are reported, not fatal."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigurationError("scenario suite is empty")
    reports: list[BiasReport] = []
    failures: list[tuple[str, str]] = []
    for scenario in scenarios:
        if progress is not None:
            progress(f"running scenario {scenario.name.value} ({scenario.n_replicates} replicates)")
        try:
            reports.append(run_scenario(scenario, threads=threads, progress=progress))
        except ScenarioError as exc:
            failures.append((scenario.name.value, str(exc)))
    return SuiteResult(reports=tuple(reports), failures=tuple(failures))


def write_suite(result: SuiteResult, out_dir: str | Path) -> dict[str, Path]:
    """bias_report.json plus a flat one-row-per-scenario bias_report.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "bias_report.json", "csv": out / "bias_report.csv"}
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(result.to_json_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in result.reports:
            writer.writerow(
                [
                    report.scenario,
                    report.n_replicates,
                    report.n_failed,
                    repr(report.mean_bias),
                    repr(report.sd_bias),
                    repr(report.mean_estimate),
                    repr(report.mean_truth),
                    repr(report.rmse),
                    "" if report.coverage is None else repr(report.coverage),
                    repr(report.mean_nc_difference),
                    repr(report.nc_negative_fraction),
                    report.verdict_counts.get("no_flags", 0),
                    report.verdict_counts.get("stochastic_concern", 0),
                    report.verdict_counts.get("structural_violation", 0),
                ]
            )
    return paths
