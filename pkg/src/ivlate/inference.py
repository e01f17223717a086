"""Estimator registry, bootstrap intervals, and the Monte Carlo harness.

``fit_estimator`` is the single entry point that knows every estimator
tag, which scales and misspecification scenarios each supports, and how
to share first-stage fits between related estimators on the same data.
``bootstrap_ci`` wraps any fit in row-resampling percentile intervals.
``monte_carlo_study`` repeats the whole battery over simulated datasets
and aggregates bias, spread, and (optionally) bootstrap coverage into a
serializable report.

Every random stream is keyed by (master seed, run index), so a study is
reproducible run-by-run and identical whether executed serially or on a
thread pool.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .comparators import (
    fit_dr_ogburn,
    fit_dru_wang,
    fit_ls_abadie,
    fit_mle_crude,
    fit_mle_wang,
    fit_reg_ogburn,
)
from .data import Dataset
from .estimators import FitResult, fit_dr, fit_dr_simple, fit_mle
from .optimize import OptimConfig
from .params import DomainError, Scale
from .simulate import SCENARIOS, DgpSpec, generate_dataset, scenario_modelset

__all__ = [
    "SCHEMA_VERSION",
    "EstimatorInfo",
    "ESTIMATORS",
    "FitContext",
    "fit_estimator",
    "BootstrapResult",
    "bootstrap_ci",
    "McConfig",
    "McCell",
    "McReport",
    "monte_carlo_study",
]

SCHEMA_VERSION = 1

_BOTH = (Scale.ADDITIVE, Scale.MULTIPLICATIVE)


@dataclass(frozen=True)
class EstimatorInfo:
    """Registry row: which scales and scenarios an estimator admits."""

    tag: str
    scales: tuple = _BOTH
    scenarios: tuple = SCENARIOS
    outcome_model_kept: bool = False
    scenario_free: bool = False


ESTIMATORS = {
    info.tag: info for info in (
        EstimatorInfo("mle"),
        EstimatorInfo("dru"),
        EstimatorInfo("drw"),
        EstimatorInfo("dru.simple"),
        EstimatorInfo("reg.ogburn"),
        EstimatorInfo("dru.ogburn"),
        EstimatorInfo("drw.ogburn"),
        EstimatorInfo("mle.wang", scales=(Scale.ADDITIVE,)),
        EstimatorInfo("dru.wang", scales=(Scale.ADDITIVE,)),
        EstimatorInfo("ls.abadie", scenarios=("bth", "bad"),
                      outcome_model_kept=True),
        EstimatorInfo("mle.crude", scenarios=("all",), scenario_free=True),
    )
}


class FitContext:
    """Shared fitting state for one dataset.

    Estimators that reuse another estimator's output (the doubly robust
    fits reuse stage-one likelihood or regression fits) get them from
    here, so a battery of estimators never fits the same stage twice.
    Cache keys are the model column selections, not scenario names: two
    scenarios that wire the same columns into a stage share its fit.

    ``warm`` maps (tag, scenario) to an earlier FitResult used to start
    the corresponding search; bootstrap replicates warm-start from the
    point fit this way.
    """

    def __init__(self, data: Dataset, scale: Scale,
                 cfg: OptimConfig = OptimConfig(), one_sided: bool = False,
                 warm: dict | None = None):
        self.data = data
        self.scale = scale
        self.cfg = cfg
        self.one_sided = one_sided
        self.warm = warm or {}
        self._cache = {}

    def modelset(self, scenario: str, outcome_model_kept: bool = False):
        key = ("ms", scenario, outcome_model_kept)
        if key not in self._cache:
            self._cache[key] = scenario_modelset(
                self.data, scenario, self.scale, one_sided=self.one_sided,
                outcome_model_kept=outcome_model_kept)
        return self._cache[key]

    def _warm_alpha(self, tag: str, scenario: str):
        fit = self.warm.get((tag, scenario))
        return None if fit is None else fit.alpha

    def stage_mle(self, scenario: str) -> FitResult:
        ms = self.modelset(scenario)
        key = ("mle", ms.effect.cols, ms.complier.cols)
        if key not in self._cache:
            warm = self.warm.get(("mle", scenario))
            x0 = None if warm is None or warm.model is None \
                else warm.model.pack_coefs()
            self._cache[key] = fit_mle(ms, self.data, self.cfg, x0=x0)
        return self._cache[key]

    def stacked_reg(self, scenario: str) -> FitResult:
        ms = self.modelset(scenario)
        key = ("reg", ms.effect.cols, ms.complier.cols)
        if key not in self._cache:
            self._cache[key] = fit_reg_ogburn(ms, self.data, self.cfg)
        return self._cache[key]

    def two_stage(self, scenario: str) -> FitResult:
        ms = self.modelset(scenario)
        key = ("wang", ms.effect.cols, ms.complier.cols)
        if key not in self._cache:
            self._cache[key] = fit_mle_wang(ms, self.data, self.cfg)
        return self._cache[key]

    def fit(self, tag: str, scenario: str) -> FitResult:
        info = ESTIMATORS.get(tag)
        if info is None:
            raise DomainError(f"unknown estimator {tag!r}; expected one of "
                              f"{tuple(ESTIMATORS)}")
        if self.scale not in info.scales:
            raise DomainError(f"{tag} does not support {self.scale.value}")
        if info.scenario_free:
            scenario = "all"
        elif scenario not in info.scenarios:
            raise DomainError(
                f"{tag} does not run under scenario {scenario!r}")

        alpha0 = self._warm_alpha(tag, scenario)
        if tag == "mle":
            return self.stage_mle(scenario)
        if tag in ("dru", "drw"):
            mode = "identity" if tag == "dru" else "optimal"
            return fit_dr(self.modelset(scenario), self.data, self.cfg,
                          weight_mode=mode, alpha0=alpha0,
                          stage1=self.stage_mle(scenario))
        if tag == "dru.simple":
            return fit_dr_simple(self.modelset(scenario), self.data,
                                 self.cfg, alpha0=alpha0)
        if tag == "reg.ogburn":
            return self.stacked_reg(scenario)
        if tag in ("dru.ogburn", "drw.ogburn"):
            mode = "identity" if tag == "dru.ogburn" else "optimal"
            return fit_dr_ogburn(self.modelset(scenario), self.data,
                                 self.cfg, weight_mode=mode,
                                 reg=self.stacked_reg(scenario))
        if tag == "mle.wang":
            return self.two_stage(scenario)
        if tag == "dru.wang":
            return fit_dru_wang(self.modelset(scenario), self.data,
                                self.cfg, wang=self.two_stage(scenario))
        if tag == "ls.abadie":
            ms = self.modelset(scenario, outcome_model_kept=True)
            return fit_ls_abadie(ms, self.data, self.cfg)
        # mle.crude: every model term uses the effect columns
        key = ("crude",)
        if key not in self._cache:
            self._cache[key] = fit_mle_crude(self.modelset("bth"),
                                             self.data, self.cfg)
        return self._cache[key]


def fit_estimator(tag: str, data: Dataset, scale: Scale,
                  scenario: str = "bth", cfg: OptimConfig = OptimConfig(),
                  one_sided: bool = False) -> FitResult:
    """Fit one estimator by registry tag on one dataset."""
    return FitContext(data, scale, cfg, one_sided).fit(tag, scenario)


# ---------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class BootstrapResult:
    """Percentile interval from row-resampled refits.

    ``unreliable`` flags an interval where more than half the replicate
    fits failed; the quantiles are still reported from whatever converged.
    """

    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_success: int
    n_total: int
    unreliable: bool
    samples: np.ndarray


def _quantile_ci(samples: np.ndarray, level: float):
    tail = (1.0 - level) / 2.0
    lower = np.quantile(samples, tail, axis=0)
    upper = np.quantile(samples, 1.0 - tail, axis=0)
    return lower, upper


def bootstrap_ci(data: Dataset, fit_fn, reps: int = 200, seed: int = 0,
                 level: float = 0.95) -> BootstrapResult:
    """Percentile bootstrap over row resamples.

    ``fit_fn`` takes a resampled Dataset and returns a FitResult; only
    converged replicates with finite coefficients enter the quantiles.
    """
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie strictly inside (0, 1)")
    rng = np.random.default_rng(seed)
    kept = []
    for _ in range(reps):
        idx = rng.integers(0, data.n, data.n)
        fit = fit_fn(data.take(idx))
        if fit.converged and np.all(np.isfinite(fit.alpha)):
            kept.append(np.asarray(fit.alpha, dtype=float))
    n_success = len(kept)
    unreliable = (reps - n_success) * 2 > reps
    if kept:
        samples = np.array(kept)
        lower, upper = _quantile_ci(samples, level)
    else:
        samples = np.empty((0, 0))
        lower = upper = np.array([np.nan])
    return BootstrapResult(lower=lower, upper=upper, level=level,
                           n_success=n_success, n_total=reps,
                           unreliable=unreliable, samples=samples)


# ---------------------------------------------------------------------------
# Monte Carlo study


@dataclass(frozen=True)
class McConfig:
    """Study layout: which estimators and scenarios, how many runs."""

    runs: int = 500
    n: int = 1000
    scale: Scale = Scale.ADDITIVE
    master_seed: int = 0
    estimators: tuple | None = None
    scenarios: tuple = SCENARIOS
    one_sided: bool = False
    threads: int = 1
    boot: int = 0
    level: float = 0.95
    coverage: tuple = ()  # (estimator, scenario) pairs to bootstrap


@dataclass(frozen=True)
class McCell:
    """Aggregated results for one estimator under one scenario."""

    estimator: str
    scenario: str
    n_runs: int
    n_converged: int
    mean: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    mc_se: np.ndarray
    coverage: np.ndarray | None = None
    coverage_runs: int = 0

    @property
    def label(self) -> str:
        if self.scenario == "all":
            return self.estimator
        return f"{self.estimator}.{self.scenario}"


@dataclass(frozen=True)
class McReport:
    """Full study output; serializes to JSON and long-format CSV."""

    scale: Scale
    runs: int
    n: int
    master_seed: int
    coef_names: tuple
    truth: np.ndarray
    cells: tuple
    boot: int = 0
    level: float = 0.95

    def cell(self, estimator: str, scenario: str = "bth") -> McCell:
        if ESTIMATORS.get(estimator) is not None \
                and ESTIMATORS[estimator].scenario_free:
            scenario = "all"
        for cell in self.cells:
            if cell.estimator == estimator and cell.scenario == scenario:
                return cell
        raise DomainError(f"no cell {estimator!r} x {scenario!r} in report")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "mc_report",
            "scale": self.scale.value,
            "runs": self.runs,
            "n": self.n,
            "master_seed": self.master_seed,
            "boot": self.boot,
            "level": self.level,
            "coef_names": list(self.coef_names),
            "truth": [float(t) for t in self.truth],
            "cells": [
                {
                    "estimator": c.estimator,
                    "scenario": c.scenario,
                    "n_runs": c.n_runs,
                    "n_converged": c.n_converged,
                    "mean": [float(v) for v in c.mean],
                    "bias": [float(v) for v in c.bias],
                    "sd": [float(v) for v in c.sd],
                    "mc_se": [float(v) for v in c.mc_se],
                    "coverage": None if c.coverage is None
                    else [float(v) for v in c.coverage],
                    "coverage_runs": c.coverage_runs,
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "McReport":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DomainError(f"unsupported schema_version {version!r}")
        if payload.get("kind") != "mc_report":
            raise DomainError("payload is not a Monte Carlo report")
        cells = tuple(
            McCell(
                estimator=c["estimator"],
                scenario=c["scenario"],
                n_runs=int(c["n_runs"]),
                n_converged=int(c["n_converged"]),
                mean=np.asarray(c["mean"], dtype=float),
                bias=np.asarray(c["bias"], dtype=float),
                sd=np.asarray(c["sd"], dtype=float),
                mc_se=np.asarray(c["mc_se"], dtype=float),
                coverage=None if c.get("coverage") is None
                else np.asarray(c["coverage"], dtype=float),
                coverage_runs=int(c.get("coverage_runs", 0)),
            )
            for c in payload["cells"]
        )
        return cls(
            scale=Scale.parse(payload["scale"]),
            runs=int(payload["runs"]),
            n=int(payload["n"]),
            master_seed=int(payload["master_seed"]),
            coef_names=tuple(payload["coef_names"]),
            truth=np.asarray(payload["truth"], dtype=float),
            cells=cells,
            boot=int(payload.get("boot", 0)),
            level=float(payload.get("level", 0.95)),
        )

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)
            handle.write("\n")

    @classmethod
    def load_json(cls, path) -> "McReport":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def save_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["estimator", "scenario", "coef", "truth",
                             "mean", "bias", "sd", "mc_se", "n_runs",
                             "n_converged", "coverage", "coverage_runs"])
            for c in self.cells:
                for j, name in enumerate(self.coef_names):
                    cov = "" if c.coverage is None else repr(
                        float(c.coverage[j]))
                    writer.writerow([
                        c.estimator, c.scenario, name,
                        repr(float(self.truth[j])),
                        repr(float(c.mean[j])), repr(float(c.bias[j])),
                        repr(float(c.sd[j])), repr(float(c.mc_se[j])),
                        c.n_runs, c.n_converged, cov, c.coverage_runs,
                    ])


def _study_pairs(mc: McConfig) -> list:
    """Ordered (estimator, scenario) cells the study will fill."""
    tags = tuple(ESTIMATORS) if mc.estimators is None else mc.estimators
    pairs = []
    for tag in tags:
        info = ESTIMATORS.get(tag)
        if info is None:
            raise DomainError(f"unknown estimator {tag!r}; expected one of "
                              f"{tuple(ESTIMATORS)}")
        if mc.scale not in info.scales:
            if mc.estimators is not None:
                raise DomainError(
                    f"{tag} does not support {mc.scale.value}")
            continue
        if info.scenario_free:
            pairs.append((tag, "all"))
            continue
        for scenario in mc.scenarios:
            if scenario in info.scenarios:
                pairs.append((tag, scenario))
    return pairs


def _run_seed(master_seed: int, run: int) -> int:
    state = np.random.SeedSequence((master_seed, run)).generate_state(
        1, np.uint64)
    return int(state[0])


def _one_run(run: int, mc: McConfig, dgp: DgpSpec, cfg: OptimConfig,
             pairs, coverage_pairs, truth):
    spec = replace(dgp, n=mc.n, scale=mc.scale, one_sided=mc.one_sided,
                   seed=_run_seed(mc.master_seed, run))
    data = generate_dataset(spec)
    ctx = FitContext(data, mc.scale, cfg, mc.one_sided)
    points = {pair: ctx.fit(*pair) for pair in pairs}
    out = {pair: (np.asarray(fit.alpha, dtype=float), bool(fit.converged))
           for pair, fit in points.items()}

    covered = {}
    if coverage_pairs and mc.boot > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence((mc.master_seed, run, 1)))
        warm = {}
        for pair in coverage_pairs:
            warm[pair] = points[pair]
            if pair[0] in ("mle", "dru", "drw"):
                # replicate stage-one searches start at the run's fit
                warm[("mle", pair[1])] = ctx.stage_mle(pair[1])
        samples = {pair: [] for pair in coverage_pairs}
        for _ in range(mc.boot):
            idx = rng.integers(0, data.n, data.n)
            bctx = FitContext(data.take(idx), mc.scale, cfg, mc.one_sided,
                              warm=warm)
            for pair in coverage_pairs:
                fit = bctx.fit(*pair)
                if fit.converged and np.all(np.isfinite(fit.alpha)):
                    samples[pair].append(np.asarray(fit.alpha, dtype=float))
        for pair in coverage_pairs:
            kept = samples[pair]
            reliable = len(kept) * 2 >= mc.boot
            if reliable and kept and out[pair][1]:
                lower, upper = _quantile_ci(np.array(kept), mc.level)
                covered[pair] = (lower <= truth) & (truth <= upper)
            else:
                covered[pair] = None
    return out, covered


def monte_carlo_study(mc: McConfig, dgp: DgpSpec = DgpSpec(),
                      cfg: OptimConfig = OptimConfig()) -> McReport:
    """Repeat the estimator battery over simulated datasets.

    Every run draws a fresh dataset from ``dgp`` (with the study's n,
    scale, and per-run seed), fits each admissible (estimator, scenario)
    cell, and optionally bootstraps the ``coverage`` cells.  Results are
    identical for any thread count.
    """
    if mc.runs < 1:
        raise DomainError("runs must be positive")
    pairs = _study_pairs(mc)
    coverage_pairs = []
    for tag, scenario in mc.coverage:
        if (tag, scenario) not in pairs:
            raise DomainError(
                f"coverage cell {tag}.{scenario} is not in the study")
        coverage_pairs.append((tag, scenario))

    probe = generate_dataset(replace(dgp, n=2))
    template = scenario_modelset(probe, "bth", mc.scale,
                                 one_sided=mc.one_sided)
    coef_names = tuple(f"effect:{probe.colnames[i]}"
                       for i in template.effect.cols)
    truth = np.asarray(dgp.effect_coef, dtype=float)

    args = [(run, mc, dgp, cfg, pairs, coverage_pairs, truth)
            for run in range(mc.runs)]
    if mc.threads > 1:
        with ThreadPoolExecutor(max_workers=mc.threads) as pool:
            results = list(pool.map(lambda a: _one_run(*a), args))
    else:
        results = [_one_run(*a) for a in args]

    cells = []
    for pair in pairs:
        alphas = np.array([res[0][pair][0] for res in results])
        conv = np.array([res[0][pair][1] for res in results])
        ok = conv & np.all(np.isfinite(alphas), axis=1)
        n_conv = int(ok.sum())
        if n_conv > 0:
            mean = alphas[ok].mean(axis=0)
            sd = alphas[ok].std(axis=0, ddof=1) if n_conv > 1 \
                else np.full(alphas.shape[1], np.nan)
        else:
            mean = np.full(alphas.shape[1], np.nan)
            sd = np.full(alphas.shape[1], np.nan)
        mc_se = sd / np.sqrt(max(n_conv, 1))
        coverage = None
        coverage_runs = 0
        if pair in coverage_pairs:
            flags = [res[1][pair] for res in results
                     if res[1].get(pair) is not None]
            coverage_runs = len(flags)
            if coverage_runs:
                coverage = np.mean(np.array(flags, dtype=float), axis=0)
        cells.append(McCell(
            estimator=pair[0], scenario=pair[1], n_runs=mc.runs,
            n_converged=n_conv, mean=mean, bias=mean - truth, sd=sd,
            mc_se=mc_se, coverage=coverage, coverage_runs=coverage_runs))

    return McReport(scale=mc.scale, runs=mc.runs, n=mc.n,
                    master_seed=mc.master_seed, coef_names=coef_names,
                    truth=truth, cells=tuple(cells), boot=mc.boot,
                    level=mc.level)
