"""Synthetic trials and cohorts, and replicated design-comparison studies."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import density_ratio, participation_propensity
from .estimate import (
    FittedNuisances,
    GeneralizationCohort,
    TargetCohort,
    TrialDataset,
    estimate_generalize,
    estimate_poststrat,
    estimate_transport,
    estimate_trial,
    fit_density_ratio,
    fit_outcome_regression,
    fit_participation,
)
from .exceptions import DomainError, PopallocError
from .model import (
    AllocationDesign,
    CovariateDistribution,
    Generalize,
    MixtureLaw,
    OutcomeModel,
    PostStratify,
    ProductLaw,
    Transport,
    Trial,
    estimand_value,
)
from .numerics import RngStream, as_generator

log = logging.getLogger(__name__)

ESTIMANDS = ("trial", "transport", "generalize", "poststrat")


def generate_trial(trial_law: CovariateDistribution, outcome: OutcomeModel,
                   design: AllocationDesign, n: int, rng) -> TrialDataset:
    gen = as_generator(rng)
    w1, w2 = trial_law.sample(gen, n)
    p = design.prob(w1, w2)
    a = (gen.random(n) < p).astype(float)
    y = outcome.sample(a, w1, w2, gen)
    return TrialDataset(w1, w2, a, y, p)


def generate_target(target_law: CovariateDistribution, n_star: int, rng) -> TargetCohort:
    if n_star < 1:
        raise DomainError("target cohort size must be at least 1")
    w1, w2 = target_law.sample(as_generator(rng), n_star)
    return TargetCohort(w1, w2)


def generate_generalization_cohort(trial_law: ProductLaw, transport_law: CovariateDistribution,
                                   outcome: OutcomeModel, design: AllocationDesign, n: int,
                                   rng, weight: float = 0.5,
                                   block: int = 256) -> GeneralizationCohort:
    """Enrol from ``weight F + (1 - weight) F_tr`` until ``n`` trial participants.

    Each screened subject joins the trial with probability
    ``e(w) = weight f(w) / f_gen(w)``, so the trial subset follows ``F`` and the
    total cohort size is negative binomial.
    """
    if n < 1:
        raise DomainError("need at least one trial participant")
    gen = as_generator(rng)
    law = MixtureLaw(trial_law, transport_law, weight)
    e_fn = participation_propensity(trial_law, Generalize(law, weight))
    cols1, cols2, colz = [], [], []
    enrolled = 0
    while enrolled < n:
        w1, w2 = law.sample(gen, block)
        z = (gen.random(block) < e_fn(w1, w2)).astype(float)
        csum = np.cumsum(z)
        stop = np.searchsorted(csum, n - enrolled)  # first index reaching the quota
        take = block if stop >= block else stop + 1
        cols1.append(w1[:take])
        cols2.append(w2[:take])
        colz.append(z[:take])
        enrolled += int(z[:take].sum())
    w1, w2, z = np.concatenate(cols1), np.concatenate(cols2), np.concatenate(colz)
    s = z == 1
    p = np.full(z.shape, np.nan)
    a = np.full(z.shape, np.nan)
    y = np.full(z.shape, np.nan)
    p[s] = design.prob(w1[s], w2[s])
    a[s] = (gen.random(int(s.sum())) < p[s]).astype(float)
    y[s] = outcome.sample(a[s], w1[s], w2[s], gen)
    return GeneralizationCohort(w1, w2, z, a, y, p)


# ---------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class StudyConfig:
    trial: ProductLaw
    outcome: OutcomeModel
    transport_law: ProductLaw
    strata: PostStratify
    designs: dict
    mixture_weight: float = 0.5
    n: int = 250
    n_star: int = 250
    replications: int = 5000
    master_seed: int = 0
    oracle: bool = False
    reference: str | None = None

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("trial size must be at least 2")
        if self.replications < 1:
            raise DomainError("need at least one replication")
        if not self.designs:
            raise DomainError("no designs to compare")
        if self.reference is not None and self.reference not in self.designs:
            raise DomainError(f"reference design {self.reference!r} not among designs")

    @property
    def reference_label(self) -> str:
        return self.reference or next(iter(self.designs))

    def targets(self) -> dict:
        return {
            "trial": Trial(),
            "transport": Transport(self.transport_law),
            "generalize": Generalize(MixtureLaw(self.trial, self.transport_law, self.mixture_weight),
                                     self.mixture_weight),
            "poststrat": self.strata,
        }

    def truths(self) -> dict:
        return {k: estimand_value(self.outcome, self.trial, t) for k, t in self.targets().items()}


@dataclass(frozen=True)
class CellSummary:
    mean: float
    variance: float
    bias: float
    bias_se: float
    relative_efficiency: float
    re_se: float
    coverage: float
    mean_std_error: float
    replications: int


@dataclass
class StudyResult:
    designs: list
    estimands: list
    truths: dict
    cells: dict  # (design, estimand) -> CellSummary
    reference: str
    master_seed: int
    failures: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict, repr=False)

    def relative_efficiency_table(self) -> list[list]:
        rows = [["design", *self.estimands]]
        for d in self.designs:
            rows.append([d, *(self.cells[d, e].relative_efficiency for e in self.estimands)])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.relative_efficiency_table():
                w.writerow([row[0], *(f"{v:.6f}" if isinstance(v, float) else v for v in row[1:])])

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "reference": self.reference,
            "truths": self.truths,
            "failures": self.failures,
            "cells": {
                d: {e: {k: None if isinstance(v, float) and math.isnan(v) else v
                        for k, v in vars(self.cells[d, e]).items()}
                    for e in self.estimands}
                for d in self.designs
            },
        }

    def write_json(self, path, extra: dict | None = None) -> None:
        payload = self.to_dict() | (extra or {})
        Path(path).write_text(json.dumps(payload, indent=2, default=float))


def _oracle_nuisances(config: StudyConfig, targets: dict):
    trial_nu = FittedNuisances(config.outcome)
    transport_nu = FittedNuisances(config.outcome, ratio=density_ratio(config.trial, targets["transport"]))
    gen_nu = FittedNuisances(config.outcome,
                             participation=participation_propensity(config.trial, targets["generalize"]))
    return trial_nu, transport_nu, gen_nu


def run_replicate(config: StudyConfig, design: AllocationDesign, stream: RngStream) -> np.ndarray:
    """Point estimates and SEs, shape ``(4, 2)`` in ``ESTIMANDS`` order."""
    gen = stream.generator()
    targets = config.targets()
    trial = generate_trial(config.trial, config.outcome, design, config.n, gen)
    target = generate_target(config.transport_law, config.n_star, gen)
    cohort = generate_generalization_cohort(config.trial, config.transport_law, config.outcome,
                                            design, config.n, gen, config.mixture_weight)
    if config.oracle:
        trial_nu, transport_nu, gen_nu = _oracle_nuisances(config, targets)
    else:
        fit = fit_outcome_regression(trial)
        trial_nu = FittedNuisances(fit)
        transport_nu = FittedNuisances(fit, ratio=fit_density_ratio(trial, target))
        gen_nu = FittedNuisances(fit_outcome_regression(cohort.trial()),
                                 participation=fit_participation(cohort))
    reports = (
        estimate_trial(trial, trial_nu),
        estimate_transport(trial, target, transport_nu),
        estimate_generalize(cohort, gen_nu),
        estimate_poststrat(trial, config.strata, trial_nu),
    )
    return np.array([[r.point, r.std_error] for r in reports])


def _run_chunk(config: StudyConfig, design_index: int, design, reps) -> list:
    out = []
    for rep in reps:
        stream = RngStream(config.master_seed, rep).child(design_index)
        try:
            out.append((rep, run_replicate(config, design, stream), None))
        except PopallocError as exc:
            out.append((rep, None, str(exc)))
    return out


def _summarise(est: np.ndarray, ref_points: np.ndarray, truth: float, is_ref: bool) -> CellSummary:
    points, ses = est[:, 0], est[:, 1]
    R = points.size
    mean = float(points.mean())
    half = 1.959963984540054 * ses
    coverage = float(np.mean((points - half <= truth) & (truth <= points + half)))
    if R < 2 or ref_points.size < 2:
        # spread-based summaries need two replicates
        nan = math.nan
        return CellSummary(mean, nan, mean - truth, nan, 1.0 if is_ref else nan, 0.0 if is_ref else nan,
                           coverage, float(ses.mean()), R)
    var = float(points.var(ddof=1))
    ref_var = float(ref_points.var(ddof=1))

    def log_var_variance(x):
        c = x - x.mean()
        kurt = np.mean(c**4) / np.mean(c**2) ** 2
        return (kurt - (R - 3) / (R - 1)) / R

    if is_ref:
        re, re_se = 1.0, 0.0
    else:
        re = ref_var / var
        re_se = re * math.sqrt(max(log_var_variance(points) + log_var_variance(ref_points), 0.0))
    return CellSummary(mean, var, mean - truth, math.sqrt(var / R), re, re_se, coverage,
                       float(ses.mean()), R)


def run_study(config: StudyConfig, jobs: int = 1) -> StudyResult:
    """Replicate every design ``config.replications`` times and summarise.

    Replicate ``i`` of design ``j`` draws from ``RngStream(master_seed, i).child(j)``,
    so results do not depend on ``jobs`` or on completion order.
    """
    labels = list(config.designs)
    reps = range(config.replications)
    chunks = [reps[i : i + 250] for i in range(0, len(reps), 250)]
    tasks = [(j, label, chunk) for j, label in enumerate(labels) for chunk in chunks]
    if jobs == 1:
        results = [_run_chunk(config, j, config.designs[label], chunk) for j, label, chunk in tasks]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(
            delayed(_run_chunk)(config, j, config.designs[label], chunk) for j, label, chunk in tasks
        )
    per_design = {label: {} for label in labels}
    failures = {label: [] for label in labels}
    for (j, label, _), chunk_out in zip(tasks, results):
        for rep, values, err in chunk_out:
            if values is None:
                failures[label].append((rep, err))
            else:
                per_design[label][rep] = values
    for label in labels:
        if len(failures[label]) > 0.01 * config.replications:
            raise PopallocError(
                f"design {label!r}: {len(failures[label])} of {config.replications} replicates failed; "
                f"first error: {failures[label][0][1]}")
        if failures[label]:
            log.warning("design %s: %d replicates excluded", label, len(failures[label]))
    stacked = {label: np.stack([per_design[label][r] for r in sorted(per_design[label])])
               for label in labels}
    truths = config.truths()
    ref = config.reference_label
    cells = {}
    for label in labels:
        for i, est in enumerate(ESTIMANDS):
            cells[label, est] = _summarise(stacked[label][:, i], stacked[ref][:, i, 0],
                                           truths[est], label == ref)
    return StudyResult(labels, list(ESTIMANDS), truths, cells, ref, config.master_seed,
                       {k: len(v) for k, v in failures.items()}, stacked)
