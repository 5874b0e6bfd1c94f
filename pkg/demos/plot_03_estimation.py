"""
Doubly robust estimates from one simulated study
================================================

Simulate a trial under the optimal covariate-dependent design, an external
target cohort and an enrolment cohort, then estimate all four effects with
one-step estimators and influence-function standard errors.
"""

import numpy as np

from popalloc import scenario
from popalloc.allocation import optimal_cdr
from popalloc.estimate import (
    FittedNuisances,
    estimate_generalize,
    estimate_poststrat,
    estimate_transport,
    estimate_trial,
    fit_density_ratio,
    fit_outcome_regression,
    fit_participation,
)
from popalloc.model import estimand_value
from popalloc.simulate import generate_generalization_cohort, generate_target, generate_trial

setting = scenario.baseline_setting()
targets = setting.targets()
design = optimal_cdr(setting.outcome)
rng = np.random.default_rng(2024)

trial = generate_trial(setting.trial, setting.outcome, design, 1000, rng)
target = generate_target(setting.transport_law, 1000, rng)
cohort = generate_generalization_cohort(setting.trial, setting.transport_law, setting.outcome,
                                        design, 1000, rng)
print(f"trial n={len(trial)}, target n*={len(target)}, enrolment cohort N={len(cohort)}")

###############################################################################
# Outcome regressions per arm, a trial-vs-target membership model for the
# density ratio, and a participation model inside the enrolment cohort.

outcome_fit = fit_outcome_regression(trial)
reports = {
    "trial": estimate_trial(trial, FittedNuisances(outcome_fit)),
    "transport": estimate_transport(trial, target,
                                    FittedNuisances(outcome_fit, ratio=fit_density_ratio(trial, target))),
    "generalize": estimate_generalize(cohort, FittedNuisances(fit_outcome_regression(cohort.trial()),
                                                              participation=fit_participation(cohort))),
    "poststrat": estimate_poststrat(trial, targets["poststrat"], FittedNuisances(outcome_fit)),
}

for name, rep in reports.items():
    truth = estimand_value(setting.outcome, setting.trial, targets[name])
    print(f"{name:<11} {rep.point:7.3f} +/- {1.96 * rep.std_error:.3f}   truth {truth:.3f}")
