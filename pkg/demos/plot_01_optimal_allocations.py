"""
Optimal allocation ratios for four target populations
=====================================================

A two-covariate trial with heteroscedastic outcomes is analysed for four
estimands: the trial ATE, a transported effect, a generalized effect and a
post-stratified effect. Each has its own best fixed randomization ratio; one
covariate-dependent propensity beats all of them.
"""

import numpy as np

from popalloc import scenario
from popalloc.allocation import design_moments, optimal_cdr, optimal_cdr_parameters, optimal_cir

setting = scenario.baseline_setting()
targets = setting.targets()

###############################################################################
# Fixed ratios. The arm-1 share grows with the target-weighted outcome spread
# in arm 1, so it moves with the target population.

for name, target in targets.items():
    mom = design_moments(setting.trial, target, setting.outcome)
    print(f"{name:<11} pi_opt = {optimal_cir(mom):.3f}   (m1 = {mom.m1:.3f}, m0 = {mom.m0:.3f})")

###############################################################################
# The covariate-dependent propensity depends on the outcome spreads only, so
# the same function is optimal whatever the target. With log-linear variances
# it is a logistic function of the covariates.

p_opt = optimal_cdr(setting.outcome)
print("logistic coefficients:", optimal_cdr_parameters(setting.outcome))

w1 = np.linspace(-2, 2, 9)
for w2 in (0.0, 1.0):
    row = p_opt.prob(w1, np.full_like(w1, w2))
    print(f"w2={w2:.0f}:", " ".join(f"{p:.2f}" for p in row))
