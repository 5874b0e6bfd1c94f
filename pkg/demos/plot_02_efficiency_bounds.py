"""
Efficiency bounds and relative efficiencies
===========================================

The asymptotic variance of the efficient estimator is the variance of the
efficient influence function. Comparing it across designs gives the relative
efficiency of each design against 1:1 randomization.
"""

from popalloc import scenario
from popalloc.allocation import design_moments, optimal_cdr, optimal_cir
from popalloc.eif import psi_monte_carlo, variance_bound
from popalloc.model import CIR
from popalloc.numerics import RngStream

setting = scenario.baseline_setting()
targets = setting.targets()

designs = {"pi=0.5": CIR(0.5)}
for name, target in targets.items():
    designs[f"pi_opt[{name}]"] = CIR(optimal_cir(design_moments(setting.trial, target, setting.outcome)))
designs["p_opt"] = optimal_cdr(setting.outcome)

###############################################################################
# Bounds by quadrature, then each row divided into the reference row.

bounds = {(d, t): variance_bound(designs[d], targets[t], setting.trial, setting.outcome)
          for d in designs for t in targets}
print(f"{'design':<20}" + "".join(f"{t:>12}" for t in targets))
for d in designs:
    print(f"{d:<20}" + "".join(f"{bounds['pi=0.5', t] / bounds[d, t]:12.3f}" for t in targets))

###############################################################################
# The bound is also the variance of simulated influence-function values,
# which checks the closed form. The influence function of the transported
# effect is heavy tailed, so a million draws still leave about 1% noise.

x = psi_monte_carlo(CIR(0.5), targets["transport"], setting.trial, setting.outcome, 1_000_000, RngStream(1))
print(f"transport, pi=0.5: quadrature {bounds['pi=0.5', 'transport']:.3f}, simulated {x.var():.3f}")
