"""Efficient influence functions, efficiency bounds and relative efficiencies.

Observations are held column-wise. ``z`` marks trial membership; ``a`` and
``y`` are ``nan`` for rows outside the trial.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .allocation import density_ratio, participation_propensity
from .exceptions import DataError, DomainError
from .model import (
    AllocationDesign,
    CovariateDistribution,
    Generalize,
    OutcomeModel,
    PostStratify,
    TargetSpec,
    Transport,
    Trial,
    estimand_value,
    stratum_effects,
    stratum_probabilities,
    target_expect,
)
from .numerics import DEFAULT_ORDER, RngStream, as_generator


@dataclass(frozen=True)
class Observation:
    w1: np.ndarray
    w2: np.ndarray
    z: np.ndarray | None = None
    a: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        for name in ("w1", "w2", "z", "a", "y"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.atleast_1d(np.asarray(val, dtype=float)))

    @property
    def in_trial(self) -> np.ndarray:
        return np.ones(self.w1.shape, bool) if self.z is None else self.z == 1


@dataclass(frozen=True)
class NuisanceSet:
    """Functions and constants appearing in the influence functions."""

    m: Callable
    p: Callable
    delta_star: float
    r: Callable | None = None
    e: Callable | None = None
    gamma: float | None = None
    strata: PostStratify | None = None
    tau: np.ndarray | None = None
    stratum_effects: np.ndarray | None = None


def _residual_term(obs: Observation, nu: NuisanceSet) -> np.ndarray:
    """``A (Y - m1)/p - (1 - A)(Y - m0)/(1 - p)`` on trial rows, 0 elsewhere."""
    trial = obs.in_trial
    out = np.zeros(obs.w1.shape)
    if not trial.any():
        return out
    if obs.a is None or obs.y is None:
        raise DataError("trial rows need treatment and outcome")
    w1, w2 = obs.w1[trial], obs.w2[trial]
    a, y = obs.a[trial], obs.y[trial]
    if np.any(np.isnan(a)) or np.any(np.isnan(y)):
        raise DataError("missing treatment or outcome on a trial row")
    p = nu.p(w1, w2)
    out[trial] = a * (y - nu.m(1, w1, w2)) / p - (1 - a) * (y - nu.m(0, w1, w2)) / (1 - p)
    return out


def _delta(nu: NuisanceSet, w1, w2):
    return nu.m(1, w1, w2) - nu.m(0, w1, w2)


def psi_transport(obs: Observation, nu: NuisanceSet) -> np.ndarray:
    z = obs.in_trial.astype(float)
    g = nu.gamma
    r = nu.r(obs.w1, obs.w2)
    return ((1 - z) * (_delta(nu, obs.w1, obs.w2) - nu.delta_star) / (1 - g)
            + r * _residual_term(obs, nu) / g)


def psi_generalize(obs: Observation, nu: NuisanceSet) -> np.ndarray:
    e = nu.e(obs.w1, obs.w2)
    return _delta(nu, obs.w1, obs.w2) - nu.delta_star + _residual_term(obs, nu) / e


def psi_poststrat(obs: Observation, nu: NuisanceSet) -> np.ndarray:
    k = nu.strata.stratum_index(obs.w1, obs.w2)
    if np.any(k < 0):
        raise DataError(f"rows {np.flatnonzero(k < 0).tolist()} fall outside every stratum")
    weight = np.asarray(nu.strata.weights)[k] / np.asarray(nu.tau)[k]
    centred = _delta(nu, obs.w1, obs.w2) - np.asarray(nu.stratum_effects)[k]
    return weight * (centred + _residual_term(obs, nu))


def psi_trial(obs: Observation, nu: NuisanceSet) -> np.ndarray:
    """Trial ATE influence function (post-stratification with a single stratum)."""
    return _delta(nu, obs.w1, obs.w2) - nu.delta_star + _residual_term(obs, nu)


def psi(target: TargetSpec, obs: Observation, nu: NuisanceSet) -> np.ndarray:
    if isinstance(target, Trial):
        return psi_trial(obs, nu)
    if isinstance(target, Transport):
        return psi_transport(obs, nu)
    if isinstance(target, Generalize):
        return psi_generalize(obs, nu)
    return psi_poststrat(obs, nu)


def true_nuisances(design: AllocationDesign, target: TargetSpec, trial: CovariateDistribution,
                   outcome: OutcomeModel, gamma: float = 0.5,
                   order: int = DEFAULT_ORDER) -> NuisanceSet:
    """Nuisances evaluated at the data-generating truth."""
    kwargs = {}
    if isinstance(target, Transport):
        kwargs.update(r=density_ratio(trial, target, order), gamma=gamma)
    elif isinstance(target, Generalize):
        kwargs.update(e=participation_propensity(trial, target), gamma=target.gamma,
                      r=density_ratio(trial, target, order))
    elif isinstance(target, PostStratify):
        kwargs.update(strata=target, tau=stratum_probabilities(trial, target.strata, order),
                      stratum_effects=stratum_effects(outcome, trial, target, order))
    return NuisanceSet(m=outcome.mean, p=design.prob,
                       delta_star=estimand_value(outcome, trial, target, order), **kwargs)


def simulate_observations(design: AllocationDesign, target: TargetSpec,
                          trial: CovariateDistribution, outcome: OutcomeModel, n: int,
                          rng, gamma: float = 0.5) -> Observation:
    """``n`` i.i.d. copies of the observed-data unit ``O`` for the given case."""
    gen = as_generator(rng)
    if isinstance(target, Transport):
        z = (gen.random(n) < gamma).astype(float)
        tw1, tw2 = trial.sample(gen, n)
        sw1, sw2 = target.law.sample(gen, n)
        w1, w2 = np.where(z == 1, tw1, sw1), np.where(z == 1, tw2, sw2)
    elif isinstance(target, Generalize):
        w1, w2 = target.law.sample(gen, n)
        e = participation_propensity(trial, target)(w1, w2)
        z = (gen.random(n) < e).astype(float)
    else:
        w1, w2 = trial.sample(gen, n)
        z = np.ones(n)
    a = (gen.random(n) < design.prob(w1, w2)).astype(float)
    y = outcome.sample(a, w1, w2, gen)
    a = np.where(z == 1, a, np.nan)
    y = np.where(z == 1, y, np.nan)
    return Observation(w1=w1, w2=w2, z=z, a=a, y=y)


def variance_bound(design: AllocationDesign, target: TargetSpec, trial: CovariateDistribution,
                   outcome: OutcomeModel, gamma: float = 0.5,
                   method: Literal["quadrature", "monte_carlo"] = "quadrature",
                   n: int = 1_000_000, stream: RngStream | None = None,
                   order: int = DEFAULT_ORDER) -> float:
    """Variance of the efficient influence function under ``design``.

    The quadrature route uses the closed-form decomposition (cross terms vanish
    because outcome residuals have conditional mean zero)::

        transport    Var*(delta)/(1-gamma) + E_F[r^2 (v1/p + v0/(1-p))]/gamma
        generalize   Var*(delta)           + E_F[r^2 (v1/p + v0/(1-p))]/gamma
        poststrat    E_F[r^2 {(delta - Delta_k)^2 + v1/p + v0/(1-p)}]

    The Monte Carlo route is the empirical variance of the influence function
    over ``n`` simulated observations.
    """
    if method == "monte_carlo":
        values = psi_monte_carlo(design, target, trial, outcome, n, stream or RngStream(0), gamma, order)
        return float(np.var(values, ddof=1))
    if method != "quadrature":
        raise DomainError(f"unknown method {method!r}")

    r = density_ratio(trial, target, order)
    breaks = target.breakpoints if isinstance(target, PostStratify) else []

    def noise(w1, w2):
        p = design.prob(w1, w2)
        return outcome.variance(1, w1, w2) / p + outcome.variance(0, w1, w2) / (1 - p)

    if isinstance(target, PostStratify):
        effects = stratum_effects(outcome, trial, target, order)

        def integrand(w1, w2):
            k = target.stratum_index(w1, w2)
            centred = outcome.mean(1, w1, w2) - outcome.mean(0, w1, w2) - effects[k]
            return r(w1, w2) ** 2 * (centred**2 + noise(w1, w2))

        return trial.expect(integrand, order, breaks)

    noise_part = trial.expect(lambda w1, w2: r(w1, w2) ** 2 * noise(w1, w2), order, breaks)
    centre = estimand_value(outcome, trial, target, order)
    spread = target_expect(
        lambda w1, w2: (outcome.mean(1, w1, w2) - outcome.mean(0, w1, w2) - centre) ** 2,
        trial, target, order)
    if isinstance(target, Trial):
        return spread + noise_part
    if isinstance(target, Transport):
        return spread / (1 - gamma) + noise_part / gamma
    return spread + noise_part / target.gamma


def psi_monte_carlo(design: AllocationDesign, target: TargetSpec, trial: CovariateDistribution,
                    outcome: OutcomeModel, n: int, stream, gamma: float = 0.5,
                    order: int = DEFAULT_ORDER, chunk: int = 250_000) -> np.ndarray:
    """Influence-function values at ``n`` simulated observations with true nuisances.

    Work is split into chunks whose streams are children of ``stream``.
    """
    if not isinstance(stream, RngStream):
        stream = RngStream(int(as_generator(stream).integers(2**63)))
    nu = true_nuisances(design, target, trial, outcome, gamma, order)
    g = nu.gamma if nu.gamma is not None else gamma
    parts = []
    for i, start in enumerate(range(0, n, chunk)):
        size = min(chunk, n - start)
        obs = simulate_observations(design, target, trial, outcome, size, stream.child(i), g)
        parts.append(psi(target, obs, nu))
    return np.concatenate(parts)


def relative_efficiency(reference: AllocationDesign, candidate: AllocationDesign,
                        target: TargetSpec, trial: CovariateDistribution,
                        outcome: OutcomeModel, gamma: float = 0.5,
                        order: int = DEFAULT_ORDER) -> float:
    """Bound under ``reference`` divided by the bound under ``candidate``."""
    denom = variance_bound(candidate, target, trial, outcome, gamma, order=order)
    if denom <= 0:
        raise DomainError("candidate design has a zero efficiency bound")
    return variance_bound(reference, target, trial, outcome, gamma, order=order) / denom
