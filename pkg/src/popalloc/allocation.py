"""Optimal CIR probabilities and CDR propensities for trial and target estimands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DomainError
from .model import (
    CDR,
    CIR,
    IDENTITY,
    CovariateDistribution,
    Generalize,
    LinkFunction,
    OutcomeModel,
    PostStratify,
    Rectangle,
    TargetSpec,
    Transport,
    Trial,
    delta,
    stratum_probabilities,
    target_expect,
)
from .numerics import DEFAULT_ORDER


@dataclass(frozen=True)
class DesignMoments:
    """Design-time expectations that determine the optimal allocations.

    ``m1``/``m0`` are ``E_F[r(W)^2 v_a(W)]``; ``mu1_star``/``mu0_star`` are the
    target-population arm means; ``var_star_delta`` is ``Var_{F*} delta(W)``.
    """

    m1: float
    m0: float
    mu1_star: float
    mu0_star: float
    var_star_delta: float


def density_ratio(trial: CovariateDistribution, target: TargetSpec, order: int = DEFAULT_ORDER):
    """Return ``r(w1, w2) = dF*/dF`` as a vectorised function."""
    if isinstance(target, Trial):
        return lambda w1, w2: np.ones(np.shape(w1))
    if isinstance(target, (Transport, Generalize)):
        law = target.law
        if law.support != trial.support:
            raise DomainError(f"target support {law.support} differs from trial support {trial.support}")
        return lambda w1, w2: np.exp(law.logpdf(w1, w2) - trial.logpdf(w1, w2))
    if isinstance(target, PostStratify):
        tau = stratum_probabilities(trial, target.strata, order)
        if np.any(tau < 1e-12):
            raise DomainError(f"stratum with trial probability below 1e-12: tau = {tau}")
        ratio = np.asarray(target.weights) / tau

        def r(w1, w2):
            k = target.stratum_index(w1, w2)
            if np.any(k < 0):
                raise DomainError("covariate point outside every stratum")
            return ratio[k]

        return r
    raise DomainError(f"unknown target {target!r}")


def participation_propensity(trial: CovariateDistribution, target: Generalize):
    """``e(w) = gamma f(w) / f*(w)``, i.e. ``gamma / r(w)``."""
    r = density_ratio(trial, target)
    return lambda w1, w2: target.gamma / r(w1, w2)


def _breakpoints(target: TargetSpec) -> list[float]:
    return target.breakpoints if isinstance(target, PostStratify) else []


def design_moments(trial: CovariateDistribution, target: TargetSpec, outcome: OutcomeModel,
                   order: int = DEFAULT_ORDER) -> DesignMoments:
    r = density_ratio(trial, target, order)
    breaks = _breakpoints(target)
    m1 = trial.expect(lambda w1, w2: r(w1, w2) ** 2 * outcome.variance(1, w1, w2), order, breaks)
    m0 = trial.expect(lambda w1, w2: r(w1, w2) ** 2 * outcome.variance(0, w1, w2), order, breaks)
    mu1 = target_expect(lambda w1, w2: outcome.mean(1, w1, w2), trial, target, order)
    mu0 = target_expect(lambda w1, w2: outcome.mean(0, w1, w2), trial, target, order)
    centre = mu1 - mu0
    var_star = target_expect(lambda w1, w2: (delta(outcome, w1, w2) - centre) ** 2, trial, target, order)
    return DesignMoments(m1, m0, mu1, mu0, max(var_star, 0.0))


def optimal_cir(moments: DesignMoments, link: LinkFunction = IDENTITY) -> float:
    """Neyman-type allocation ``g'(mu1) sqrt(m1) / (g'(mu1) sqrt(m1) + g'(mu0) sqrt(m0))``."""
    if not (moments.m1 > 0 and moments.m0 > 0):
        raise DomainError(f"moments must be positive, got m1={moments.m1}, m0={moments.m0}")
    s1 = float(link.derivative(moments.mu1_star)) * math.sqrt(moments.m1)
    s0 = float(link.derivative(moments.mu0_star)) * math.sqrt(moments.m0)
    return s1 / (s1 + s0)


def optimal_cdr(outcome: OutcomeModel, link: LinkFunction = IDENTITY,
                moments: DesignMoments | None = None) -> CDR:
    """Optimal covariate-dependent propensity.

    For the identity link the result does not depend on the target population
    and ``moments`` may be omitted. Other links need the target arm means.
    """
    if link.name == "identity":
        shift = 0.0
    else:
        if moments is None:
            raise DomainError(f"{link.name} link needs target arm means")
        shift = math.log(float(link.derivative(moments.mu1_star))) - math.log(
            float(link.derivative(moments.mu0_star)))

    def propensity(w1, w2):
        # p = s1 / (s1 + s0) written as a logistic in log-sd differences
        diff = outcome.log_sd(1, w1, w2) - outcome.log_sd(0, w1, w2) + shift
        with np.errstate(divide="ignore", invalid="ignore"):
            p = 1.0 / (1.0 + np.exp(-diff))
        if np.any(~np.isfinite(diff)) or np.any(~((p > 0.0) & (p < 1.0))):
            raise DomainError(
                "optimal propensity reaches 0 or 1: an arm variance vanishes on the support"
            )
        return p

    return CDR(propensity, label=f"p_opt[{link.name}]")


def optimal_cdr_parameters(outcome: OutcomeModel, link: LinkFunction = IDENTITY,
                           moments: DesignMoments | None = None) -> dict:
    """Closed form ``logit p(w) = c0 + c1 w1 + c2 w2`` for normal outcome models."""
    if outcome.family != "normal":
        raise DomainError("closed-form propensity parameters exist only for normal outcomes")
    shift = 0.0
    if link.name != "identity":
        if moments is None:
            raise DomainError(f"{link.name} link needs target arm means")
        shift = math.log(float(link.derivative(moments.mu1_star))) - math.log(
            float(link.derivative(moments.mu0_star)))
    coef = 0.5 * (np.asarray(outcome.log_variance1) - np.asarray(outcome.log_variance0))
    coef[0] += shift
    return {"intercept": float(coef[0]), "w1": float(coef[1]), "w2": float(coef[2])}


def optimal_cir_restricted(trial: CovariateDistribution, outcome: OutcomeModel,
                           region: Sequence[Rectangle], order: int = DEFAULT_ORDER) -> float:
    """Optimal ``pi`` for the trial ATE restricted to the union of ``region`` rectangles."""
    region = tuple(region)
    breaks = sorted({b for s in region for b in s.breakpoints()})

    def inside(w1, w2):
        hit = np.zeros(np.shape(w1), dtype=bool)
        for s in region:
            hit |= s.contains(w1, w2)
        return hit.astype(float)

    mass = trial.expect(inside, order, breaks)
    if mass < 1e-12:
        raise DomainError("restriction region has zero trial probability")
    e1 = trial.expect(lambda w1, w2: inside(w1, w2) * outcome.variance(1, w1, w2), order, breaks)
    e0 = trial.expect(lambda w1, w2: inside(w1, w2) * outcome.variance(0, w1, w2), order, breaks)
    s1, s0 = math.sqrt(e1 / mass), math.sqrt(e0 / mass)
    return s1 / (s1 + s0)


def optimal_designs(trial: CovariateDistribution, targets: dict, outcome: OutcomeModel,
                    link: LinkFunction = IDENTITY, order: int = DEFAULT_ORDER) -> dict:
    """Optimal CIR for each named target plus the (shared) optimal CDR."""
    out = {}
    for name, target in targets.items():
        out[name] = CIR(optimal_cir(design_moments(trial, target, outcome, order), link))
    return out
