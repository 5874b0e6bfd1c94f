"""Covariate laws, outcome models, allocation designs, targets and link functions.

Covariates are ``W = (W1, W2)`` with ``W1`` continuous (truncated normal) and
``W2`` binary. Every callable in this module is vectorised over ``(w1, w2)``
arrays of equal shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import expit, logit

from .exceptions import DomainError
from .numerics import DEFAULT_ORDER, TruncatedNormal, as_generator, composite_gauss_legendre

# ---------------------------------------------------------------------------
# covariate laws


@dataclass(frozen=True)
class ProductLaw:
    """``W1 ~ TruncatedNormal`` independent of ``W2 ~ Bernoulli(q)``."""

    w1: TruncatedNormal
    q: float

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise DomainError(f"Bernoulli probability must lie in (0, 1), got {self.q}")

    @property
    def support(self) -> tuple[float, float]:
        return (self.w1.lower, self.w1.upper)

    def logpdf(self, w1, w2):
        w2 = np.asarray(w2)
        return self.w1.logpdf(w1) + np.where(w2 == 1, math.log(self.q), math.log1p(-self.q))

    def pdf(self, w1, w2):
        return np.exp(self.logpdf(w1, w2))

    def sample(self, rng, size: int):
        gen = as_generator(rng)
        w1 = self.w1.sample(gen, size)
        w2 = (gen.random(size) < self.q).astype(float)
        return w1, w2

    def expect(self, func, order: int = DEFAULT_ORDER, breakpoints=()) -> float:
        return _expect(self, func, order, breakpoints)

    def to_dict(self) -> dict:
        return {
            "w1": {"mu": self.w1.mu, "sigma": self.w1.sigma,
                   "lower": self.w1.lower, "upper": self.w1.upper},
            "w2": self.q,
        }


@dataclass(frozen=True)
class MixtureLaw:
    """``weight * first + (1 - weight) * second``; components share one support."""

    first: ProductLaw
    second: ProductLaw
    weight: float

    def __post_init__(self):
        if not 0.0 < self.weight < 1.0:
            raise DomainError(f"mixing weight must lie in (0, 1), got {self.weight}")
        if self.first.support != self.second.support:
            raise DomainError(
                "mixture components must share a support: "
                f"{self.first.support} vs {self.second.support}"
            )

    @property
    def support(self) -> tuple[float, float]:
        return self.first.support

    def logpdf(self, w1, w2):
        return np.logaddexp(
            math.log(self.weight) + self.first.logpdf(w1, w2),
            math.log1p(-self.weight) + self.second.logpdf(w1, w2),
        )

    def pdf(self, w1, w2):
        return np.exp(self.logpdf(w1, w2))

    def sample(self, rng, size: int):
        gen = as_generator(rng)
        pick = gen.random(size) < self.weight
        a1, a2 = self.first.sample(gen, size)
        b1, b2 = self.second.sample(gen, size)
        return np.where(pick, a1, b1), np.where(pick, a2, b2)

    def expect(self, func, order: int = DEFAULT_ORDER, breakpoints=()) -> float:
        return _expect(self, func, order, breakpoints)

    def to_dict(self) -> dict:
        return {"first": self.first.to_dict(), "second": self.second.to_dict(),
                "weight": self.weight}


CovariateDistribution = Union[ProductLaw, MixtureLaw]


def _expect(law, func, order, breakpoints) -> float:
    lower, upper = law.support
    rule = composite_gauss_legendre(order, lower, upper, breakpoints)
    total = 0.0
    for w2 in (0.0, 1.0):
        w2v = np.full_like(rule.nodes, w2)
        vals = np.asarray(func(rule.nodes, w2v), dtype=float) * law.pdf(rule.nodes, w2v)
        total += float(np.dot(rule.weights, vals))
    return total


def law_from_dict(d: dict) -> CovariateDistribution:
    if "first" in d:
        return MixtureLaw(law_from_dict(d["first"]), law_from_dict(d["second"]), float(d["weight"]))
    w1 = d["w1"]
    return ProductLaw(
        TruncatedNormal(float(w1["mu"]), float(w1["sigma"]), float(w1["lower"]), float(w1["upper"])),
        float(d["w2"]),
    )


# ---------------------------------------------------------------------------
# outcome model


def _linear(coef, w1, w2):
    w1 = np.asarray(w1, dtype=float)
    return coef[0] + coef[1] * w1 + coef[2] * np.asarray(w2, dtype=float)


@dataclass(frozen=True)
class OutcomeModel:
    """Parametric law of the potential outcomes given ``W``.

    ``family="normal"``: ``Y(a) | W ~ N(b_a . x, exp(c_a . x))`` with ``x = (1, w1, w2)``.
    ``family="bernoulli"``: ``Y(a) | W ~ Bernoulli(expit(b_a . x))``; ``log_variance``
    is ignored and the variance is ``m (1 - m)``.
    """

    mean1: tuple[float, float, float]
    mean0: tuple[float, float, float]
    log_variance1: tuple[float, float, float] = (0.0, 0.0, 0.0)
    log_variance0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    family: str = "normal"

    def __post_init__(self):
        if self.family not in ("normal", "bernoulli"):
            raise DomainError(f"unknown outcome family {self.family!r}")
        for name in ("mean1", "mean0", "log_variance1", "log_variance0"):
            coef = tuple(float(c) for c in getattr(self, name))
            if len(coef) != 3:
                raise DomainError(f"{name} needs 3 coefficients (1, w1, w2)")
            object.__setattr__(self, name, coef)

    def mean(self, a: int, w1, w2):
        eta = _linear(self.mean1 if a == 1 else self.mean0, w1, w2)
        return expit(eta) if self.family == "bernoulli" else eta

    def variance(self, a: int, w1, w2):
        if self.family == "bernoulli":
            m = self.mean(a, w1, w2)
            return m * (1.0 - m)
        return np.exp(_linear(self.log_variance1 if a == 1 else self.log_variance0, w1, w2))

    def log_sd(self, a: int, w1, w2):
        if self.family == "bernoulli":
            with np.errstate(divide="ignore"):
                return 0.5 * np.log(self.variance(a, w1, w2))
        return 0.5 * _linear(self.log_variance1 if a == 1 else self.log_variance0, w1, w2)

    def sample(self, a, w1, w2, rng):
        """Draw the observed outcome ``Y(a)`` for arrays of assignments ``a``."""
        gen = as_generator(rng)
        a = np.asarray(a)
        m = np.where(a == 1, self.mean(1, w1, w2), self.mean(0, w1, w2))
        if self.family == "bernoulli":
            return (gen.random(m.shape) < m).astype(float)
        v = np.where(a == 1, self.variance(1, w1, w2), self.variance(0, w1, w2))
        return m + np.sqrt(v) * gen.standard_normal(m.shape)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "arm1": {"mean": list(self.mean1), "log_variance": list(self.log_variance1)},
            "arm0": {"mean": list(self.mean0), "log_variance": list(self.log_variance0)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeModel":
        family = d.get("family", "normal")
        arm1, arm0 = d["arm1"], d["arm0"]
        zero = (0.0, 0.0, 0.0)
        return cls(
            mean1=tuple(arm1["mean"]),
            mean0=tuple(arm0["mean"]),
            log_variance1=tuple(arm1.get("log_variance", zero)),
            log_variance0=tuple(arm0.get("log_variance", zero)),
            family=family,
        )


def delta(outcome: OutcomeModel, w1, w2):
    """Conditional treatment effect ``m(1, w) - m(0, w)``."""
    return outcome.mean(1, w1, w2) - outcome.mean(0, w1, w2)


# ---------------------------------------------------------------------------
# allocation designs


@dataclass(frozen=True)
class CIR:
    """Covariate-independent randomisation with ``Pr(A=1) = pi``."""

    pi: float

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise DomainError(f"allocation probability must lie in (0, 1), got {self.pi}")

    def prob(self, w1, w2):
        return np.full(np.shape(w1), self.pi, dtype=float)


@dataclass(frozen=True)
class CDR:
    """Covariate-dependent randomisation with known propensity ``p(w)``."""

    propensity: Callable
    label: str = "cdr"

    def prob(self, w1, w2):
        p = np.asarray(self.propensity(w1, w2), dtype=float)
        if np.any(~((p > 0.0) & (p < 1.0))):
            raise DomainError(f"propensity of design {self.label!r} left (0, 1)")
        return np.broadcast_to(p, np.shape(w1)).astype(float)


AllocationDesign = Union[CIR, CDR]


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True)
class Rectangle:
    """``[w1_lower, w1_upper) x {w2}``; ``w2=None`` admits both levels."""

    w1_lower: float = -math.inf
    w1_upper: float = math.inf
    w2: int | None = None

    def contains(self, w1, w2):
        w1 = np.asarray(w1, dtype=float)
        inside = (w1 >= self.w1_lower) & (w1 < self.w1_upper)
        if self.w2 is not None:
            inside &= np.asarray(w2) == self.w2
        return inside

    def breakpoints(self) -> list[float]:
        return [b for b in (self.w1_lower, self.w1_upper) if math.isfinite(b)]


@dataclass(frozen=True)
class Trial:
    """The trial population itself (``F* = F``)."""

    kind = "trial"


@dataclass(frozen=True)
class Transport:
    """External target cohort drawn from ``law``, disjoint from the trial."""

    law: CovariateDistribution
    kind = "transport"


@dataclass(frozen=True)
class Generalize:
    """Target cohort containing the trial; ``gamma = Pr(Z=1)``."""

    law: CovariateDistribution
    gamma: float = 0.5
    kind = "generalize"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class PostStratify:
    """Target defined by known weights on a partition of the covariate space."""

    strata: tuple[Rectangle, ...]
    weights: tuple[float, ...]
    kind = "poststrat"

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        object.__setattr__(self, "weights", tuple(float(t) for t in self.weights))
        if len(self.strata) != len(self.weights) or not self.strata:
            raise DomainError("need one weight per stratum")
        if any(t <= 0 for t in self.weights):
            raise DomainError(f"stratum weights must be positive, got {self.weights}")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise DomainError(f"stratum weights sum to {sum(self.weights)}, not 1")

    @classmethod
    def quadrants(cls, cutpoint: float, weights: Sequence[float]) -> "PostStratify":
        """Strata ``{W1<c,W2=0}, {W1>=c,W2=0}, {W1<c,W2=1}, {W1>=c,W2=1}``."""
        c = float(cutpoint)
        strata = (
            Rectangle(-math.inf, c, 0),
            Rectangle(c, math.inf, 0),
            Rectangle(-math.inf, c, 1),
            Rectangle(c, math.inf, 1),
        )
        return cls(strata, tuple(weights))

    @property
    def breakpoints(self) -> list[float]:
        return sorted({b for s in self.strata for b in s.breakpoints()})

    def stratum_index(self, w1, w2) -> np.ndarray:
        """Index of the stratum holding each point, ``-1`` where none does."""
        idx = np.full(np.shape(w1), -1, dtype=int)
        for k, s in enumerate(self.strata):
            idx = np.where((idx < 0) & s.contains(w1, w2), k, idx)
        return idx


TargetSpec = Union[Trial, Transport, Generalize, PostStratify]


def stratum_probabilities(trial: CovariateDistribution, strata, order: int = DEFAULT_ORDER):
    """Trial-law probabilities ``tau_k`` of each stratum rectangle."""
    breaks = sorted({b for s in strata for b in s.breakpoints()})
    return np.array(
        [trial.expect(lambda w1, w2, s=s: s.contains(w1, w2), order, breaks) for s in strata]
    )


def target_expect(func, trial: CovariateDistribution, target: TargetSpec,
                  order: int = DEFAULT_ORDER) -> float:
    """``E_{F*} func(W)`` for the target law implied by ``target``."""
    if isinstance(target, Trial):
        return trial.expect(func, order)
    if isinstance(target, (Transport, Generalize)):
        return target.law.expect(func, order)
    if isinstance(target, PostStratify):
        tau = stratum_probabilities(trial, target.strata, order)
        if np.any(tau < 1e-12):
            raise DomainError(f"stratum with negligible trial mass: tau = {tau}")
        breaks = target.breakpoints
        total = 0.0
        for s, t, ts in zip(target.strata, tau, target.weights):
            part = trial.expect(lambda w1, w2, s=s: s.contains(w1, w2) * func(w1, w2), order, breaks)
            total += ts * part / t
        return total
    raise DomainError(f"unknown target {target!r}")


def estimand_value(outcome: OutcomeModel, trial: CovariateDistribution, target: TargetSpec,
                   order: int = DEFAULT_ORDER) -> float:
    """``integral of delta dF*``; for post-stratification this is ``sum tau*_k Delta_k``."""
    return target_expect(lambda w1, w2: delta(outcome, w1, w2), trial, target, order)


def stratum_effects(outcome: OutcomeModel, trial: CovariateDistribution, target: PostStratify,
                    order: int = DEFAULT_ORDER) -> np.ndarray:
    """Within-stratum trial ATEs ``Delta_k``."""
    tau = stratum_probabilities(trial, target.strata, order)
    if np.any(tau < 1e-12):
        raise DomainError(f"stratum with negligible trial mass: tau = {tau}")
    breaks = target.breakpoints
    return np.array([
        trial.expect(lambda w1, w2, s=s: s.contains(w1, w2) * delta(outcome, w1, w2), order, breaks) / t
        for s, t in zip(target.strata, tau)
    ])


def target_to_dict(target: TargetSpec) -> dict:
    if isinstance(target, Trial):
        return {"kind": "trial"}
    if isinstance(target, Transport):
        return {"kind": "transport", "law": target.law.to_dict()}
    if isinstance(target, Generalize):
        return {"kind": "generalize", "law": target.law.to_dict(), "gamma": target.gamma}
    return {
        "kind": "poststrat",
        "strata": [[s.w1_lower, s.w1_upper, s.w2] for s in target.strata],
        "weights": list(target.weights),
    }


def target_from_dict(d: dict) -> TargetSpec:
    kind = d["kind"]
    if kind == "trial":
        return Trial()
    if kind == "transport":
        return Transport(law_from_dict(d["law"]))
    if kind == "generalize":
        return Generalize(law_from_dict(d["law"]), float(d.get("gamma", 0.5)))
    if kind == "poststrat":
        strata = tuple(Rectangle(float(lo), float(hi), None if w2 is None else int(w2))
                       for lo, hi, w2 in d["strata"])
        return PostStratify(strata, tuple(d["weights"]))
    raise DomainError(f"unknown target kind {kind!r}")


# ---------------------------------------------------------------------------
# link functions


@dataclass(frozen=True)
class LinkFunction:
    """Increasing differentiable transform ``g`` used in contrasts ``g(mu1) - g(mu0)``."""

    name: str
    _g: Callable = field(repr=False, compare=False)
    _dg: Callable = field(repr=False, compare=False)
    _domain: Callable = field(repr=False, compare=False)

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(~self._domain(x)):
            raise DomainError(f"{self.name} link evaluated outside its domain at {x}")
        return x

    def __call__(self, x):
        return self._g(self.check(x))

    def derivative(self, x):
        return self._dg(self.check(x))

    @staticmethod
    def from_name(name: str) -> "LinkFunction":
        try:
            return LINKS[name]
        except KeyError:
            raise DomainError(f"unknown link {name!r}; choose from {sorted(LINKS)}") from None


IDENTITY = LinkFunction("identity", lambda x: x, lambda x: np.ones_like(x), np.isfinite)
LOG = LinkFunction("log", np.log, lambda x: 1.0 / x, lambda x: x > 0)
LOGIT = LinkFunction("logit", logit, lambda x: 1.0 / (x * (1.0 - x)), lambda x: (x > 0) & (x < 1))
LINKS = {link.name: link for link in (IDENTITY, LOG, LOGIT)}
