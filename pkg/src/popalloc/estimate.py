"""Nuisance fitting and one-step (AIPW-type) estimators with influence-function SEs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .exceptions import DataError, DomainError, FitError
from .model import IDENTITY, LinkFunction, PostStratify

CLIP = 1e-6


# ---------------------------------------------------------------------------
# data containers


def _col(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class TrialDataset:
    w1: np.ndarray
    w2: np.ndarray
    a: np.ndarray
    y: np.ndarray
    p_assign: np.ndarray

    def __post_init__(self):
        for name in ("w1", "w2", "a", "y", "p_assign"):
            object.__setattr__(self, name, _col(getattr(self, name)))
        n = self.w1.size
        if any(getattr(self, c).size != n for c in ("w2", "a", "y", "p_assign")):
            raise DataError("trial columns have unequal lengths")
        if np.any(~np.isin(self.a, (0.0, 1.0))):
            raise DataError("treatment must be 0/1")
        bad = np.flatnonzero(~((self.p_assign > 0) & (self.p_assign < 1)))
        if bad.size:
            raise DataError(f"p_assign outside (0, 1) at rows {bad[:10].tolist()}")

    def __len__(self) -> int:
        return self.w1.size

    def subset(self, mask) -> "TrialDataset":
        return TrialDataset(self.w1[mask], self.w2[mask], self.a[mask], self.y[mask],
                            self.p_assign[mask])


@dataclass(frozen=True)
class TargetCohort:
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w1", _col(self.w1))
        object.__setattr__(self, "w2", _col(self.w2))
        if self.w1.size != self.w2.size:
            raise DataError("target columns have unequal lengths")
        if self.w1.size < 1:
            raise DataError("target cohort is empty")

    def __len__(self) -> int:
        return self.w1.size


@dataclass(frozen=True)
class GeneralizationCohort:
    """Target cohort with trial participants flagged by ``z``; ``a, y, p_assign`` are nan when ``z=0``."""

    w1: np.ndarray
    w2: np.ndarray
    z: np.ndarray
    a: np.ndarray
    y: np.ndarray
    p_assign: np.ndarray

    def __post_init__(self):
        for name in ("w1", "w2", "z", "a", "y", "p_assign"):
            object.__setattr__(self, name, _col(getattr(self, name)))
        if not (np.any(self.z == 1) and np.any(self.z == 0)):
            raise DataError("generalization cohort needs both z=1 and z=0 rows")

    def __len__(self) -> int:
        return self.w1.size

    def trial(self) -> TrialDataset:
        s = self.z == 1
        return TrialDataset(self.w1[s], self.w2[s], self.a[s], self.y[s], self.p_assign[s])


# ---------------------------------------------------------------------------
# bases


@dataclass(frozen=True)
class Basis:
    names: tuple[str, ...]
    fn: Callable = field(repr=False, compare=False)

    def __call__(self, w1, w2) -> np.ndarray:
        return self.fn(_col(w1), _col(w2))

    @property
    def dim(self) -> int:
        return len(self.names)


OUTCOME_BASIS = Basis(("1", "w1", "w2"), lambda w1, w2: np.column_stack([np.ones_like(w1), w1, w2]))
MEMBERSHIP_BASIS = Basis(("1", "w1", "w1^2", "w2"),
                         lambda w1, w2: np.column_stack([np.ones_like(w1), w1, w1 * w1, w2]))


def _check_rank(X: np.ndarray, names, what: str):
    if X.shape[0] <= X.shape[1]:
        raise FitError(f"{what}: {X.shape[0]} rows for {X.shape[1]} basis columns")
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= s[0] * 1e-10:
        _, _, vt = np.linalg.svd(X)
        null = vt[-1]
        cols = [names[j] for j in np.flatnonzero(np.abs(null) > 1e-6)]
        raise FitError(f"{what}: singular design matrix, collinear columns {cols}")


# ---------------------------------------------------------------------------
# model fitting


def logistic_irls(X: np.ndarray, z: np.ndarray, tol: float = 1e-10, max_iter: int = 100,
                  weights: np.ndarray | None = None):
    """Newton/IRLS fit of ``Pr(z=1|x) = expit(x . b)``.

    Returns ``(coef, iterations)``. Raises :class:`FitError` on perfect
    separation or when ``max_iter`` steps do not reach ``tol``.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    wt = np.ones_like(z) if weights is None else np.asarray(weights, dtype=float)
    coef = np.zeros(X.shape[1])
    trace = []
    for it in range(1, max_iter + 1):
        eta = X @ coef
        mu = expit(eta)
        w = wt * mu * (1.0 - mu)
        grad = X.T @ (wt * (z - mu))
        hess = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise FitError(f"singular information matrix at iteration {it}") from None
        coef = coef + step
        size = float(np.max(np.abs(step)))
        trace.append(size)
        if size < tol:
            return coef, it
        eta = X @ coef
        if np.all((eta > 0) == (z > 0.5)) and np.min(np.abs(eta)) > 15:
            raise FitError("perfect separation: the classes are linearly separable")
    raise FitError(f"IRLS did not converge in {max_iter} iterations; step sizes {trace[-5:]}")


def _ols(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


@dataclass(frozen=True)
class OutcomeFit:
    """Per-arm regression coefficients on ``basis``."""

    coef1: np.ndarray
    coef0: np.ndarray
    basis: Basis = OUTCOME_BASIS
    family: str = "gaussian"
    iterations: int = 0

    def mean(self, a: int, w1, w2):
        eta = self.basis(w1, w2) @ (self.coef1 if a == 1 else self.coef0)
        return expit(eta) if self.family == "binomial" else eta

    def delta(self, w1, w2):
        return self.mean(1, w1, w2) - self.mean(0, w1, w2)


def fit_outcome_regression(data: TrialDataset, basis: Basis = OUTCOME_BASIS,
                           family: str = "gaussian") -> OutcomeFit:
    """Least squares (``gaussian``) or logistic IRLS (``binomial``) separately per arm."""
    coefs = {}
    iters = 0
    for arm in (1, 0):
        s = data.a == arm
        X = basis(data.w1[s], data.w2[s])
        _check_rank(X, basis.names, f"outcome regression, arm {arm}")
        if family == "gaussian":
            coefs[arm] = _ols(X, data.y[s])
        elif family == "binomial":
            coefs[arm], it = logistic_irls(X, data.y[s])
            iters += it
        else:
            raise DomainError(f"unknown family {family!r}")
    return OutcomeFit(coefs[1], coefs[0], basis, family, iters)


@dataclass(frozen=True)
class DensityRatioFit:
    """``r(w) = (n/n*) (1 - q(w)) / q(w)`` from a trial-membership logistic model."""

    coef: np.ndarray
    n: int
    n_star: int
    basis: Basis = MEMBERSHIP_BASIS
    iterations: int = 0
    clip_count: int = 0
    calibration: float = float("nan")

    def membership(self, w1, w2):
        return np.clip(expit(self.basis(w1, w2) @ self.coef), CLIP, 1 - CLIP)

    def __call__(self, w1, w2):
        q = self.membership(w1, w2)
        return (self.n / self.n_star) * (1.0 - q) / q


def fit_density_ratio(trial: TrialDataset, target: TargetCohort,
                      basis: Basis = MEMBERSHIP_BASIS) -> DensityRatioFit:
    n, n_star = len(trial), len(target)
    if n == 0:
        raise DataError("trial sample is empty")
    X = np.vstack([basis(trial.w1, trial.w2), basis(target.w1, target.w2)])
    z = np.concatenate([np.ones(n), np.zeros(n_star)])
    _check_rank(X, basis.names, "density-ratio model")
    coef, it = logistic_irls(X, z)
    raw = expit(X @ coef)
    clipped = int(np.sum((raw < CLIP) | (raw > 1 - CLIP)))
    fit = DensityRatioFit(coef, n, n_star, basis, it, clipped)
    return DensityRatioFit(coef, n, n_star, basis, it, clipped,
                           float(np.mean(fit(trial.w1, trial.w2))))


@dataclass(frozen=True)
class ParticipationFit:
    coef: np.ndarray
    basis: Basis = MEMBERSHIP_BASIS
    iterations: int = 0
    clip_count: int = 0

    def __call__(self, w1, w2):
        return np.clip(expit(self.basis(w1, w2) @ self.coef), CLIP, 1 - CLIP)


def fit_participation(cohort: GeneralizationCohort, basis: Basis = MEMBERSHIP_BASIS) -> ParticipationFit:
    X = basis(cohort.w1, cohort.w2)
    _check_rank(X, basis.names, "participation model")
    coef, it = logistic_irls(X, cohort.z)
    raw = expit(X @ coef)
    clipped = int(np.sum((raw < CLIP) | (raw > 1 - CLIP)))
    return ParticipationFit(coef, basis, it, clipped)


@dataclass(frozen=True)
class FittedNuisances:
    """Nuisance estimates consumed by the estimators.

    Any callable with the matching signature can stand in for a fitted model,
    which is how true (oracle) nuisances or cross-fitted ones are injected.
    """

    outcome: object
    ratio: Callable | None = None
    participation: Callable | None = None

    def diagnostics(self) -> dict:
        out = {}
        for name in ("outcome", "ratio", "participation"):
            obj = getattr(self, name)
            for key in ("iterations", "clip_count", "calibration"):
                if hasattr(obj, key):
                    out[f"{name}_{key}"] = getattr(obj, key)
        return out


# ---------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class EstimateReport:
    point: float
    std_error: float
    n_effective: int
    diagnostics: dict = field(default_factory=dict)
    influence: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"point": self.point, "std_error": self.std_error,
                "n_effective": self.n_effective, "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class ArmComponents:
    """One-step estimates of both arm means and their influence values on a common row set."""

    mu1: float
    mu0: float
    influence1: np.ndarray
    influence0: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.influence1.size


def _arm_residuals(trial: TrialDataset, m, arm: int) -> np.ndarray:
    """``1{A=a} (Y - m(a, W)) / Pr(A=a | W)`` per trial row."""
    hit = trial.a == arm
    prob = trial.p_assign if arm == 1 else 1.0 - trial.p_assign
    return np.where(hit, (trial.y - m(arm, trial.w1, trial.w2)) / prob, 0.0)


def trial_components(trial: TrialDataset, nu: FittedNuisances) -> ArmComponents:
    m = nu.outcome.mean
    out = {}
    for arm in (1, 0):
        term = m(arm, trial.w1, trial.w2) + _arm_residuals(trial, m, arm)
        mu = float(np.mean(term))
        out[arm] = (mu, term - mu)
    return ArmComponents(out[1][0], out[0][0], out[1][1], out[0][1], nu.diagnostics())


def transport_components(trial: TrialDataset, target: TargetCohort,
                         nu: FittedNuisances) -> ArmComponents:
    """Arm means in the target; influence values over the pooled ``n + n*`` rows."""
    m, r = nu.outcome.mean, nu.ratio
    n, n_star = len(trial), len(target)
    gamma = n / (n + n_star)
    rt = r(trial.w1, trial.w2)
    out = {}
    for arm in (1, 0):
        plug = m(arm, target.w1, target.w2)
        aug = rt * _arm_residuals(trial, m, arm)
        mu = float(np.mean(plug) + np.mean(aug))
        infl = np.concatenate([aug / gamma, (plug - mu) / (1.0 - gamma)])
        out[arm] = (mu, infl)
    return ArmComponents(out[1][0], out[0][0], out[1][1], out[0][1], nu.diagnostics())


def generalize_components(cohort: GeneralizationCohort, nu: FittedNuisances) -> ArmComponents:
    m, e = nu.outcome.mean, nu.participation
    trial = cohort.trial()
    s = cohort.z == 1
    et = e(trial.w1, trial.w2)
    out = {}
    for arm in (1, 0):
        term = m(arm, cohort.w1, cohort.w2)
        aug = np.zeros(len(cohort))
        aug[s] = _arm_residuals(trial, m, arm) / et
        term = term + aug
        mu = float(np.mean(term))
        out[arm] = (mu, term - mu)
    return ArmComponents(out[1][0], out[0][0], out[1][1], out[0][1], nu.diagnostics())


def poststrat_components(trial: TrialDataset, strata: PostStratify,
                         nu: FittedNuisances) -> ArmComponents:
    m = nu.outcome.mean
    k = strata.stratum_index(trial.w1, trial.w2)
    if np.any(k < 0):
        raise DataError(f"trial rows {np.flatnonzero(k < 0)[:10].tolist()} fall outside every stratum")
    counts = np.bincount(k, minlength=len(strata.strata))
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"strata {empty.tolist()} contain no trial rows")
    tau_hat = counts / len(trial)
    weight = np.asarray(strata.weights)[k] / tau_hat[k]
    out = {}
    for arm in (1, 0):
        term = m(arm, trial.w1, trial.w2) + _arm_residuals(trial, m, arm)
        means = np.bincount(k, weights=term, minlength=counts.size) / counts
        mu = float(np.dot(strata.weights, means))
        out[arm] = (mu, weight * (term - means[k]))
    diag = nu.diagnostics() | {"tau_hat": tau_hat.tolist()}
    return ArmComponents(out[1][0], out[0][0], out[1][1], out[0][1], diag)


def estimate_link_contrast(components: ArmComponents, link: LinkFunction = IDENTITY) -> EstimateReport:
    """``g(mu1) - g(mu0)`` with a delta-method standard error."""
    point = float(link(components.mu1) - link(components.mu0))
    infl = (float(link.derivative(components.mu1)) * components.influence1
            - float(link.derivative(components.mu0)) * components.influence0)
    n = components.n
    se = float(np.std(infl, ddof=1) / np.sqrt(n))
    return EstimateReport(point, se, n, dict(components.diagnostics), infl)


def estimate_trial(trial: TrialDataset, nu: FittedNuisances) -> EstimateReport:
    """Augmented estimator of the trial ATE."""
    return estimate_link_contrast(trial_components(trial, nu))


def estimate_transport(trial: TrialDataset, target: TargetCohort, nu: FittedNuisances) -> EstimateReport:
    return estimate_link_contrast(transport_components(trial, target, nu))


def estimate_generalize(cohort: GeneralizationCohort, nu: FittedNuisances) -> EstimateReport:
    return estimate_link_contrast(generalize_components(cohort, nu))


def estimate_poststrat(trial: TrialDataset, strata: PostStratify, nu: FittedNuisances) -> EstimateReport:
    return estimate_link_contrast(poststrat_components(trial, strata, nu))


def fit_nuisances(trial: TrialDataset, target: TargetCohort | None = None,
                  cohort: GeneralizationCohort | None = None,
                  outcome_family: str = "gaussian") -> FittedNuisances:
    """Fit outcome, density-ratio and participation models on the correct-form bases."""
    outcome = fit_outcome_regression(trial, family=outcome_family)
    ratio = fit_density_ratio(trial, target) if target is not None else None
    part = fit_participation(cohort) if cohort is not None else None
    return FittedNuisances(outcome, ratio, part)
