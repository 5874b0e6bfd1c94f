import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from popalloc.allocation import density_ratio, participation_propensity
from popalloc.estimate import (
    CLIP,
    Basis,
    FittedNuisances,
    GeneralizationCohort,
    TargetCohort,
    TrialDataset,
    estimate_generalize,
    estimate_link_contrast,
    estimate_poststrat,
    estimate_transport,
    estimate_trial,
    fit_density_ratio,
    fit_nuisances,
    fit_outcome_regression,
    fit_participation,
    logistic_irls,
    transport_components,
)
from popalloc.exceptions import DataError, DomainError, FitError
from popalloc.model import CIR, Generalize, LOG, LOGIT, PostStratify, Rectangle, estimand_value
from popalloc.simulate import generate_generalization_cohort, generate_target, generate_trial


class _Means:
    def __init__(self, f1, f0):
        self.f = {1: f1, 0: f0}

    def mean(self, a, w1, w2):
        return self.f[a](np.asarray(w1, float), np.asarray(w2, float))

    def delta(self, w1, w2):
        return self.mean(1, w1, w2) - self.mean(0, w1, w2)


def _ones(w1, w2):
    return np.ones(np.shape(w1))


@pytest.fixture(scope="module")
def trial_data(setting):
    return generate_trial(setting.trial, setting.outcome, CIR(0.5), 400, np.random.default_rng(11))


@pytest.fixture(scope="module")
def target_data(setting):
    return generate_target(setting.transport_law, 300, np.random.default_rng(12))


# --------------------------------------------------------------- outcome fits

def test_three_point_arm_regression():
    w1 = np.array([0.0, 1.0, 2.0, 0.0, 1.0, 2.0])
    basis = Basis(("1", "w1"), lambda w1, w2: np.column_stack([np.ones_like(w1), w1]))
    data = TrialDataset(w1, np.zeros(6), [1, 1, 1, 0, 0, 0], [0, 1, 2, 5, 5, 5], np.full(6, 0.5))
    fit = fit_outcome_regression(data, basis)
    assert np.allclose(fit.coef1, [0, 1], atol=1e-12)
    assert np.allclose(fit.coef0, [5, 0], atol=1e-12)


def test_exactly_linear_outcomes_leave_no_residual():
    rng = np.random.default_rng(0)
    w1, w2 = rng.normal(size=50), rng.integers(0, 2, 50).astype(float)
    a = rng.integers(0, 2, 50).astype(float)
    y = np.where(a == 1, 1 + 2 * w1 - w2, -1 + 0.5 * w2)
    data = TrialDataset(w1, w2, a, y, np.full(50, 0.5))
    fit = fit_outcome_regression(data)
    res = y - np.where(a == 1, fit.mean(1, w1, w2), fit.mean(0, w1, w2))
    assert np.max(np.abs(res)) < 1e-12


def test_collinear_columns_are_named():
    rng = np.random.default_rng(1)
    w1 = rng.normal(size=40)
    data = TrialDataset(w1, np.ones(40), np.tile([0, 1], 20), rng.normal(size=40), np.full(40, 0.5))
    with pytest.raises(FitError, match=r"'1'.*'w2'"):
        fit_outcome_regression(data)


def test_unknown_family_rejected(trial_data):
    with pytest.raises(DomainError):
        fit_outcome_regression(trial_data, family="poisson")


# ------------------------------------------------------------------- IRLS

def test_irls_matches_generic_optimizer():
    rng = np.random.default_rng(5)
    X = np.column_stack([np.ones(500), rng.normal(size=500), rng.normal(size=500) ** 2])
    z = (rng.random(500) < expit(X @ [0.3, -1.0, 0.5])).astype(float)

    def nll(b):
        eta = X @ b
        return -np.sum(z * log_expit(eta) + (1 - z) * log_expit(-eta))

    ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    coef, iters = logistic_irls(X, z)
    assert np.allclose(coef, ref, atol=1e-5)
    assert iters < 15


def test_irls_separation_and_nonconvergence():
    x = np.linspace(-1, 1, 40)
    X = np.column_stack([np.ones(40), x])
    with pytest.raises(FitError, match="separation"):
        logistic_irls(X, (x > 0).astype(float))
    rng = np.random.default_rng(2)
    z = (rng.random(40) < 0.5).astype(float)
    with pytest.raises(FitError, match="step sizes"):
        logistic_irls(X, z, max_iter=1)


# ------------------------------------------------------------ density ratio

def test_density_ratio_of_a_copy_is_one(trial_data):
    copy = TargetCohort(trial_data.w1, trial_data.w2)
    r = fit_density_ratio(trial_data, copy)
    assert np.allclose(r(trial_data.w1, trial_data.w2), 1.0, atol=1e-8)
    assert np.allclose(r.coef[1:], 0.0, atol=1e-8)


def test_density_ratio_prefactor(trial_data):
    half = TargetCohort(trial_data.w1[::2], trial_data.w2[::2])
    r = fit_density_ratio(trial_data, half)
    assert r.n == 2 * r.n_star
    # class-prior shift is absorbed by the intercept; the ratio stays near 1
    assert np.allclose(r(trial_data.w1, trial_data.w2).mean(), 1.0, atol=0.2)


def test_density_ratio_large_sample(setting):
    rng = np.random.default_rng(8)
    trial = generate_trial(setting.trial, setting.outcome, CIR(0.5), 60_000, rng)
    target = generate_target(setting.transport_law, 60_000, rng)
    fit = fit_density_ratio(trial, target)
    from popalloc.model import Transport

    truth = density_ratio(setting.trial, Transport(setting.transport_law))
    for w1, w2 in [(0.0, 0.0), (1.0, 1.0), (-1.0, 0.0)]:
        assert fit(w1, w2)[0] == pytest.approx(truth(np.array([w1]), np.array([w2]))[0], rel=0.05)


# ---------------------------------------------------------- participation

def test_participation_without_selection():
    rng = np.random.default_rng(3)
    n = 4000
    z = (rng.random(n) < 0.3).astype(float)
    nan = np.full(n, np.nan)
    coh = GeneralizationCohort(rng.normal(size=n), rng.integers(0, 2, n).astype(float), z,
                               np.where(z == 1, 1.0, nan), np.where(z == 1, 0.0, nan),
                               np.where(z == 1, 0.5, nan))
    e = fit_participation(coh)
    vals = e(coh.w1, coh.w2)
    assert np.mean(vals) == pytest.approx(z.mean(), abs=1e-10)
    assert np.ptp(vals) < 0.1


def test_participation_large_sample(setting):
    coh = generate_generalization_cohort(setting.trial, setting.transport_law, setting.outcome,
                                         CIR(0.5), 40_000, np.random.default_rng(4))
    e = fit_participation(coh)
    truth = participation_propensity(setting.trial, Generalize(setting.generalize_law, 0.5))
    w1, w2 = np.array([-1.0, 0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0, 1.0])
    assert np.allclose(e(w1, w2), truth(w1, w2), rtol=0.05)


def test_participation_is_clipped():
    x = np.linspace(-1, 1, 41)
    z = (x > 0).astype(float)
    z[20] = 1.0
    z[19] = 1.0
    z[22] = 0.0
    nan = np.full(41, np.nan)
    coh = GeneralizationCohort(x * 40, np.zeros(41), z, np.where(z == 1, 1.0, nan),
                               np.where(z == 1, 0.0, nan), np.where(z == 1, 0.5, nan))
    basis = Basis(("1", "w1"), lambda w1, w2: np.column_stack([np.ones_like(w1), w1]))
    e = fit_participation(coh, basis)
    vals = e(coh.w1, coh.w2)
    assert vals.min() >= CLIP and vals.max() <= 1 - CLIP
    assert e.clip_count > 0


# ------------------------------------------------------------- estimators

def test_transport_zero_residuals_is_plugin(setting, target_data):
    w1 = np.linspace(-1, 1, 20)
    w2 = np.tile([0.0, 1.0], 10)
    f1, f0 = (lambda w1, w2: 1 + w1 + w2), (lambda w1, w2: 0.5 * w1)
    a = np.tile([1.0, 1.0, 0.0, 0.0], 5)
    y = np.where(a == 1, f1(w1, w2), f0(w1, w2))
    trial = TrialDataset(w1, w2, a, y, np.full(20, 0.5))
    nu = FittedNuisances(_Means(f1, f0), ratio=lambda w1, w2: 3.0 + w1)
    rep = estimate_transport(trial, target_data, nu)
    expected = np.mean(f1(target_data.w1, target_data.w2) - f0(target_data.w1, target_data.w2))
    assert rep.point == pytest.approx(expected, abs=1e-12)
    assert rep.std_error > 0


def test_transport_on_own_covariates_is_trial_aipw(trial_data):
    nu = fit_nuisances(trial_data)
    own = TargetCohort(trial_data.w1, trial_data.w2)
    tr = estimate_transport(trial_data, own, FittedNuisances(nu.outcome, ratio=_ones))
    assert tr.point == pytest.approx(estimate_trial(trial_data, nu).point, abs=1e-12)


def test_one_step_identity(setting, trial_data, target_data):
    nu = fit_nuisances(trial_data, target_data)
    rep = estimate_transport(trial_data, target_data, nu)
    m, r = nu.outcome.mean, nu.ratio
    plug = np.mean(nu.outcome.delta(target_data.w1, target_data.w2))
    t = trial_data
    p = t.p_assign
    aug = r(t.w1, t.w2) * (t.a / p * (t.y - m(1, t.w1, t.w2))
                           - (1 - t.a) / (1 - p) * (t.y - m(0, t.w1, t.w2)))
    assert rep.point == pytest.approx(plug + aug.mean(), abs=1e-12)


def test_known_propensity_is_used(trial_data):
    nu = fit_nuisances(trial_data)
    base = estimate_trial(trial_data, nu).point
    tilted = TrialDataset(trial_data.w1, trial_data.w2, trial_data.a, trial_data.y,
                          0.5 - 0.1 * np.minimum(trial_data.w1**2, 2))
    # OLS residuals are orthogonal to the basis, so only a propensity outside it can matter
    assert estimate_trial(tilted, nu).point != pytest.approx(base, abs=1e-6)


def test_permutation_invariance(setting, trial_data, target_data):
    nu = fit_nuisances(trial_data, target_data)
    rep = estimate_transport(trial_data, target_data, nu)
    rng = np.random.default_rng(9)
    i, j = rng.permutation(len(trial_data)), rng.permutation(len(target_data))
    t2 = trial_data.subset(i)
    s2 = TargetCohort(target_data.w1[j], target_data.w2[j])
    rep2 = estimate_transport(t2, s2, fit_nuisances(t2, s2))
    assert rep2.point == pytest.approx(rep.point, abs=1e-12)
    assert rep2.std_error == pytest.approx(rep.std_error, abs=1e-12)


def test_generalize_zero_residuals_is_cohort_plugin():
    f1, f0 = (lambda w1, w2: 2 + w1), (lambda w1, w2: w2)
    w1 = np.linspace(-1, 1, 30)
    w2 = np.tile([0.0, 1.0, 1.0], 10)
    z = np.tile([1.0, 0.0], 15)
    a = np.where(z == 1, np.tile([1.0, 1.0, 0.0, 0.0, 1.0, 0.0], 5), np.nan)
    y = np.where(a == 1, f1(w1, w2), np.where(a == 0, f0(w1, w2), np.nan))
    coh = GeneralizationCohort(w1, w2, z, a, y, np.where(z == 1, 0.5, np.nan))
    rep = estimate_generalize(coh, FittedNuisances(_Means(f1, f0), participation=lambda w1, w2: 0.3 + 0 * w1))
    assert rep.point == pytest.approx(np.mean(f1(w1, w2) - f0(w1, w2)), abs=1e-12)


def test_generalization_cohort_requires_outsiders():
    with pytest.raises(DataError):
        GeneralizationCohort([0.0, 1.0], [0, 1], [1, 1], [1, 0], [1.0, 2.0], [0.5, 0.5])


def test_poststrat_single_stratum_is_trial_aipw(trial_data):
    nu = fit_nuisances(trial_data)
    one = PostStratify((Rectangle(),), (1.0,))
    ps = estimate_poststrat(trial_data, one, nu)
    tr = estimate_trial(trial_data, nu)
    assert ps.point == pytest.approx(tr.point, abs=1e-12)
    assert ps.std_error == pytest.approx(tr.std_error, abs=1e-12)


def test_poststrat_zero_residuals(setting):
    strata = PostStratify.quadrants(0.5, (0.1, 0.2, 0.3, 0.4))
    f1, f0 = (lambda w1, w2: 1 + w1 * w2), (lambda w1, w2: w1 - w2)
    w1 = np.array([-1.0, 0.0, 1.0, 1.5, -0.5, 0.2, 0.7, 1.2])
    w2 = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0])
    a = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    y = np.where(a == 1, f1(w1, w2), f0(w1, w2))
    trial = TrialDataset(w1, w2, a, y, np.full(8, 0.5))
    rep = estimate_poststrat(trial, strata, FittedNuisances(_Means(f1, f0)))
    d = f1(w1, w2) - f0(w1, w2)
    means = [d[:2].mean(), d[2:4].mean(), d[4:6].mean(), d[6:].mean()]
    assert rep.point == pytest.approx(np.dot([0.1, 0.2, 0.3, 0.4], means), abs=1e-12)


def test_poststrat_empty_stratum_listed(trial_data):
    strata = PostStratify.quadrants(5.0, (0.1, 0.2, 0.3, 0.4))
    with pytest.raises(DataError, match=r"\[1, 3\]"):
        estimate_poststrat(trial_data, strata, fit_nuisances(trial_data))


def test_link_contrast_examples(trial_data, target_data):
    nu = fit_nuisances(trial_data, target_data)
    comp = transport_components(trial_data, target_data, nu)
    ident = estimate_link_contrast(comp)
    assert ident.point == pytest.approx(comp.mu1 - comp.mu0, abs=1e-14)
    assert ident.point == estimate_transport(trial_data, target_data, nu).point
    from popalloc.estimate import ArmComponents

    same = ArmComponents(0.4, 0.4, comp.influence1, comp.influence0, {})
    assert estimate_link_contrast(same, LOG).point == 0.0
    with pytest.raises(DomainError):
        estimate_link_contrast(ArmComponents(1.2, 0.4, comp.influence1, comp.influence0, {}), LOGIT)


def test_report_serialises(trial_data):
    d = estimate_trial(trial_data, fit_nuisances(trial_data)).to_dict()
    assert set(d) >= {"point", "std_error", "n_effective", "diagnostics"}


# -------------------------------------------------------- double robustness

_NO_W1 = Basis(("1", "w2"), lambda w1, w2: np.column_stack([np.ones_like(w1), w2]))
_NO_W1SQ = Basis(("1", "w1", "w2"), lambda w1, w2: np.column_stack([np.ones_like(w1), w1, w2]))


@pytest.mark.parametrize("wrong", ["outcome", "ratio"])
def test_double_robustness(setting, wrong):
    from popalloc.model import Transport

    truth = estimand_value(setting.outcome, setting.trial, Transport(setting.transport_law))
    rng = np.random.default_rng(20240101)
    trial = generate_trial(setting.trial, setting.outcome, CIR(0.5), 5000, rng)
    target = generate_target(setting.transport_law, 5000, rng)
    if wrong == "outcome":
        nu = FittedNuisances(fit_outcome_regression(trial, _NO_W1), fit_density_ratio(trial, target))
    else:
        nu = FittedNuisances(fit_outcome_regression(trial), fit_density_ratio(trial, target, _NO_W1SQ))
    rep = estimate_transport(trial, target, nu)
    assert abs(rep.point - truth) < 3 * rep.std_error
