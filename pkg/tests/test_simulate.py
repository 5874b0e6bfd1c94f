import numpy as np
import pytest
from scipy import stats

from popalloc.allocation import optimal_cdr
from popalloc.eif import variance_bound
from popalloc.exceptions import DomainError
from popalloc.model import CIR, Trial, target_expect
from popalloc.numerics import RngStream
from popalloc.simulate import (
    ESTIMANDS,
    StudyConfig,
    _summarise,
    generate_generalization_cohort,
    generate_target,
    generate_trial,
    run_replicate,
    run_study,
)

N = 100_000


def test_near_degenerate_cir(setting):
    d = generate_trial(setting.trial, setting.outcome, CIR(0.99), N, np.random.default_rng(1))
    assert abs(d.a.mean() - 0.99) < 0.003
    assert np.all(d.p_assign == 0.99)


def test_cdr_assignment_rate(setting):
    design = optimal_cdr(setting.outcome)
    d = generate_trial(setting.trial, setting.outcome, design, N, np.random.default_rng(2))
    expected = target_expect(lambda w1, w2: design.prob(w1, w2), setting.trial, Trial())
    assert abs(d.a.mean() - expected) < 3 * np.sqrt(expected * (1 - expected) / N)
    assert np.allclose(d.p_assign, design.prob(d.w1, d.w2))


def test_arm_one_outcome_mean(setting):
    d = generate_trial(setting.trial, setting.outcome, CIR(0.5), N, np.random.default_rng(3))
    y1 = d.y[d.a == 1]
    # E m(1, W) = 1 + Pr(W2 = 1)
    assert abs(y1.mean() - 1.2) < 3 * y1.std() / np.sqrt(y1.size)


def test_target_draws(setting):
    t = generate_target(setting.transport_law, N, np.random.default_rng(4))
    assert abs(t.w1.mean() - 0.3791895007184012) < 3 * t.w1.std() / np.sqrt(N)
    assert abs(t.w2.mean() - 0.5) < 3 * 0.5 / np.sqrt(N)
    assert len(generate_target(setting.transport_law, 1, np.random.default_rng(0))) == 1
    with pytest.raises(DomainError):
        generate_target(setting.transport_law, 0, np.random.default_rng(0))


def test_symmetric_enrollment(setting):
    sizes = []
    for i in range(400):
        c = generate_generalization_cohort(setting.trial, setting.trial, setting.outcome, CIR(0.5), 50,
                                           RngStream(6, i).generator())
        assert c.z.sum() == 50
        sizes.append(len(c))
    sizes = np.array(sizes)
    # N is negative binomial with success probability 1/2: mean 2n, variance 2n
    assert abs(sizes.mean() - 100) < 3 * np.sqrt(100 / 400)


def test_enrolled_covariates_follow_trial_law(setting):
    c = generate_generalization_cohort(setting.trial, setting.transport_law, setting.outcome, CIR(0.5),
                                       20_000, np.random.default_rng(7))
    assert c.z.sum() == 20_000
    assert c.z[-1] == 1
    s = c.z == 1
    assert stats.kstest(c.w1[s], setting.trial.w1.cdf).pvalue > 0.01
    assert abs(c.w2[s].mean() - 0.2) < 3 * np.sqrt(0.16 / s.sum())
    assert np.all(np.isnan(c.a[~s])) and np.all(np.isfinite(c.y[s]))


def test_replicate_is_deterministic(setting):
    cfg = StudyConfig(setting.trial, setting.outcome, setting.transport_law, setting.targets()["poststrat"],
                      {"half": CIR(0.5)}, replications=1)
    a = run_replicate(cfg, CIR(0.5), RngStream(1, 2))
    b = run_replicate(cfg, CIR(0.5), RngStream(1, 2))
    assert np.array_equal(a, b)
    assert a.shape == (len(ESTIMANDS), 2)


def _small_config(setting, **kw):
    base = dict(designs={"pi=0.5": CIR(0.5), "p_opt": optimal_cdr(setting.outcome)},
                replications=40, master_seed=3)
    base.update(kw)
    return StudyConfig(setting.trial, setting.outcome, setting.transport_law,
                       setting.targets()["poststrat"], **base)


def test_study_reproducible_and_job_independent(setting):
    cfg = _small_config(setting)
    a = run_study(cfg)
    b = run_study(cfg, jobs=2)
    for key in a.estimates:
        assert np.array_equal(a.estimates[key], b.estimates[key])
    assert a.cells["pi=0.5", "trial"].relative_efficiency == 1.0
    assert a.to_dict()["cells"]["p_opt"]["transport"]["replications"] == 40


def test_study_recovers_truth_in_oracle_mode(setting):
    res = run_study(_small_config(setting, replications=200, oracle=True))
    for d in res.designs:
        for e in res.estimands:
            c = res.cells[d, e]
            assert abs(c.bias) < 4 * c.bias_se


def test_study_config_validation(setting):
    with pytest.raises(DomainError):
        _small_config(setting, n=1)
    with pytest.raises(DomainError):
        _small_config(setting, replications=0)
    with pytest.raises(DomainError):
        _small_config(setting, reference="nope")


def test_relative_efficiency_summary():
    rng = np.random.default_rng(0)
    ref = np.column_stack([rng.normal(0, 2, 4000), np.ones(4000)])
    cand = np.column_stack([rng.normal(0, 1, 4000), np.ones(4000)])
    c = _summarise(cand, ref[:, 0], 0.0, False)
    assert c.relative_efficiency == pytest.approx(4.0, rel=4 * c.re_se / 4.0)
    # normal data: var(log s^2) is about 2/R per sample
    assert c.re_se == pytest.approx(4.0 * np.sqrt(4 / 4000), rel=0.15)
    assert _summarise(ref, ref[:, 0], 0.0, True).relative_efficiency == 1.0


@pytest.mark.slow
def test_variance_approaches_bound(setting):
    """n * Var(estimate) / bound is near 1 by n = 1000 and no larger than at n = 250."""
    ratios = {}
    for n in (250, 1000):
        cfg = _small_config(setting, designs={"pi=0.5": CIR(0.5)}, n=n, n_star=n,
                            replications=5000, master_seed=5)
        res = run_study(cfg)
        for i, (name, t) in enumerate(cfg.targets().items()):
            bound = variance_bound(CIR(0.5), t, setting.trial, setting.outcome)
            size = 2 * n if name in ("transport", "generalize") else n
            x = res.estimates["pi=0.5"][:, i, 0]
            c = x - x.mean()
            kurt = np.mean(c**4) / np.mean(c**2) ** 2
            r = x.var(ddof=1) * size / bound
            ratios[n, name] = (r, r * np.sqrt((kurt - 1) / x.size))
    for name in ESTIMANDS:
        (r250, s250), (r1000, s1000) = ratios[250, name], ratios[1000, name]
        assert r1000 < 1.15
        assert r1000 > 1 - 3 * s1000
        assert r250 > r1000 - 3 * np.hypot(s250, s1000)


@pytest.mark.slow
def test_split_half_relative_efficiencies_agree(full_study):
    """Replicates 0-2499 and 2500-4999 use disjoint streams and give consistent REs."""
    ref = full_study.reference
    for d in full_study.designs:
        if d == ref:
            continue
        for i, e in enumerate(full_study.estimands):
            halves = []
            for sl in (slice(0, 2500), slice(2500, 5000)):
                halves.append(_summarise(full_study.estimates[d][sl, i], full_study.estimates[ref][sl, i, 0],
                                         0.0, False))
            diff = halves[0].relative_efficiency - halves[1].relative_efficiency
            assert abs(diff) < 3 * np.hypot(halves[0].re_se, halves[1].re_se), (d, e)
