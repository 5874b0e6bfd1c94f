"""Independent reference computations for the baseline setting.

These use adaptive scipy quadrature over explicit formulas and share no code
with the package's Gauss-Legendre machinery.
"""

import math

from scipy import integrate, stats

LO, HI = -2.0, 2.0


def tn_pdf(x, mu, sigma):
    a, b = (LO - mu) / sigma, (HI - mu) / sigma
    return stats.truncnorm.pdf(x, a, b, loc=mu, scale=sigma)


def f_trial(w1, w2):
    return tn_pdf(w1, 0.0, 0.75) * (0.2 if w2 else 0.8)


def f_transport(w1, w2):
    return tn_pdf(w1, 0.5, 1.0) * 0.5


def v1(w1, w2):
    return math.exp(1 - w1 - 2 * w2)


def v0(w1, w2):
    return math.exp(-2 + w1 + 2 * w2)


def delta(w1, w2):
    return 1.0 - w1


def expect(func, density, points=()):
    total = 0.0
    for w2 in (0, 1):
        val, _ = integrate.quad(lambda x: func(x, w2) * density(x, w2), LO, HI,
                                points=list(points) or None, epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
    return total


def trial_ate_bound(p):
    """Var_F(delta) + E_F[v1/p + v0/(1-p)] for a propensity function ``p(w1, w2)``."""
    mu = expect(delta, f_trial)
    spread = expect(lambda a, b: (delta(a, b) - mu) ** 2, f_trial)
    noise = expect(lambda a, b: v1(a, b) / p(a, b) + v0(a, b) / (1 - p(a, b)), f_trial)
    return spread + noise


def p_opt(w1, w2):
    s1, s0 = math.sqrt(v1(w1, w2)), math.sqrt(v0(w1, w2))
    return s1 / (s1 + s0)


def poststrat_bound(p, cut=0.5, weights=(0.1, 0.2, 0.3, 0.4)):
    def k(w1, w2):
        return int(w1 >= cut) + 2 * int(w2)

    tau = [expect(lambda a, b, j=j: float(k(a, b) == j), f_trial, [cut]) for j in range(4)]
    eff = [expect(lambda a, b, j=j: (k(a, b) == j) * delta(a, b), f_trial, [cut]) / tau[j] for j in range(4)]

    def integrand(a, b):
        j = k(a, b)
        r = weights[j] / tau[j]
        return r * r * ((delta(a, b) - eff[j]) ** 2 + v1(a, b) / p(a, b) + v0(a, b) / (1 - p(a, b)))

    return expect(integrand, f_trial, [cut])


def cir(pi):
    return lambda w1, w2: pi
