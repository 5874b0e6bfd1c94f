"""Special functions, quadrature and seeded random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal

import numpy as np
from scipy import special

from .exceptions import DomainError

DEFAULT_ORDER = 64

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def normal_cdf(x):
    """Standard normal distribution function."""
    return special.ndtr(np.asarray(x, dtype=float))


def normal_quantile(p):
    """Inverse of :func:`normal_cdf`; ``p`` must lie strictly inside (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise DomainError(f"normal quantile requires 0 < p < 1, got {p!r}")
    return special.ndtri(p)


def normal_cdf_quantile(value, direction: Literal["cdf", "quantile"] = "cdf"):
    if direction == "cdf":
        return normal_cdf(value)
    if direction == "quantile":
        return normal_quantile(value)
    raise DomainError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights approximating an integral over ``interval``."""

    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def integrate(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, func(self.nodes)))


def gauss_legendre(order: int, lower: float, upper: float) -> QuadratureRule:
    """Gauss-Legendre rule with ``order`` nodes mapped onto ``[lower, upper]``.

    Exact for polynomials of degree ``2 * order - 1``.
    """
    if int(order) != order or order < 1:
        raise DomainError(f"quadrature order must be a positive integer, got {order}")
    if not (np.isfinite(lower) and np.isfinite(upper)) or not lower < upper:
        raise DomainError(f"need finite lower < upper, got [{lower}, {upper}]")
    x, w = np.polynomial.legendre.leggauss(int(order))
    half = 0.5 * (upper - lower)
    mid = 0.5 * (upper + lower)
    return QuadratureRule(nodes=half * x + mid, weights=half * w, interval=(lower, upper))


def composite_gauss_legendre(
    order: int, lower: float, upper: float, breakpoints: Iterable[float] = ()
) -> QuadratureRule:
    """Gauss-Legendre panels on ``[lower, upper]`` split at interior ``breakpoints``.

    Integrands with jumps (stratum indicators) stay exactly integrable when the
    jumps coincide with panel edges.
    """
    inner = sorted({float(b) for b in breakpoints if lower < b < upper})
    edges = [lower, *inner, upper]
    panels = [gauss_legendre(order, a, b) for a, b in zip(edges[:-1], edges[1:])]
    return QuadratureRule(
        nodes=np.concatenate([p.nodes for p in panels]),
        weights=np.concatenate([p.weights for p in panels]),
        interval=(lower, upper),
    )


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(master_seed, stream_index)``.

    Streams with distinct indices are spawned from one ``SeedSequence`` and are
    independent for all practical purposes.
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.master_seed < 0 or self.master_seed >= 2**64:
            raise DomainError("master_seed must be an unsigned 64-bit integer")
        if self.stream_index < 0:
            raise DomainError("stream_index must be non-negative")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, (*self.path, int(index)))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            self.master_seed, spawn_key=(self.stream_index, *self.path)
        )
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    """Accept an ``RngStream``, a ``Generator`` or an integer seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mu, sigma^2) conditioned on ``lower <= X <= upper``."""

    mu: float
    sigma: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not self.lower < self.upper:
            raise DomainError(f"need lower < upper, got [{self.lower}, {self.upper}]")
        if not self.mass > 0:
            raise DomainError("truncation interval carries zero normal mass")

    @property
    def alpha(self) -> float:
        return (self.lower - self.mu) / self.sigma

    @property
    def beta(self) -> float:
        return (self.upper - self.mu) / self.sigma

    @property
    def mass(self) -> float:
        # upper-tail form keeps precision when both bounds sit far right
        if self.alpha > 0:
            return float(normal_cdf(-self.alpha) - normal_cdf(-self.beta))
        return float(normal_cdf(self.beta) - normal_cdf(self.alpha))

    def mean(self) -> float:
        return self.mu + self.sigma * float(
            (normal_pdf(self.alpha) - normal_pdf(self.beta)) / self.mass
        )

    def variance(self) -> float:
        a, b = self.alpha, self.beta
        pa, pb = normal_pdf(a), normal_pdf(b)
        pa_a = 0.0 if np.isinf(a) else a * pa
        pb_b = 0.0 if np.isinf(b) else b * pb
        ratio = (pa - pb) / self.mass
        return float(self.sigma**2 * (1.0 + (pa_a - pb_b) / self.mass - ratio**2))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        dens = normal_pdf((x - self.mu) / self.sigma) / (self.sigma * self.mass)
        return np.where(inside, dens, 0.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mu) / self.sigma
        inside = (x >= self.lower) & (x <= self.upper)
        val = -0.5 * z * z - math.log(_SQRT_2PI * self.sigma * self.mass)
        return np.where(inside, val, -np.inf)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        return (normal_cdf((x - self.mu) / self.sigma) - normal_cdf(self.alpha)) / self.mass

    def sample(self, rng, size: int) -> np.ndarray:
        """Draw ``size`` values by rejection, or by inverse cdf when rejection is wasteful."""
        gen = as_generator(rng)
        size = int(size)
        if self.mass < 0.1:
            lo, hi = normal_cdf(self.alpha), normal_cdf(self.beta)
            u = lo + (hi - lo) * gen.random(size)
            out = self.mu + self.sigma * special.ndtri(u)
            return np.clip(out, self.lower, self.upper)
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            draw = self.mu + self.sigma * gen.standard_normal(int(need / self.mass) + 8)
            draw = draw[(draw >= self.lower) & (draw <= self.upper)][:need]
            out[filled : filled + draw.size] = draw
            filled += draw.size
        return out


def truncated_normal(
    mu: float,
    sigma: float,
    lower: float,
    upper: float,
    mode: Literal["sample", "mean", "pdf"] = "mean",
    *,
    x=None,
    rng=None,
    size: int = 1,
):
    """Functional front end over :class:`TruncatedNormal`."""
    law = TruncatedNormal(mu, sigma, lower, upper)
    if mode == "mean":
        return law.mean()
    if mode == "pdf":
        return law.pdf(x)
    if mode == "sample":
        return law.sample(rng, size)
    raise DomainError(f"unknown mode {mode!r}")
