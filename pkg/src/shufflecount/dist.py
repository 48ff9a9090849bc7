"""Log-space PMFs and seeded samplers for the protocol's noise distributions.

Everything here is computed in log space via ``scipy.special.gammaln`` so that
counts in the thousands (flooding means, padded message counts) never touch a
raw factorial. All samplers draw from an explicit :class:`RandomSource`, so
identical seeds reproduce identical runs and distinct streams can be handed to
concurrent workers.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .errors import ParameterError

NEG_INF = float("-inf")


class RandomSource:
    """Reproducible randomness keyed by a master seed and a stream path.

    Identical ``(seed, stream)`` pairs yield identical draw sequences, and
    distinct stream paths are statistically independent (they are spawn keys
    of a ``numpy.random.SeedSequence``). Workers running concurrently must
    each own a distinct substream.

    Parameters
    ----------
    seed : int
        Non-negative master seed.
    stream : int or tuple of int, optional
        Stream path under the master seed. Defaults to the root stream.
    """

    __slots__ = ("seed", "stream", "_generator")

    def __init__(self, seed: int, stream: int | tuple[int, ...] = ()):
        if isinstance(stream, int):
            stream = (stream,)
        seed = int(seed)
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self.stream = tuple(int(t) for t in stream)
        self._generator: np.random.Generator | None = None

    @property
    def generator(self) -> np.random.Generator:
        """The live generator for this stream (created lazily, then stateful)."""
        if self._generator is None:
            seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
            self._generator = np.random.default_rng(seq)
        return self._generator

    def substream(self, *path: int) -> "RandomSource":
        """A fresh independent stream one level below this one."""
        return RandomSource(self.seed, self.stream + tuple(int(p) for p in path))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream={self.stream})"


def _check_prob(name: str, p: float) -> None:
    if not (0.0 < p < 1.0) or not math.isfinite(p):
        raise ParameterError(f"{name} must be in (0, 1), got {p}")


def _check_positive(name: str, x: float) -> None:
    if not (x > 0.0) or not math.isfinite(x):
        raise ParameterError(f"{name} must be a positive finite real, got {x}")


def _as_result(values: np.ndarray, scalar: bool):
    return float(values) if scalar else values


def geo_logpmf(p: float, k) -> float | np.ndarray:
    """Log-PMF of the geometric distribution on {0, 1, ...}.

    ``f(k) = p (1-p)^k`` for ``k >= 0``; minus infinity off-support.
    """
    _check_prob("p", p)
    k = np.asarray(k)
    scalar = k.ndim == 0
    out = np.where(k >= 0, math.log(p) + k * math.log1p(-p), NEG_INF)
    return _as_result(out, scalar)


def nb_logpmf(r: float, p: float, k) -> float | np.ndarray:
    """Log-PMF of the negative binomial with real shape ``r > 0``.

    ``f(k) = C(k+r-1, k) p^r (1-p)^k``, with the binomial coefficient
    evaluated through log-gamma so fractional shapes (the n-divided noise
    components) are exact. Coincides with :func:`geo_logpmf` at ``r = 1``.
    """
    _check_positive("r", r)
    _check_prob("p", p)
    k = np.asarray(k)
    scalar = k.ndim == 0
    kk = np.where(k >= 0, k, 0)  # keep gammaln off its poles; masked below
    log_coef = gammaln(kk + r) - gammaln(kk + 1) - gammaln(r)
    out = np.where(
        k >= 0, log_coef + r * math.log(p) + kk * math.log1p(-p), NEG_INF
    )
    return _as_result(out, scalar)


def poi_logpmf(mean: float, k) -> float | np.ndarray:
    """Log-PMF of the Poisson distribution: ``k ln(mean) - mean - ln k!``."""
    _check_positive("mean", mean)
    k = np.asarray(k)
    scalar = k.ndim == 0
    kk = np.where(k >= 0, k, 0)
    out = np.where(k >= 0, kk * math.log(mean) - mean - gammaln(kk + 1), NEG_INF)
    return _as_result(out, scalar)


def sample_geo(p: float, rng: RandomSource, size=None):
    """Draw from the geometric on {0, 1, ...} with PMF ``p (1-p)^k``."""
    _check_prob("p", p)
    return rng.generator.geometric(p, size=size) - 1


def sample_nb(r: float, p: float, rng: RandomSource, size=None):
    """Draw from the negative binomial via its gamma-mixed Poisson form.

    A rate is drawn from Gamma(shape ``r``, scale ``(1-p)/p``) and fed to a
    Poisson draw; this is exact for every real ``r > 0``, including the tiny
    fractional shapes used for per-user noise shares.
    """
    _check_positive("r", r)
    _check_prob("p", p)
    gen = rng.generator
    rates = gen.gamma(r, (1.0 - p) / p, size=size)
    return gen.poisson(rates)


def sample_poi(mean: float, rng: RandomSource, size=None):
    """Draw from Poisson(``mean``)."""
    _check_positive("mean", mean)
    return rng.generator.poisson(mean, size=size)


def sample_dlap(a: float, rng: RandomSource, size=None):
    """Draw from the discrete Laplace with PMF proportional to ``exp(-a |k|)``.

    Realized as the difference of two independent geometric draws with
    success probability ``1 - e^{-a}``.
    """
    p = geo_success_prob(a)
    gen = rng.generator
    return (gen.geometric(p, size=size) - 1) - (gen.geometric(p, size=size) - 1)


def geo_success_prob(a: float) -> float:
    """Success probability ``1 - e^{-a}`` of the geometric with log-ratio ``a``."""
    _check_positive("a", a)
    return -math.expm1(-a)


def geo_mean(p: float) -> float:
    """Expectation ``(1-p)/p`` of the geometric on {0, 1, ...}."""
    _check_prob("p", p)
    return (1.0 - p) / p


def dlap_variance(a: float) -> float:
    """Variance ``2 e^{-a} / (1 - e^{-a})^2`` of the discrete Laplace."""
    _check_positive("a", a)
    return 2.0 * math.exp(-a) / math.expm1(-a) ** 2
