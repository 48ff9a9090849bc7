"""Numerical verification of the protocol's privacy, utility and communication.

The centerpiece is an exact oracle for the shuffler's view distribution. For
a dataset with ``n0`` zeros and ``n1`` ones the view ``(V_plus, V_minus)``
decomposes as

    V_plus  = (a0 + a1) * pad + a1 + w + g1
    V_minus = (a0 + a1) * pad      + w + g2

with ``a0 ~ Bin(n0, 1-q)``, ``a1 ~ Bin(n1, 1-q)`` the numbers of
participating users, ``w ~ Poisson(flood_mean)`` the pooled flooding count
and ``g1, g2`` independent geometrics (the pooled noise shares; pooling is
exact because the per-user shares are the n-divided forms). All inner sums
are finite, so the oracle is exact up to floating point; only the grid over
``(i, j)`` is truncated, and the mass left outside it is reported.

The divergence audit compares the exact view distributions of the
neighboring pair ``(1, 0, ..., 0)`` vs ``(0, ..., 0)`` over a grid covering
almost all of both masses. It is an empirical certification for regression
detection, not a proof: the guarantee over the infinite support is the
protocol's own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, xlogy

from .dist import (
    NEG_INF,
    RandomSource,
    dlap_variance,
    geo_mean,
    geo_success_prob,
    poi_logpmf,
)
from .errors import AuditInconclusiveError, ParameterError
from .params import ProtocolParams
from .protocol import estimate_trials, message_count_trials, simulate_views

DEFAULT_COVERAGE = 1.0 - 1e-9
DEFAULT_MASS_FLOOR = 1e-30
DEFAULT_TOLERANCE = 1e-6
DEFAULT_GRID_CAP = 4096


@dataclass(frozen=True)
class DatasetSummary:
    """Input multiset summary; the view law depends on inputs only through it."""

    zeros: int
    ones: int

    def __post_init__(self):
        if self.zeros < 0 or self.ones < 0 or self.zeros + self.ones < 1:
            raise ParameterError("dataset must have non-negative counts, n >= 1")

    @property
    def n(self) -> int:
        return self.zeros + self.ones


def _binom_logpmf(n: int, p: float, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k)
    return (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + xlogy(k, p)
        + xlogy(n - k, 1.0 - p)
    )


def _flood_noise_grid(
    params: ProtocolParams, i_max: int, j_max: int
) -> np.ndarray:
    """Log-PMF of (flood + geo, flood + geo) with a shared flood count.

    ``H(a, b) = p^2 e^{-eta (a+b)} * sum_{w <= min(a,b)} e^{2 eta w} Poi(w)``
    where ``eta`` is the noise budget; the cumulative inner sum is built once
    with a running logaddexp.
    """
    eta = params.noise_epsilon
    p = geo_success_prob(eta)
    w = np.arange(min(i_max, j_max) + 1)
    log_terms = (
        w * (math.log(params.flood_mean) + 2.0 * eta)
        - params.flood_mean
        - gammaln(w + 1)
    )
    cumulative = np.logaddexp.accumulate(log_terms)
    a = np.arange(i_max + 1)[:, None]
    b = np.arange(j_max + 1)[None, :]
    return 2.0 * math.log(p) - eta * (a + b) + cumulative[np.minimum(a, b)]


def view_logpmf_grid(
    ds: DatasetSummary, params: ProtocolParams, i_max: int, j_max: int
) -> np.ndarray:
    """Exact view log-PMF on the rectangle ``[0, i_max] x [0, j_max]``.

    Mixes the flood-plus-noise grid over the ``(n0 + 1)(n1 + 1)`` possible
    participation counts; every term is a finite log-space sum.
    """
    base = _flood_noise_grid(params, i_max, j_max)
    keep = 1.0 - params.drop_prob
    a0s = np.arange(ds.zeros + 1)
    a1s = np.arange(ds.ones + 1)
    lw0 = _binom_logpmf(ds.zeros, keep, a0s)
    lw1 = _binom_logpmf(ds.ones, keep, a1s)
    acc = np.full((i_max + 1, j_max + 1), NEG_INF)
    for a0 in a0s:
        for a1 in a1s:
            lw = lw0[a0] + lw1[a1]
            if lw == NEG_INF:
                continue
            u = (a0 + a1) * params.pad_count + a1
            v = (a0 + a1) * params.pad_count
            if u > i_max or v > j_max:
                continue
            shifted = np.full((i_max + 1, j_max + 1), NEG_INF)
            shifted[u:, v:] = lw + base[: i_max + 1 - u, : j_max + 1 - v]
            acc = np.logaddexp(acc, shifted)
    return acc


def exact_view_logpmf(
    ds: DatasetSummary, params: ProtocolParams, i: int, j: int
) -> float:
    """Exact log-probability that the view equals ``(i, j)``.

    Point evaluation with its own finite sums (independent of the grid code
    path, which the tests cross-check against this one).
    """
    if i < 0 or j < 0:
        return NEG_INF
    eta = params.noise_epsilon
    p = geo_success_prob(eta)
    log_flood_mean = math.log(params.flood_mean)
    keep = 1.0 - params.drop_prob
    terms = []
    for a0 in range(ds.zeros + 1):
        for a1 in range(ds.ones + 1):
            lw = float(
                _binom_logpmf(ds.zeros, keep, np.asarray(a0))
                + _binom_logpmf(ds.ones, keep, np.asarray(a1))
            )
            if lw == NEG_INF:
                continue
            a = i - (a0 + a1) * params.pad_count - a1
            b = j - (a0 + a1) * params.pad_count
            if a < 0 or b < 0:
                continue
            w = np.arange(min(a, b) + 1)
            inner = (
                w * (log_flood_mean + 2.0 * eta)
                - params.flood_mean
                - gammaln(w + 1)
            )
            terms.append(
                lw + 2.0 * math.log(p) - eta * (a + b) + logsumexp(inner)
            )
    if not terms:
        return NEG_INF
    return float(logsumexp(terms))


@dataclass(frozen=True)
class AuditReport:
    """Outcome of a grid-restricted max-divergence audit."""

    sup_abs_log_ratio: float
    epsilon_target: float
    mass_covered_x: float
    mass_covered_xprime: float
    grid_i_max: int
    grid_j_max: int
    passed: bool
    support_mismatch: bool
    excluded_mass_bound: float
    coverage: float
    mass_floor: float
    tolerance: float
    n_users: int

    def to_json_dict(self) -> dict:
        return {
            "sup_abs_log_ratio": self.sup_abs_log_ratio,
            "eps_target": self.epsilon_target,
            "mass_covered_x": self.mass_covered_x,
            "mass_covered_xprime": self.mass_covered_xprime,
            "grid": {"i_max": self.grid_i_max, "j_max": self.grid_j_max},
            "pass": self.passed,
            "excluded_mass_bound": self.excluded_mass_bound,
            "support_mismatch": self.support_mismatch,
            "coverage": self.coverage,
            "mass_floor": self.mass_floor,
            "tolerance": self.tolerance,
            "n_users": self.n_users,
        }


def _grid_bounds(
    params: ProtocolParams, n_users: int, tail: float
) -> tuple[int, int]:
    p = geo_success_prob(params.noise_epsilon)
    flood_q = int(stats.poisson.ppf(1.0 - tail, params.flood_mean)) + 2
    noise_q = int(math.log(tail) / math.log1p(-p)) + 2
    i_max = n_users * (params.pad_count + 1) + flood_q + noise_q
    j_max = n_users * params.pad_count + flood_q + noise_q
    return i_max, j_max


def divergence_audit(
    n_users: int,
    params: ProtocolParams,
    coverage: float = DEFAULT_COVERAGE,
    epsilon_target: float | None = None,
    mass_floor: float = DEFAULT_MASS_FLOOR,
    tolerance: float = DEFAULT_TOLERANCE,
    grid_cap: int = DEFAULT_GRID_CAP,
) -> AuditReport:
    """Audit the privacy guarantee on the canonical neighboring pair.

    Compares the exact view distributions of ``(1, 0, ..., 0)`` against
    ``(0, ..., 0)`` over a grid holding at least ``coverage`` of both masses.
    The supremum of the absolute log-ratio is taken over grid points where
    either PMF reaches ``mass_floor``; disjoint-support points (one PMF
    exactly zero where the other is positive) are reported separately and
    force an unbounded ratio, whatever their mass.

    Raises
    ------
    AuditInconclusiveError
        If the coverage target cannot be met within ``grid_cap``; this is
        neither a pass nor a fail.
    """
    if n_users < 1:
        raise ParameterError(f"n_users must be >= 1, got {n_users}")
    if epsilon_target is None:
        epsilon_target = params.epsilon
    with_one = DatasetSummary(zeros=n_users - 1, ones=1)
    all_zero = DatasetSummary(zeros=n_users, ones=0)

    tail = (1.0 - coverage) / 8.0
    while True:
        i_max, j_max = _grid_bounds(params, n_users, tail)
        if max(i_max, j_max) > grid_cap:
            raise AuditInconclusiveError(
                f"coverage {coverage} not reachable within grid cap {grid_cap}"
            )
        lf_x = view_logpmf_grid(with_one, params, i_max, j_max)
        lf_xp = view_logpmf_grid(all_zero, params, i_max, j_max)
        mass_x = float(np.exp(logsumexp(lf_x)))
        mass_xp = float(np.exp(logsumexp(lf_xp)))
        if mass_x >= coverage and mass_xp >= coverage:
            break
        tail /= 4.0

    inf_x = np.isneginf(lf_x)
    inf_xp = np.isneginf(lf_xp)
    support_mismatch = bool(np.any(inf_x != inf_xp))

    mask = ((lf_x >= math.log(mass_floor)) | (lf_xp >= math.log(mass_floor))) & ~(
        inf_x & inf_xp
    )
    if support_mismatch:
        sup = math.inf
    elif np.any(mask):
        sup = float(np.max(np.abs(lf_x[mask] - lf_xp[mask])))
    else:
        sup = 0.0

    passed = (
        not support_mismatch
        and sup <= epsilon_target + tolerance
        and mass_x >= coverage
        and mass_xp >= coverage
    )
    return AuditReport(
        sup_abs_log_ratio=sup,
        epsilon_target=epsilon_target,
        mass_covered_x=mass_x,
        mass_covered_xprime=mass_xp,
        grid_i_max=i_max,
        grid_j_max=j_max,
        passed=passed,
        support_mismatch=support_mismatch,
        excluded_mass_bound=max(0.0, 1.0 - min(mass_x, mass_xp)),
        coverage=coverage,
        mass_floor=mass_floor,
        tolerance=tolerance,
        n_users=n_users,
    )


@dataclass(frozen=True)
class RatioCheck:
    """Result of an exhaustive single-step ratio inequality check."""

    ok: bool
    worst_margin: float
    worst_index: int
    i_max: int
    tolerance: float


def check_geo_ratio(
    noise_epsilon: float, i_max: int, tolerance: float = 1e-9
) -> RatioCheck:
    """Verify ``f(i-1) <= e^eta f(i)`` for the geometric noise on ``[0, i_max]``.

    The margin ``eta - (ln f(i-1) - ln f(i))`` is identically zero in exact
    arithmetic for ``i >= 1`` (and infinite at ``i = 0``), so the check is a
    floating-point regression guard with slack ``tolerance``.
    """
    if noise_epsilon <= 0.0:
        raise ParameterError("noise_epsilon must be positive")
    i = np.arange(i_max + 1)
    # ln f(i-1) - ln f(i) = -log1p(-p) for i >= 1; -inf margin never occurs
    step = np.where(i >= 1, -math.log1p(-geo_success_prob(noise_epsilon)), NEG_INF)
    margins = noise_epsilon - step
    worst = int(np.argmin(margins))
    return RatioCheck(
        ok=bool(margins[worst] >= -tolerance),
        worst_margin=float(margins[worst]),
        worst_index=worst,
        i_max=i_max,
        tolerance=tolerance,
    )


def check_poi_ratio(
    params: ProtocolParams, i_max: int | None = None, tolerance: float = 1e-9
) -> RatioCheck:
    """Verify the flooding inequality on ``[0, i_max]``.

    Checks ``(e^eps - 1) q f(i + pad) + e^{eps - eta} f(i - 1) >= f(i)`` for
    the Poisson flood PMF ``f``, in log space with a log-sum-exp on the left.
    The default range extends to ``flood_mean + 20 sqrt(flood_mean) + pad``.
    """
    lam, s = params.flood_mean, params.pad_count
    if i_max is None:
        i_max = math.ceil(lam + 20.0 * math.sqrt(lam) + s)
    i = np.arange(i_max + 1)
    if params.drop_prob > 0.0:
        log_drop_coef = math.log(math.expm1(params.epsilon)) + math.log(
            params.drop_prob
        )
        term_pad = log_drop_coef + poi_logpmf(lam, i + s)
    else:
        term_pad = np.full(i.shape, NEG_INF)
    term_down = (params.epsilon - params.noise_epsilon) + poi_logpmf(lam, i - 1)
    lhs = np.logaddexp(term_pad, term_down)
    margins = lhs - poi_logpmf(lam, i)
    worst = int(np.argmin(margins))
    return RatioCheck(
        ok=bool(margins[worst] >= -tolerance),
        worst_margin=float(margins[worst]),
        worst_index=worst,
        i_max=i_max,
        tolerance=tolerance,
    )


def exact_mse(params: ProtocolParams, ones: int) -> float:
    """Closed-form MSE of the estimator on a dataset with ``ones`` ones."""
    q = params.drop_prob
    return (
        dlap_variance(params.noise_epsilon)
        + ones * q * (1.0 - q)
        + (ones * q) ** 2
    )


def mse_bound(params: ProtocolParams) -> float:
    """Data-independent MSE upper bound (worst case over ones counts)."""
    q, n = params.drop_prob, params.n_users
    return dlap_variance(params.noise_epsilon) + q * n + q * q * n * (n - 1)


def exact_mean_messages(params: ProtocolParams, x: int) -> float:
    """Expected messages one user with input ``x`` sends."""
    p = geo_success_prob(params.noise_epsilon)
    return (
        (1.0 - params.drop_prob) * (2 * params.pad_count + x)
        + 2.0 * geo_mean(p) / params.n_users
        + 2.0 * params.flood_mean / params.n_users
    )


def messages_bound(params: ProtocolParams) -> float:
    """Upper bound on the per-user expected message count.

    ``2 pad + 1 + 2 flood_mean / n + 2 E[geo] / n``: the flood term appears
    twice because every flooding draw emits one +1 and one -1 message.
    """
    p = geo_success_prob(params.noise_epsilon)
    return (
        2 * params.pad_count
        + 1
        + 2.0 * params.flood_mean / params.n_users
        + 2.0 * geo_mean(p) / params.n_users
    )


@dataclass(frozen=True)
class MseMeasurement:
    empirical_mse: float
    std_err: float
    exact: float
    bound: float
    trials: int
    fidelity: str


@dataclass(frozen=True)
class CommMeasurement:
    empirical_mean: float
    std_err: float
    exact: float
    bound: float
    trials: int


def measure_mse(
    params: ProtocolParams,
    ds: DatasetSummary,
    trials: int,
    rng: RandomSource,
    fidelity: str = "message",
    threads: int = 1,
) -> MseMeasurement:
    """Monte Carlo MSE against the closed-form law and its bound.

    At ``message`` fidelity every trial materializes and shuffles the full
    multiset. Requires at least 1000 trials for the standard error to mean
    anything.
    """
    if trials < 1000:
        raise ParameterError(f"trials must be >= 1000, got {trials}")
    if ds.n != params.n_users:
        raise ParameterError("dataset size must match params.n_users")
    estimates = estimate_trials(
        ds.zeros, ds.ones, params, trials, rng, fidelity=fidelity, threads=threads
    )
    sq_err = (estimates - ds.ones).astype(np.float64) ** 2
    return MseMeasurement(
        empirical_mse=float(sq_err.mean()),
        std_err=float(sq_err.std(ddof=1) / math.sqrt(trials)),
        exact=exact_mse(params, ds.ones),
        bound=mse_bound(params),
        trials=trials,
        fidelity=fidelity,
    )


def measure_comm(
    params: ProtocolParams, x: int, trials: int, rng: RandomSource
) -> CommMeasurement:
    """Monte Carlo per-user message count against its expectation and bound."""
    if trials < 1000:
        raise ParameterError(f"trials must be >= 1000, got {trials}")
    counts = message_count_trials(x, params, trials, rng).astype(np.float64)
    return CommMeasurement(
        empirical_mean=float(counts.mean()),
        std_err=float(counts.std(ddof=1) / math.sqrt(trials)),
        exact=exact_mean_messages(params, x),
        bound=messages_bound(params),
        trials=trials,
    )


@dataclass(frozen=True)
class GofResult:
    """Chi-square goodness-of-fit outcome."""

    statistic: float
    pvalue: float
    dof: int
    cells: int


def gof_integer_samples(
    samples: np.ndarray, logpmf, min_expected: float = 10.0
) -> GofResult:
    """Chi-square test of non-negative integer samples against an exact PMF.

    Cells with expected count below ``min_expected`` are lumped into a single
    remainder cell (which also absorbs all mass beyond the observed range).
    """
    samples = np.asarray(samples)
    n = samples.size
    k_max = int(samples.max())
    ks = np.arange(k_max + 1)
    expected = np.exp(logpmf(ks)) * n
    observed = np.bincount(samples, minlength=k_max + 1).astype(np.float64)
    sel = expected >= min_expected
    f_obs = np.append(observed[sel], n - observed[sel].sum())
    f_exp = np.append(expected[sel], n - expected[sel].sum())
    statistic, pvalue = stats.chisquare(f_obs, f_exp)
    return GofResult(
        statistic=float(statistic),
        pvalue=float(pvalue),
        dof=f_obs.size - 1,
        cells=f_obs.size,
    )


def crossvalidate_views(
    ds: DatasetSummary,
    params: ProtocolParams,
    trials: int,
    rng: RandomSource,
    min_expected: float = 10.0,
) -> GofResult:
    """Chi-square simulated views (per-user sampling) against the exact oracle.

    The two routes are independent: simulation composes per-user randomizer
    draws, the oracle evaluates the pooled convolution in closed form.
    """
    v_plus, v_minus = simulate_views(ds.zeros, ds.ones, params, trials, rng)
    bound_i, bound_j = _grid_bounds(params, ds.n, 1e-12)
    i_max = max(int(v_plus.max()), bound_i)
    j_max = max(int(v_minus.max()), bound_j)
    grid = view_logpmf_grid(ds, params, i_max, j_max)
    expected = np.exp(grid) * trials
    observed = np.zeros_like(expected)
    np.add.at(observed, (v_plus, v_minus), 1.0)
    sel = expected >= min_expected
    f_obs = np.append(observed[sel], trials - observed[sel].sum())
    f_exp = np.append(expected[sel], trials - expected[sel].sum())
    statistic, pvalue = stats.chisquare(f_obs, f_exp)
    return GofResult(
        statistic=float(statistic),
        pvalue=float(pvalue),
        dof=f_obs.size - 1,
        cells=f_obs.size,
    )


def max_log_ratio(pmf_1: np.ndarray, pmf_2: np.ndarray) -> float:
    """Max over the support of ``pmf_1`` of ``ln(pmf_1 / pmf_2)``.

    Infinite when ``pmf_1`` puts mass where ``pmf_2`` has none. The two
    arrays must be aligned over the same outcome set.
    """
    pmf_1 = np.asarray(pmf_1, dtype=np.float64)
    pmf_2 = np.asarray(pmf_2, dtype=np.float64)
    support = pmf_1 > 0.0
    if not np.any(support):
        return NEG_INF
    if np.any(pmf_2[support] == 0.0):
        return math.inf
    return float(np.max(np.log(pmf_1[support]) - np.log(pmf_2[support])))
