"""The counting protocol: per-user randomizer, shuffler and analyzer.

Each user holding a bit ``x`` emits, with probability ``1 - q``, a padded
input-dependent block of ``pad + x`` plus-messages and ``pad`` minus-messages
(nothing with probability ``q``), plus an independent negative-binomial share
of plus and of minus noise messages, plus a Poisson number of flooding pairs
(one +1 and one -1 each, cancelling in the sum). The analyzer sees only the
shuffled multiset of single-bit messages and outputs its signed sum.

Three simulation fidelities exist for experiments:

``message``
    The default pipeline: messages are materialized and a real shuffle runs.
``counts``
    Per-user message counts are drawn but the multiset is never built; the
    estimate law is exactly the same because shuffling does not change counts
    and flooding cancels in the signed sum.
``law``
    Derivation-level simulation of the closed-form estimate law
    ``ones - Binomial(ones, q) + DLap(noise_epsilon)``. No per-user structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dist import RandomSource, geo_success_prob, sample_nb, sample_poi
from .errors import ParameterError
from .params import ProtocolParams, check_condition

FIDELITIES = ("message", "counts", "law")


@dataclass(frozen=True)
class Contribution:
    """One user's message counts before shuffling."""

    input_plus: int
    input_minus: int
    noise_plus: int
    noise_minus: int
    flood: int

    @property
    def plus_count(self) -> int:
        return self.input_plus + self.noise_plus + self.flood

    @property
    def minus_count(self) -> int:
        return self.input_minus + self.noise_minus + self.flood

    @property
    def message_count(self) -> int:
        return self.plus_count + self.minus_count


@dataclass(frozen=True)
class View:
    """The shuffler's output summary: total +1 and -1 message counts.

    Invariant under any permutation of the underlying message sequence.
    """

    plus_count: int
    minus_count: int


@dataclass(frozen=True)
class CountingRun:
    """Result of one end-to-end protocol execution."""

    estimate: int
    messages_per_user: tuple[int, ...]
    view: View


def _check_bit(x: int) -> int:
    if x not in (0, 1):
        raise ParameterError(f"inputs must be bits in {{0, 1}}, got {x!r}")
    return int(x)


def _require_feasible(params: ProtocolParams) -> None:
    check = check_condition(params)
    if not check.ok:
        raise ParameterError(
            f"params violate feasibility clauses {list(check.violations)}"
        )


def randomize(x: int, params: ProtocolParams, rng: RandomSource) -> Contribution:
    """Run one user's randomizer.

    With probability ``1 - drop_prob`` the input-dependent block is
    ``(pad + x, pad)``, otherwise ``(0, 0)``. Noise counts are negative
    binomial with shape ``1/n`` (so they sum to a geometric across users) and
    the flooding count is Poisson with mean ``flood_mean / n``.
    """
    x = _check_bit(x)
    gen = rng.generator
    if gen.random() < params.drop_prob:
        input_plus = input_minus = 0
    else:
        input_plus, input_minus = params.pad_count + x, params.pad_count
    p = geo_success_prob(params.noise_epsilon)
    shape = 1.0 / params.n_users
    noise_plus = int(sample_nb(shape, p, rng))
    noise_minus = int(sample_nb(shape, p, rng))
    flood = int(sample_poi(params.flood_mean / params.n_users, rng))
    return Contribution(input_plus, input_minus, noise_plus, noise_minus, flood)


def shuffle(
    contributions: Sequence[Contribution], rng: RandomSource
) -> tuple[np.ndarray, View]:
    """Materialize all messages and return a uniformly shuffled sequence.

    Returns the permuted ``int8`` array of +1/-1 messages together with its
    :class:`View`; the view depends only on the multiset, never on the
    permutation.
    """
    total_plus = sum(c.plus_count for c in contributions)
    total_minus = sum(c.minus_count for c in contributions)
    signs = np.repeat(
        np.array([1, -1], dtype=np.int8), [total_plus, total_minus]
    )
    shuffled = rng.generator.permutation(signs)
    return shuffled, View(total_plus, total_minus)


def view_of(messages: np.ndarray) -> View:
    """Summarize a +1/-1 message sequence into its view."""
    messages = np.asarray(messages)
    plus = int(np.count_nonzero(messages == 1))
    minus = int(np.count_nonzero(messages == -1))
    if plus + minus != messages.size:
        raise ParameterError("messages must consist of +1/-1 entries only")
    return View(plus, minus)


def analyze(view: View) -> int:
    """Analyzer output: the signed sum of all messages, ``V_plus - V_minus``."""
    return view.plus_count - view.minus_count


def encode_wire(messages: np.ndarray) -> np.ndarray:
    """Wire format: one bit per message, 1 for +1 and 0 for -1."""
    messages = np.asarray(messages)
    return (messages > 0).astype(np.uint8)


def decode_wire(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_wire`."""
    bits = np.asarray(bits)
    return (2 * bits.astype(np.int8)) - 1


def run_counting(
    xs: Sequence[int], params: ProtocolParams, rng: RandomSource
) -> CountingRun:
    """Run the full pipeline: randomize every user, shuffle, analyze.

    Per-user randomness comes from substreams keyed by the user index, so
    randomizers may run concurrently and a run is reproducible from the
    master seed alone.
    """
    if len(xs) != params.n_users:
        raise ParameterError(
            f"got {len(xs)} inputs for n_users={params.n_users}"
        )
    _require_feasible(params)
    contributions = [
        randomize(x, params, rng.substream(0, i)) for i, x in enumerate(xs)
    ]
    _, view = shuffle(contributions, rng.substream(1))
    return CountingRun(
        estimate=analyze(view),
        messages_per_user=tuple(c.message_count for c in contributions),
        view=view,
    )


def sample_estimate(
    ones: int, params: ProtocolParams, rng: RandomSource, size=None
):
    """Derivation-level simulation: draw straight from the estimate law.

    The end-to-end estimate is distributed as
    ``ones - Binomial(ones, drop_prob) + DLap(noise_epsilon)``; this samples
    that law directly, with no per-user structure. Intended for large-scale
    error experiments only.
    """
    gen = rng.generator
    p = geo_success_prob(params.noise_epsilon)
    kept = ones - gen.binomial(ones, params.drop_prob, size=size)
    noise = (gen.geometric(p, size=size) - 1) - (gen.geometric(p, size=size) - 1)
    return kept + noise


def _user_counts(
    zeros: int, ones: int, params: ProtocolParams, gen: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-user (plus, minus) message counts for one run."""
    n = params.n_users
    x = np.zeros(n, dtype=np.int64)
    x[:ones] = 1
    keep = gen.random(n) >= params.drop_prob
    input_plus = np.where(keep, params.pad_count + x, 0)
    input_minus = np.where(keep, params.pad_count, 0)
    p = geo_success_prob(params.noise_epsilon)
    rates = gen.gamma(1.0 / n, (1.0 - p) / p, size=2 * n)
    noise = gen.poisson(rates)
    flood = gen.poisson(params.flood_mean / n, size=n)
    plus = input_plus + noise[:n] + flood
    minus = input_minus + noise[n:] + flood
    return plus, minus


def simulate_views(
    zeros: int,
    ones: int,
    params: ProtocolParams,
    trials: int,
    rng: RandomSource,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the shuffler's view for many runs at counts fidelity.

    Every user's randomizer output counts are drawn individually (the same
    per-user laws as :func:`randomize`, vectorized across trials) and summed;
    the multiset itself is never materialized because the view is already a
    function of the counts.

    Returns
    -------
    (v_plus, v_minus) : pair of int64 arrays of length ``trials``.
    """
    n = params.n_users
    if zeros + ones != n:
        raise ParameterError(f"zeros + ones must equal n_users={n}")
    gen = rng.generator
    x = np.zeros(n, dtype=np.int64)
    x[:ones] = 1
    keep = gen.random((trials, n)) >= params.drop_prob
    y_plus = keep @ (params.pad_count + x)
    y_minus = keep.sum(axis=1) * params.pad_count
    p = geo_success_prob(params.noise_epsilon)
    rates = gen.gamma(1.0 / n, (1.0 - p) / p, size=(trials, 2 * n))
    noise = gen.poisson(rates)
    flood = gen.poisson(params.flood_mean / n, size=(trials, n)).sum(axis=1)
    v_plus = y_plus + noise[:, :n].sum(axis=1) + flood
    v_minus = y_minus + noise[:, n:].sum(axis=1) + flood
    return v_plus.astype(np.int64), v_minus.astype(np.int64)


def _message_trial(
    zeros: int, ones: int, params: ProtocolParams, gen: np.random.Generator
) -> tuple[int, np.ndarray]:
    """One message-level run: materialize, shuffle, sum. Returns (estimate, per-user counts)."""
    plus, minus = _user_counts(zeros, ones, params, gen)
    signs = np.repeat(
        np.array([1, -1], dtype=np.int8), [int(plus.sum()), int(minus.sum())]
    )
    shuffled = gen.permutation(signs)
    return int(shuffled.sum()), plus + minus


def estimate_trials(
    zeros: int,
    ones: int,
    params: ProtocolParams,
    trials: int,
    rng: RandomSource,
    fidelity: str = "message",
    threads: int = 1,
) -> np.ndarray:
    """Repeated protocol estimates for Monte Carlo measurement.

    ``message`` fidelity runs the real pipeline once per trial on a per-trial
    substream (thread count never changes the output: streams are keyed by
    trial index and merged in index order). ``counts`` draws per-user counts
    without building the multiset; ``law`` samples the closed-form estimate
    law. All three produce the same estimate distribution.
    """
    if fidelity not in FIDELITIES:
        raise ParameterError(f"fidelity must be one of {FIDELITIES}")
    n = params.n_users
    if zeros + ones != n:
        raise ParameterError(f"zeros + ones must equal n_users={n}")

    if fidelity == "law":
        return np.asarray(
            sample_estimate(ones, params, rng, size=trials), dtype=np.int64
        )

    if fidelity == "counts":
        gen = rng.generator
        keep_ones = gen.binomial(ones, 1.0 - params.drop_prob, size=trials)
        p = geo_success_prob(params.noise_epsilon)
        rates = gen.gamma(1.0 / n, (1.0 - p) / p, size=(trials, 2 * n))
        noise = gen.poisson(rates)
        diff = noise[:, :n].sum(axis=1) - noise[:, n:].sum(axis=1)
        # flooding is omitted: it cancels exactly in the signed sum
        return (keep_ones + diff).astype(np.int64)

    estimates = np.empty(trials, dtype=np.int64)

    def run_one(t: int) -> None:
        estimates[t] = _message_trial(
            zeros, ones, params, rng.substream(t).generator
        )[0]

    if threads <= 1:
        for t in range(trials):
            run_one(t)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_one, range(trials)))
    return estimates


def message_count_trials(
    x: int, params: ProtocolParams, trials: int, rng: RandomSource
) -> np.ndarray:
    """Total messages sent by a single user with input ``x``, over many runs."""
    x = _check_bit(x)
    n = params.n_users
    gen = rng.generator
    keep = gen.random(trials) >= params.drop_prob
    input_msgs = np.where(keep, 2 * params.pad_count + x, 0)
    p = geo_success_prob(params.noise_epsilon)
    rates = gen.gamma(1.0 / n, (1.0 - p) / p, size=(trials, 2))
    noise = gen.poisson(rates).sum(axis=1)
    flood = gen.poisson(params.flood_mean / n, size=trials)
    return (input_msgs + noise + 2 * flood).astype(np.int64)
