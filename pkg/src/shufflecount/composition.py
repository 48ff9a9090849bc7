"""Real-valued summation and histograms composed from tagged counting instances.

Real summation fixes a precision of ``n_bits``, stochastically rounds every
input to that grid, and runs one counting instance per bit position with a
geometrically decaying budget split (ratio ``2**(-2/3)``, which minimizes the
sum of squared place values over squared budgets subject to the total).
Histograms run one counting instance per bucket at budget ``epsilon / 2``
each: changing one user's value touches at most two buckets.

Messages from all instances are pooled, tagged with their instance index and
shuffled together; per-instance views are recovered from the tags (counts per
tag are permutation invariant, so pooling costs nothing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dist import RandomSource, geo_success_prob
from .errors import DegenerateInputError, ParameterError
from .params import (
    ProtocolParams,
    derive_params,
    minimal_params,
    target_drop_prob,
    target_noise_epsilon,
)
from .protocol import FIDELITIES, randomize

#: Budget decay ratio between consecutive bit positions.
BETA = 2.0 ** (-2.0 / 3.0)


@dataclass(frozen=True)
class TaggedMessage:
    """A single pooled message: instance index plus sign bit."""

    tag: int
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ParameterError(f"sign must be +1 or -1, got {self.sign}")
        if self.tag < 0:
            raise ParameterError(f"tag must be non-negative, got {self.tag}")


def tag_bits(num_instances: int) -> int:
    """Fixed-width binary tag size for ``num_instances`` pooled instances."""
    if num_instances < 1:
        raise ParameterError("num_instances must be >= 1")
    return max(0, math.ceil(math.log2(num_instances))) if num_instances > 1 else 0


def message_bits(num_instances: int) -> int:
    """Wire size of one pooled message: tag bits plus the sign bit."""
    return tag_bits(num_instances) + 1


def dump_tagged(tags: np.ndarray, signs: np.ndarray) -> str:
    """Textual harness dump: one ``tag,sign`` line per message."""
    lines = [f"{int(t)},{int(s):+d}" for t, s in zip(tags, signs)]
    return "\n".join(lines) + ("\n" if lines else "")


def split_budget(epsilon: float, k: int) -> np.ndarray:
    """Split a budget across ``k`` instances with decay ratio :data:`BETA`.

    ``eps_j = eps * (1 - beta) * beta**j / (1 - beta**k)``; the parts sum to
    ``epsilon`` up to 1e-12 and never exceed it.
    """
    if epsilon <= 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    j = np.arange(k)
    parts = epsilon * (1.0 - BETA) * BETA**j / (1.0 - BETA**k)
    excess = math.fsum(parts) - epsilon
    if excess > 0.0:
        parts[0] -= excess  # keep the float sum at or below the budget
    return parts


def bit_weights(k: int) -> np.ndarray:
    """Place values ``2**-(j+1)``, most significant bit first."""
    return 2.0 ** -(np.arange(k) + 1.0)


def encode_real(x: float, n_bits: int, rng: RandomSource) -> np.ndarray:
    """Stochastically round ``x`` in [0, 1] to ``n_bits`` fixed-point bits.

    The rounded value ``v/2**n_bits`` is unbiased for ``x`` up to the top of
    the representable range (values within one step of 1 clamp to the largest
    representable point). Bits come most significant first.
    """
    if not (0.0 <= x <= 1.0):
        raise ParameterError(f"inputs must lie in [0, 1], got {x}")
    if n_bits < 1:
        raise ParameterError(f"n_bits must be >= 1, got {n_bits}")
    scale = 1 << n_bits
    v = int(x * scale + rng.generator.random())
    v = min(v, scale - 1)
    j = np.arange(n_bits)
    return ((v >> (n_bits - 1 - j)) & 1).astype(np.uint8)


def decode_bits(bits: np.ndarray) -> float:
    """Value of an MSB-first fixed-point bit vector."""
    bits = np.asarray(bits)
    return float(bits @ bit_weights(bits.size))


def _encode_matrix(
    xs: np.ndarray, n_bits: int, gen: np.random.Generator, trials: int | None = None
) -> np.ndarray:
    """Rounded fixed-point values for a batch: shape (n,) or (trials, n)."""
    scale = 1 << n_bits
    size = len(xs) if trials is None else (trials, len(xs))
    v = np.floor(xs * scale + gen.random(size)).astype(np.int64)
    return np.minimum(v, scale - 1)


def _ones_per_bit(values: np.ndarray, n_bits: int) -> np.ndarray:
    """Per-bit ones counts of rounded values; last axis becomes the bit axis."""
    shifts = n_bits - 1 - np.arange(n_bits)
    return ((values[..., None] >> shifts) & 1).sum(axis=-2)


def real_sum_params(
    epsilon: float, slack: float, n_bits: int, n_users: int
) -> list[ProtocolParams]:
    """Per-bit instance parameters for a real-sum run.

    Every instance gets its split budget and slack-derived noise budget, but
    all instances share the *top-level* drop probability
    ``0.1 * slack * Var(DLap(epsilon)) / n``: the feasibility clauses hold
    for any drop probability in (0, 1), and a smaller one only reduces the
    error, while per-bit drop probabilities blow past 1 for the low-order
    bits at realistic user counts.
    """
    budgets = split_budget(epsilon, n_bits)
    drop_prob = target_drop_prob(epsilon, slack, n_users)
    instances = []
    for j, eps_j in enumerate(budgets):
        if eps_j < 1.0 / n_users:
            raise DegenerateInputError(
                f"bit {j}: split budget {eps_j:.4g} is below 1/n_users; "
                "reduce n_bits or add users"
            )
        instances.append(
            minimal_params(
                eps_j,
                target_noise_epsilon(eps_j, slack),
                drop_prob,
                n_users,
                slack=slack,
            )
        )
    return instances


@dataclass(frozen=True)
class RealSumRun:
    """Result of one real-sum execution."""

    estimate: float
    bit_counts: tuple[int, ...]
    instances: tuple[ProtocolParams, ...]
    fidelity: str
    total_messages: int | None = None


@dataclass(frozen=True)
class HistogramRun:
    """Result of one histogram execution."""

    estimates: tuple[int, ...]
    instance: ProtocolParams
    fidelity: str
    total_messages: int | None = None


def _pooled_message_run(
    bit_matrix: np.ndarray,
    instances: Sequence[ProtocolParams],
    rng: RandomSource,
) -> tuple[np.ndarray, int]:
    """Message-level run of several instances over a shared shuffle.

    ``bit_matrix[i, j]`` is user ``i``'s input bit for instance ``j``. All
    messages are pooled, tagged and permuted together; per-tag signed sums
    are returned along with the pooled message total.
    """
    n, k = bit_matrix.shape
    tags_parts: list[np.ndarray] = []
    signs_parts: list[np.ndarray] = []
    for j, inst in enumerate(instances):
        for i in range(n):
            c = randomize(int(bit_matrix[i, j]), inst, rng.substream(0, i, j))
            tags_parts.append(np.full(c.message_count, j, dtype=np.int32))
            signs_parts.append(
                np.repeat(
                    np.array([1, -1], dtype=np.int8),
                    [c.plus_count, c.minus_count],
                )
            )
    tags = np.concatenate(tags_parts) if tags_parts else np.empty(0, np.int32)
    signs = np.concatenate(signs_parts) if signs_parts else np.empty(0, np.int8)
    perm = rng.substream(1).generator.permutation(tags.size)
    tags, signs = tags[perm], signs[perm]
    counts = np.zeros(k, dtype=np.int64)
    np.add.at(counts, tags, signs.astype(np.int64))
    return counts, int(tags.size)


def _counts_instance_estimates(
    bit_matrix: np.ndarray,
    instances: Sequence[ProtocolParams],
    rng: RandomSource,
) -> np.ndarray:
    """Counts-fidelity signed sums, one per instance (flooding cancels)."""
    n, k = bit_matrix.shape
    out = np.empty(k, dtype=np.int64)
    for j, inst in enumerate(instances):
        gen = rng.substream(0, j).generator
        keep = gen.random(n) >= inst.drop_prob
        p = geo_success_prob(inst.noise_epsilon)
        rates = gen.gamma(1.0 / n, (1.0 - p) / p, size=2 * n)
        noise = gen.poisson(rates)
        out[j] = int((keep & (bit_matrix[:, j] == 1)).sum()) + int(
            noise[:n].sum() - noise[n:].sum()
        )
    return out


def _law_instance_estimates(
    ones: np.ndarray, instances: Sequence[ProtocolParams], rng: RandomSource
) -> np.ndarray:
    """Law-fidelity signed sums per instance (derivation-level simulation)."""
    out = np.empty(len(instances), dtype=np.int64)
    for j, inst in enumerate(instances):
        gen = rng.substream(0, j).generator
        p = geo_success_prob(inst.noise_epsilon)
        kept = int(ones[j]) - int(gen.binomial(int(ones[j]), inst.drop_prob))
        out[j] = kept + int(gen.geometric(p) - gen.geometric(p))
    return out


def run_real_sum(
    xs: Sequence[float],
    epsilon: float,
    slack: float,
    n_bits: int,
    rng: RandomSource,
    fidelity: str = "message",
) -> RealSumRun:
    """Estimate the sum of values in [0, 1] privately.

    Inputs are stochastically rounded to ``n_bits`` fixed-point bits; one
    counting instance runs per bit position and the estimate is the
    place-value weighted sum of the instance outputs.
    """
    if fidelity not in FIDELITIES:
        raise ParameterError(f"fidelity must be one of {FIDELITIES}")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 1 or xs.size == 0:
        raise ParameterError("xs must be a non-empty 1-d sequence")
    if np.any((xs < 0.0) | (xs > 1.0)):
        raise ParameterError("inputs must lie in [0, 1]")
    n = xs.size
    instances = real_sum_params(epsilon, slack, n_bits, n)

    values = _encode_matrix(xs, n_bits, rng.substream(2).generator)
    shifts = n_bits - 1 - np.arange(n_bits)
    bit_matrix = ((values[:, None] >> shifts) & 1).astype(np.int64)

    total = None
    if fidelity == "message":
        counts, total = _pooled_message_run(bit_matrix, instances, rng)
    elif fidelity == "counts":
        counts = _counts_instance_estimates(bit_matrix, instances, rng)
    else:
        counts = _law_instance_estimates(
            bit_matrix.sum(axis=0), instances, rng
        )
    estimate = float(bit_weights(n_bits) @ counts)
    return RealSumRun(
        estimate=estimate,
        bit_counts=tuple(int(c) for c in counts),
        instances=tuple(instances),
        fidelity=fidelity,
        total_messages=total,
    )


def real_sum_trials(
    xs: Sequence[float],
    epsilon: float,
    slack: float,
    n_bits: int,
    trials: int,
    rng: RandomSource,
    fidelity: str = "law",
) -> np.ndarray:
    """Repeated real-sum estimates for error measurement.

    Rounding is re-drawn every trial, so the returned estimates carry the
    full pipeline error (rounding plus drops plus noise) against the exact
    input sum. ``law`` fidelity samples each instance's closed-form estimate
    law; ``counts`` draws per-user noise shares.
    """
    if fidelity == "message":
        ests = [
            run_real_sum(xs, epsilon, slack, n_bits, rng.substream(t), "message").estimate
            for t in range(trials)
        ]
        return np.asarray(ests)
    if fidelity not in ("counts", "law"):
        raise ParameterError(f"fidelity must be one of {FIDELITIES}")
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.size
    instances = real_sum_params(epsilon, slack, n_bits, n)
    gen = rng.generator
    values = _encode_matrix(xs, n_bits, gen, trials=trials)
    ones = _ones_per_bit(values, n_bits)  # (trials, n_bits)
    weights = bit_weights(n_bits)
    estimates = np.zeros(trials, dtype=np.float64)
    p_noise = [geo_success_prob(inst.noise_epsilon) for inst in instances]
    for j, inst in enumerate(instances):
        kept = ones[:, j] - gen.binomial(ones[:, j], inst.drop_prob)
        if fidelity == "law":
            diff = (gen.geometric(p_noise[j], size=trials) - 1) - (
                gen.geometric(p_noise[j], size=trials) - 1
            )
        else:
            rates = gen.gamma(
                1.0 / n, (1.0 - p_noise[j]) / p_noise[j], size=(trials, 2 * n)
            )
            noise = gen.poisson(rates)
            diff = noise[:, :n].sum(axis=1) - noise[:, n:].sum(axis=1)
        estimates += weights[j] * (kept + diff)
    return estimates


def histogram_params(
    epsilon: float, slack: float, n_users: int
) -> ProtocolParams:
    """Shared per-bucket instance parameters: full derivation at ``epsilon/2``."""
    return derive_params(epsilon / 2.0, slack, n_users)


def run_histogram(
    xs: Sequence[int],
    n_buckets: int,
    epsilon: float,
    slack: float,
    rng: RandomSource,
    fidelity: str = "message",
) -> HistogramRun:
    """Estimate per-bucket counts of values in ``{0, ..., n_buckets - 1}``.

    One counting instance runs per bucket on the indicator bits
    ``x_i == b``, each at budget ``epsilon / 2``; messages are pooled and
    tagged with the bucket index.
    """
    if fidelity not in FIDELITIES:
        raise ParameterError(f"fidelity must be one of {FIDELITIES}")
    if n_buckets < 1:
        raise ParameterError(f"n_buckets must be >= 1, got {n_buckets}")
    xs = np.asarray(xs, dtype=np.int64)
    if xs.ndim != 1 or xs.size == 0:
        raise ParameterError("xs must be a non-empty 1-d sequence")
    if np.any((xs < 0) | (xs >= n_buckets)):
        raise ParameterError(
            f"values must lie in [0, {n_buckets}), got range "
            f"[{xs.min()}, {xs.max()}]"
        )
    inst = histogram_params(epsilon, slack, xs.size)
    indicators = (xs[:, None] == np.arange(n_buckets)).astype(np.int64)
    instances = [inst] * n_buckets
    total = None
    if fidelity == "message":
        counts, total = _pooled_message_run(indicators, instances, rng)
    elif fidelity == "counts":
        counts = _counts_instance_estimates(indicators, instances, rng)
    else:
        counts = _law_instance_estimates(indicators.sum(axis=0), instances, rng)
    return HistogramRun(
        estimates=tuple(int(c) for c in counts),
        instance=inst,
        fidelity=fidelity,
        total_messages=total,
    )


def histogram_trials(
    xs: Sequence[int],
    n_buckets: int,
    epsilon: float,
    slack: float,
    trials: int,
    rng: RandomSource,
    fidelity: str = "counts",
) -> np.ndarray:
    """Repeated histogram estimates, shape ``(trials, n_buckets)``."""
    xs = np.asarray(xs, dtype=np.int64)
    n = xs.size
    inst = histogram_params(epsilon, slack, n)
    true_counts = np.bincount(xs, minlength=n_buckets)[:n_buckets]
    gen = rng.generator
    p = geo_success_prob(inst.noise_epsilon)
    out = np.empty((trials, n_buckets), dtype=np.int64)
    for b in range(n_buckets):
        kept = true_counts[b] - gen.binomial(true_counts[b], inst.drop_prob, size=trials)
        if fidelity == "law":
            diff = (gen.geometric(p, size=trials) - 1) - (
                gen.geometric(p, size=trials) - 1
            )
        elif fidelity == "counts":
            rates = gen.gamma(1.0 / n, (1.0 - p) / p, size=(trials, 2 * n))
            noise = gen.poisson(rates)
            diff = noise[:, :n].sum(axis=1) - noise[:, n:].sum(axis=1)
        else:
            raise ParameterError("histogram_trials supports counts or law fidelity")
        out[:, b] = kept + diff
    return out
