"""Differential-privacy primitives and budget arithmetic.

Noise is drawn from counter-based keyed streams so that every draw is a pure
function of (seed, tag, key indices).  Runs replay bit-exactly, and drawing
for different users/channels/periods in any order, or in parallel, yields
the same values as a serial sweep.

A ``NoiseControl`` with ``noise_enabled=False`` turns every sampler into a
zero and every randomized selection into its deterministic greedy
counterpart; this is a test hook, not a privacy mode.
"""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass

import numpy as np


class PrivacyParameterError(ValueError):
    """Raised for non-positive scales, empty candidate sets and the like."""


def _tag_key(tag):
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class NoiseControl:
    """Root seed plus the global on/off switch for all randomness."""

    rng_seed: int
    noise_enabled: bool = True

    def stream(self, tag, *key):
        """Independent generator keyed by (seed, tag, *key)."""
        seq = np.random.SeedSequence((int(self.rng_seed), _tag_key(tag))
                                     + tuple(int(x) for x in key))
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class PrivacyBudget:
    """Total (epsilon, delta) budget plus the derived per-round share."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise PrivacyParameterError("epsilon must be positive")
        if not 0 <= self.delta < 1:
            raise PrivacyParameterError("delta must lie in [0, 1)")

    def per_round(self, periods):
        return per_round_epsilon(self.epsilon, periods, self.delta)


def sample_laplace(scale, noise, size=None, tag="laplace", key=()):
    """Laplace(0, scale) draws from the keyed stream; zeros when disabled."""
    if scale <= 0:
        raise PrivacyParameterError("laplace scale must be positive")
    if not noise.noise_enabled:
        return 0.0 if size is None else np.zeros(size)
    draw = noise.stream(tag, *key).laplace(loc=0.0, scale=scale, size=size)
    return float(draw) if size is None else draw


@dataclass(frozen=True)
class ScanResult:
    """Outcome of one noisy threshold scan."""

    index: int | None
    value: float | None
    exhausted: bool
    n_checked: int


def first_under_threshold(costs, threshold, epsilon, sensitivity, noise, key=()):
    """Release the first cost whose noisy value falls under a noisy threshold.

    The threshold gets Laplace(2s/eps) noise and each streamed cost gets
    Laplace(4s/eps); items before the acceptance are withheld.  Runs through
    the whole stream and reports exhaustion if nothing is accepted.
    """
    costs = np.asarray(costs, dtype=float)
    n = costs.shape[0]
    if epsilon <= 0 or sensitivity <= 0:
        raise PrivacyParameterError("epsilon and sensitivity must be positive")
    if n == 0:
        return ScanResult(None, None, True, 0)
    t_hat = threshold + sample_laplace(
        2.0 * sensitivity / epsilon, noise, tag="svt-threshold", key=key)
    v = sample_laplace(
        4.0 * sensitivity / epsilon, noise, size=n, tag="svt-items", key=key)
    noisy = costs + v
    under = noisy <= t_hat
    if not under.any():
        return ScanResult(None, None, True, n)
    idx = int(np.argmax(under))
    return ScanResult(idx, float(noisy[idx]), False, idx + 1)


def scan_batch(cost_matrix, threshold, epsilon, sensitivity, noise, tag="svt"):
    """Vectorized threshold scans, one per row of ``cost_matrix``.

    Equivalent to calling :func:`first_under_threshold` per row with its own
    stream; rows draw from a shared keyed block so large sweeps stay cheap.
    Returns (index, noisy value, exhausted) arrays; index is -1 on exhaustion.
    """
    costs = np.asarray(cost_matrix, dtype=float)
    rows, n = costs.shape
    if noise.noise_enabled:
        t_noise = noise.stream(tag + "-threshold").laplace(
            0.0, 2.0 * sensitivity / epsilon, size=rows)
        v = noise.stream(tag + "-items").laplace(
            0.0, 4.0 * sensitivity / epsilon, size=(rows, n))
    else:
        t_noise = np.zeros(rows)
        v = np.zeros((rows, n))
    t_hat = threshold + t_noise
    noisy = costs + v
    under = noisy <= t_hat[:, None]
    any_under = under.any(axis=1)
    idx = np.where(any_under, np.argmax(under, axis=1), -1)
    value = np.where(any_under, noisy[np.arange(rows), idx], np.nan)
    return idx, value, ~any_under


def exp_probabilities(scores, epsilon, sensitivity):
    """Closed-form exponential-mechanism selection probabilities."""
    if sensitivity <= 0:
        raise PrivacyParameterError("sensitivity must be positive")
    scores = np.asarray(scores, dtype=float)
    z = epsilon * scores / (2.0 * sensitivity)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def exp_select(candidates, score, epsilon, sensitivity, noise, key=()):
    """Pick a candidate with probability proportional to exp(eps*score/2s).

    ``score`` is either a callable on candidates or a precomputed array.
    With noise disabled the argmax-score candidate is returned (first on
    ties).  Returns (candidate, index).
    """
    candidates = list(candidates)
    if not candidates:
        raise PrivacyParameterError("candidate set must be nonempty")
    if callable(score):
        scores = np.array([score(c) for c in candidates], dtype=float)
    else:
        scores = np.asarray(score, dtype=float)
    if not noise.noise_enabled:
        idx = int(np.argmax(scores))
        return candidates[idx], idx
    probs = exp_probabilities(scores, epsilon, sensitivity)
    u = noise.stream("exp-select", *key).random()
    idx = int(np.searchsorted(np.cumsum(probs), u))
    idx = min(idx, len(candidates) - 1)
    return candidates[idx], idx


def scan_error_bound(stream_len, failure_prob, epsilon, sensitivity):
    """Accuracy radius of one threshold scan over ``stream_len`` costs."""
    return (8.0 * sensitivity
            * (math.log(stream_len) + math.log(4.0 / failure_prob)) / epsilon)


def total_scan_error_bound(n, k, impact_bound, grid_step, failure_prob, epsilon):
    """Worst-case search error across a user's k per-channel scans.

    The per-channel stream length is the aggregate grid size
    n*impact_bound/grid_step.
    """
    if grid_step > n * impact_bound:
        raise PrivacyParameterError("grid step exceeds the aggregate range")
    return (8.0 * impact_bound
            * (k * math.log(n * impact_bound / grid_step)
               + math.log(4.0 / failure_prob)) / epsilon)


def exp_score_shortfall(sensitivity, range_size, failure_prob, epsilon):
    """Score shortfall of exponential selection, holding w.p. >= 1 - beta."""
    return 2.0 * sensitivity * math.log(range_size / failure_prob) / epsilon


def compose_epsilon(epsilon, periods, delta_prime):
    """Total epsilon after ``periods``-fold adaptive composition."""
    return (epsilon * math.sqrt(2.0 * periods * math.log(1.0 / delta_prime))
            + periods * epsilon * (math.exp(epsilon) - 1.0))


def per_round_epsilon(epsilon, periods, delta):
    """Per-round budget so that ``periods``-fold composition stays within
    (epsilon, delta).  The composition bound assumes epsilon <= 1."""
    if epsilon > 1:
        warnings.warn("per-round budget derived for epsilon > 1; the "
                      "composition guarantee assumes epsilon <= 1")
    return epsilon / math.sqrt(8.0 * periods * math.log(1.0 / delta))
