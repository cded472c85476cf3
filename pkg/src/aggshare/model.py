"""Network and game model for multi-channel contention.

Utilities are proportional fair: a user's payoff on a channel is the log of
its Shannon rate plus a normalized, bounded-impact aggregate of everyone's
contention on that channel.  The aggregate (the "contention level") is what
couples users together; a single user can move any aggregate by at most the
game's impact bound, which is what the privacy and approximation machinery
in the other modules relies on.

All functions here are pure and operate on plain numpy arrays in float64.
Contention probabilities are clamped away from {0, 1} so that logs stay
finite; the clamp never binds for the sampling pools used by the scenario
generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

P_MIN = 1e-6

ROW_SUM_TOL = 1e-9


def clamp_contention(p):
    """Clamp contention probabilities into [P_MIN, 1 - P_MIN]."""
    return np.clip(np.asarray(p, dtype=float), P_MIN, 1.0 - P_MIN)


class ModelError(ValueError):
    """Raised for invalid radio or strategy parameters."""


@dataclass(frozen=True)
class RadioParams:
    """Per-link radio constants.

    bandwidth_hz:  (n, k) spectrum bandwidth per user and channel, Hz
    tx_power_w:    (n, m, k) transmission power per user, action, channel, W
    channel_gain:  (n, k) dimensionless channel gain, >= 0
    noise_w:       (n, k) background noise power, W
    """

    bandwidth_hz: np.ndarray
    tx_power_w: np.ndarray
    channel_gain: np.ndarray
    noise_w: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.bandwidth_hz) <= 0):
            raise ModelError("bandwidth must be strictly positive")
        if np.any(np.asarray(self.tx_power_w) <= 0):
            raise ModelError("transmission power must be strictly positive")
        if np.any(np.asarray(self.noise_w) <= 0):
            raise ModelError("noise power must be strictly positive")
        if np.any(np.asarray(self.channel_gain) < 0):
            raise ModelError("channel gain must be nonnegative")

    @classmethod
    def uniform(cls, n, m, k, *, bandwidth_hz=20e6, tx_power_w=0.1,
                noise_w=1e-13, channel_gain=None):
        """Broadcast scalar defaults to full shapes (views, zero copies)."""
        if channel_gain is None:
            channel_gain = np.ones((n, k))
        return cls(
            bandwidth_hz=np.broadcast_to(np.float64(bandwidth_hz), (n, k)),
            tx_power_w=np.broadcast_to(np.float64(tx_power_w), (n, m, k)),
            channel_gain=np.asarray(channel_gain, dtype=float),
            noise_w=np.broadcast_to(np.float64(noise_w), (n, k)),
        )


@dataclass(frozen=True)
class ActionSpec:
    """One selectable action: an index, its contention probability and the
    power entry it selects in RadioParams."""

    action_index: int
    contention_prob: float

    def __post_init__(self):
        object.__setattr__(
            self, "contention_prob",
            float(np.clip(self.contention_prob, P_MIN, 1.0 - P_MIN)))


@dataclass
class GameSpec:
    """Static description of one game instance.

    action_contention[i, j] is the contention probability of user i's action
    j; assigned_action[i] selects the action each user currently plays, which
    fixes the contention vector.  contender_mask[i, d] is False when user i
    does not compete on channel d (their term is dropped from every aggregate
    on d and their strategy there is pinned to zero by the learner).
    """

    n: int
    m: int
    k: int
    impact_bound: float
    grid_step: float
    radio: RadioParams
    action_contention: np.ndarray
    assigned_action: np.ndarray
    contender_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.impact_bound <= 0 or self.grid_step <= 0:
            raise ModelError("impact bound and grid step must be positive")
        if self.grid_step > self.n * self.impact_bound:
            raise ModelError("grid step exceeds aggregate range; grid empty")
        self.action_contention = clamp_contention(self.action_contention)
        self.assigned_action = np.asarray(self.assigned_action, dtype=int)
        if self.contender_mask is None:
            self.contender_mask = np.ones((self.n, self.k), dtype=bool)
        self.contender_mask = np.asarray(self.contender_mask, dtype=bool)

    def contention(self):
        """Contention probability vector induced by the assigned actions."""
        return self.action_contention[np.arange(self.n), self.assigned_action]


@dataclass
class MixedStrategyProfile:
    """Row-stochastic channel-access probabilities with opt-out markers."""

    P: np.ndarray
    opt_out: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.opt_out = np.asarray(self.opt_out, dtype=bool)

    def validate(self):
        if np.any(self.P < -ROW_SUM_TOL) or np.any(self.P > 1 + ROW_SUM_TOL):
            raise ModelError("strategy entries must lie in [0, 1]")
        if np.any(np.abs(self.P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ModelError("strategy rows must sum to 1")

    def mediator_view(self):
        """Matrix as consumed by the mediator: opt-out rows become uniform."""
        k = self.P.shape[1]
        view = self.P.copy()
        view[self.opt_out] = 1.0 / k
        return view


def shannon_rate(user, action, channel, radio):
    """Channel capacity B * log2(1 + snr) in bit/s for one link."""
    b = float(radio.bandwidth_hz[user, channel])
    snr = (float(radio.tx_power_w[user, action, channel])
           * float(radio.channel_gain[user, channel])
           / float(radio.noise_w[user, channel]))
    return b * math.log2(1.0 + snr)


def log_rate(user, action, channel, radio):
    """log of the Shannon rate; raises on a zero rate (zero gain)."""
    rate = shannon_rate(user, action, channel, radio)
    if rate <= 0.0:
        raise ModelError("zero rate has no log utility (channel gain 0?)")
    return math.log(rate)


def log_rate_table(game):
    """(n, k) log rates for each user's assigned action."""
    idx = np.arange(game.n)
    j = game.assigned_action
    snr = (game.radio.tx_power_w[idx, j, :] * game.radio.channel_gain
           / game.radio.noise_w)
    rate = game.radio.bandwidth_hz * np.log2(1.0 + snr)
    if np.any(rate <= 0):
        raise ModelError("zero rate has no log utility (channel gain 0?)")
    return np.log(rate)


def pure_throughput(user, action, channel, p, radio, contenders=None):
    """Slotted-access throughput: C * p_i * prod_{l != i} (1 - p_l).

    The product runs over the other users contending on the channel
    (``contenders`` is a boolean mask over users; all users by default).
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ModelError("contention probabilities must lie in (0, 1)")
    n = p.shape[0]
    if contenders is None:
        contenders = np.ones(n, dtype=bool)
    others = contenders.copy()
    others[user] = False
    rate = shannon_rate(user, action, channel, radio)
    return rate * p[user] * float(np.prod(1.0 - p[others]))


def contention_share(i, l, p):
    """Normalized contribution of user l to user i's contention aggregate.

    Shares are log-ratio weights: log p_i (own term) or log(1 - p_l) (others)
    over the common denominator log p_i + sum_{l != i} log(1 - p_l).  All
    shares lie in [0, 1] and sum to exactly 1 over l.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ModelError("contention probabilities must lie strictly in (0, 1)")
    denom = math.log(p[i]) + float(np.sum(np.log1p(-np.delete(p, i))))
    if l == i:
        return math.log(p[i]) / denom
    return math.log1p(-p[l]) / denom


def share_matrix(p):
    """(n, n) matrix S with S[i, l] = contention_share(i, l, p)."""
    p = clamp_contention(p)
    own = np.log(p)
    other = np.log1p(-p)
    denom = own + other.sum() - other
    s = np.tile(other, (p.shape[0], 1))
    np.fill_diagonal(s, own)
    return s / denom[:, None]


def own_share(p, k, contender_mask=None):
    """(n, k) own contention share per channel; zero where not contending."""
    p = clamp_contention(p)
    own = np.diag(share_matrix(p))
    if contender_mask is None:
        return np.tile(own[:, None], (1, k))
    return own[:, None] * contender_mask.astype(float)


def aggregate_contention(i, d, p, impact_bound, contender_mask=None):
    """Pure-strategy contention aggregate for user i on channel d.

    Sum of impact_bound-scaled shares over the channel's contenders; equals
    impact_bound exactly when everyone contends, 0 when nobody does.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    if contender_mask is None:
        active = np.ones(n, dtype=bool)
    else:
        active = contender_mask[:, d]
    s = share_matrix(p)
    return impact_bound * float(np.sum(s[i, active]))


def aggregate_contention_mixed(i, d, p, p_d, impact_bound, contender_mask=None):
    """Mixed-strategy aggregate: shares weighted by channel-d probabilities."""
    p_d = np.asarray(p_d, dtype=float)
    p = np.asarray(p, dtype=float)
    if p_d.shape[0] != p.shape[0]:
        raise ModelError("strategy column and contention vector sizes differ")
    s = share_matrix(p)
    w = p_d.copy()
    if contender_mask is not None:
        w = w * contender_mask[:, d]
    return impact_bound * float(np.dot(s[i], w))


def aggregate_matrix(p, P, impact_bound, contender_mask=None):
    """(n, k) mixed aggregates for every user and channel at once."""
    P = np.asarray(P, dtype=float)
    s = share_matrix(p)
    w = P if contender_mask is None else P * contender_mask
    return impact_bound * (s @ w)


def channel_utility(i, j, d, p, p_d, radio, impact_bound, contender_mask=None):
    """Proportional-fair utility on one channel: log rate + aggregate.

    The utility is exactly 1-Lipschitz in the aggregate by construction:
    changing the aggregate changes the utility by the same amount.
    """
    return log_rate(i, j, d, radio) + aggregate_contention_mixed(
        i, d, p, p_d, impact_bound, contender_mask)


def expected_utility(i, j, p, profile, radio, impact_bound, contender_mask=None):
    """Expectation of channel_utility over user i's own channel lottery."""
    if isinstance(profile, MixedStrategyProfile):
        P = profile.P
    else:
        P = np.asarray(profile, dtype=float)
    row = P[i]
    utilities = np.array([
        channel_utility(i, j, d, p, P[:, d], radio, impact_bound, contender_mask)
        for d in range(P.shape[1])
    ])
    return float(np.dot(row, utilities))


def expected_utilities(game, P, p=None):
    """(n,) expected utilities of all users at their assigned actions."""
    if p is None:
        p = game.contention()
    logc = log_rate_table(game)
    agg = aggregate_matrix(p, P, game.impact_bound, game.contender_mask)
    return np.einsum("ik,ik->i", P, logc + agg)
