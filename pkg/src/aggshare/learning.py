"""Online learning of the suggestion profile.

Each period the mediator publishes, per (user, channel), a grid aggregate
drawn by the exponential mechanism, together with the connection share that
value implies for the user.  Users multiplicatively reweight their channel
rows against those shares and project back onto their constraint sets with
a relative-entropy (KL) projection.  The time average of the projected rows
is the suggestion.

Everything a user needs to rebuild their own suggestion row is published:
the selected aggregates and connection shares per period plus their own
target row.  That structure is what makes the suggestion jointly private,
and it is verified bit-exactly by the mediator tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .equilibrium import AggregatorGrid, learning_error_for_periods
from .privacy import exp_probabilities


class DegenerateSupportError(ValueError):
    """All multiplicative weight fell outside the allowed support."""


@dataclass(frozen=True)
class LearnerParams:
    """Horizon, step size and per-round privacy budget of one learning run.

    periods and step_size are tied to the learning error via
    periods = ceil(16 n^2 g^2 ln k / err^2) and step_size = err / (4 n g).
    """

    periods: int
    step_size: float
    epsilon0: float
    learning_error: float

    @classmethod
    def from_error(cls, n, k, impact_bound, learning_error, epsilon0):
        log_k = math.log(k)
        periods = max(
            1, math.ceil(16.0 * (n * impact_bound) ** 2 * log_k
                         / learning_error ** 2)) if log_k > 0 else 1
        return cls(periods=periods,
                   step_size=learning_error / (4.0 * n * impact_bound),
                   epsilon0=epsilon0,
                   learning_error=learning_error)

    @classmethod
    def from_periods(cls, n, k, impact_bound, periods, epsilon0):
        err = learning_error_for_periods(n, k, impact_bound, periods)
        return cls(periods=int(periods),
                   step_size=err / (4.0 * n * impact_bound),
                   epsilon0=epsilon0,
                   learning_error=err)


@dataclass
class ConstraintSet:
    """Per-user feasible rows: zero off support, in [0, 1], summing to 1.

    Opt-out users' feasible set is the singleton uniform row.
    """

    support: np.ndarray
    opt_out: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=bool)
        self.opt_out = np.asarray(self.opt_out, dtype=bool)
        empty = ~self.support.any(axis=1)
        if np.any(empty & ~self.opt_out):
            raise DegenerateSupportError("user has no allowed channel")

    def satisfied(self, P, tol=1e-9):
        P = np.asarray(P, dtype=float)
        k = P.shape[1]
        ok = np.abs(P.sum(axis=1) - 1.0) <= tol
        ok &= (P >= -tol).all(axis=1)
        ok &= (np.where(self.support, 0.0, P) <= tol).all(axis=1)
        ok = np.where(self.opt_out,
                      (np.abs(P - 1.0 / k) <= tol).all(axis=1), ok)
        return ok


@dataclass
class Trajectory:
    """Per-period learning state: projected profiles, published aggregate
    selections and connection shares."""

    profiles: np.ndarray
    selections: np.ndarray
    connection: np.ndarray


@dataclass
class MWResult:
    suggestion: np.ndarray
    trajectory: Trajectory


@dataclass
class EpochContext:
    """Inputs the learner needs from the target-selection phase."""

    n: int
    k: int
    impact_bound: float
    grid: AggregatorGrid
    ceilings: np.ndarray
    own_share: np.ndarray
    cset: ConstraintSet
    prefer_high_connection: bool = False


def ceiling_score(p_d, share_vec, ceiling, impact_bound):
    """Score of a channel's contention level against its permitted ceiling.

    impact_bound * <share, strategy column> - ceiling: zero when the
    aggregate sits exactly at the ceiling, negative below it.
    """
    return impact_bound * float(np.dot(share_vec, p_d)) - ceiling


def select_round(profile, ceilings, ctx, epsilon0, noise, period):
    """One selection round: draw a grid aggregate per (user, channel) and
    derive each user's published connection shares.

    Candidate scores are the ceiling score evaluated with the candidate as
    the contention level, i.e. value - ceiling.  The selection law is shift
    invariant in the ceiling, so one probability vector over the grid serves
    every cell; cells draw independently from the period's keyed stream.
    The connection share is the user's own contention share scaled down by
    the published level, capping at 1 when the published level is below the
    user's own share.
    """
    grid = ctx.grid
    n, k = ctx.n, ctx.k
    if not noise.noise_enabled:
        idx = np.full((n, k), grid.size - 1, dtype=int)
    else:
        probs = exp_probabilities(grid.values, epsilon0, ctx.impact_bound)
        u = noise.stream("round-select", period).random(size=(n, k))
        idx = np.searchsorted(np.cumsum(probs), u.ravel())
        idx = np.minimum(idx, grid.size - 1).reshape(n, k)
    selected = grid.values[idx]
    own = ctx.own_share
    level = np.maximum(selected / ctx.impact_bound, own)
    q_bar = np.divide(own, level, out=np.zeros_like(own), where=level > 0)
    return selected, q_bar


def mw_update(row, q_bar_row, step_size, prefer_high_connection=False):
    """Multiplicative reweighting of one channel row by its connection
    shares.  The default treats the share as a loss (crowded channels keep
    their weight); the flag flips the sign."""
    sign = 1.0 if prefer_high_connection else -1.0
    return row * np.exp(sign * step_size * np.asarray(q_bar_row, dtype=float))


def kl_project(weights, support_row, upper=1.0):
    """KL projection of normalized weights onto the capped sub-simplex.

    Zero the disallowed channels, renormalize, then cap at ``upper`` and
    renormalize the free mass until feasible.  The multiplicative rescaling
    of the uncapped coordinates is exactly the minimizer of
    KL(x || weights/sum) over the constraint set.
    """
    w = np.where(support_row, np.maximum(np.asarray(weights, dtype=float), 0.0),
                 0.0)
    total = w.sum()
    if total <= 0.0:
        raise DegenerateSupportError("no weight on the allowed support")
    x = w / total
    if upper >= 1.0:
        return x
    capped = np.zeros_like(x, dtype=bool)
    for _ in range(x.shape[0]):
        budget = 1.0 - upper * capped.sum()
        free = support_row & ~capped
        denom = w[free].sum()
        if denom <= 0.0:
            break
        scale = budget / denom
        x = np.where(capped, upper, np.where(free, scale * w, 0.0))
        newly = free & (x > upper + 1e-15)
        if not newly.any():
            break
        capped |= newly
    return x


def mw_run(ctx, params, noise):
    """Run the full learning loop and average the trajectory.

    Starts from the uniform profile, runs ``params.periods`` rounds of
    selection, reweighting and projection, and returns the per-user average
    of the projected rows.  Opt-out rows stay pinned at uniform.
    """
    n, k = ctx.n, ctx.k
    uniform = np.full((n, k), 1.0 / k)
    P = uniform.copy()
    T = params.periods
    profiles = np.empty((T, n, k))
    selections = np.empty((T, n, k))
    connection = np.empty((T, n, k))
    acc = np.zeros((n, k))
    for t in range(1, T + 1):
        selected, q_bar = select_round(P, ctx.ceilings, ctx, params.epsilon0,
                                       noise, t)
        w = P * np.exp((1.0 if ctx.prefer_high_connection else -1.0)
                       * params.step_size * q_bar)
        wz = np.where(ctx.cset.support, w, 0.0)
        totals = wz.sum(axis=1)
        if np.any(totals[~ctx.cset.opt_out] <= 0.0):
            raise DegenerateSupportError("no weight on the allowed support")
        P = wz / np.where(totals > 0.0, totals, 1.0)[:, None]
        P[ctx.cset.opt_out] = 1.0 / k
        profiles[t - 1] = P
        selections[t - 1] = selected
        connection[t - 1] = q_bar
        acc += P
    suggestion = acc / T
    return MWResult(suggestion=suggestion,
                    trajectory=Trajectory(profiles=profiles,
                                          selections=selections,
                                          connection=connection))


def _simplex_grid(size, steps):
    """All compositions of ``steps`` into ``size`` parts, as rows / steps."""
    out = []
    for cuts in combinations(range(steps + size - 1), size - 1):
        prev = -1
        row = []
        for c in cuts:
            row.append(c - prev - 1)
            prev = c
        row.append(steps + size - 2 - prev)
        out.append(row)
    return np.asarray(out, dtype=float) / steps


def regret_certificate(trajectory, params, cset, step=0.05):
    """Check the no-regret inequality of one finished run, per user.

    Compares the average realized connection load (1/T) sum_t <P_t, q_t>
    against the best fixed feasible row on a discretized simplex, plus the
    slack 2 * step_size implied by the learning error.  Reports violations
    instead of raising.  Returns (holds, slack) arrays.
    """
    profiles = trajectory.profiles
    q = trajectory.connection
    T, n, k = profiles.shape
    steps = int(round(1.0 / step))
    bound = 2.0 * params.step_size
    realized = np.einsum("tik,tik->i", profiles, q) / T
    q_mean = q.mean(axis=0)
    holds = np.zeros(n, dtype=bool)
    slack = np.zeros(n)
    for i in range(n):
        if cset.opt_out[i]:
            best = float(np.full(k, 1.0 / k) @ q_mean[i])
        else:
            sup = np.flatnonzero(cset.support[i])
            if sup.size * steps > 2_000_000:
                raise ValueError("comparator enumeration too large")
            rows = _simplex_grid(sup.size, steps)
            best = float((rows @ q_mean[i, sup]).min())
        slack[i] = best + bound - realized[i]
        holds[i] = slack[i] >= -1e-9
    return holds, slack
