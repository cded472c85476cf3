"""Aggregate grid search, approximation budgets and regret measurement.

The mediator never optimizes over raw strategy profiles.  It discretizes the
feasible aggregate range [0, n*impact_bound] into a grid, privately picks a
target grid value per (user, channel) whose distance to the submitted
profile's aggregate is small, and later confines each user's strategy to the
actions that are near-best against those targets.

The total equilibrium approximation decomposes into four parts: the
Lipschitz-game gap, the grid step, the private-search error and the online
learning error.  ``approximation_budget`` assembles them; the learning error
either solves a fixed-point consistency equation for the horizon or is
derived from an explicitly requested number of periods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import aggregate_matrix, expected_utility, log_rate, share_matrix
from .privacy import scan_batch, total_scan_error_bound

MAX_FIXED_POINT_ITERS = 10_000

# measure_regret enumerates every unilateral deviation; refuse instances
# where that stops being a desk-side check.
MAX_REGRET_CELLS = 200_000


class NumericalError(RuntimeError):
    pass


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class AggregatorGrid:
    """Evenly spaced aggregate values covering [0, n*impact_bound]."""

    step: float
    values: np.ndarray

    @property
    def size(self):
        return self.values.shape[0]


def build_grid(n, impact_bound, grid_step):
    """Grid of floor(n*impact_bound/grid_step) + 1 values, endpoints included.

    When the range is not an exact multiple of the step the effective step is
    widened slightly so the endpoints stay exact.
    """
    if grid_step <= 0:
        raise ValueError("grid step must be positive")
    top = n * impact_bound
    if grid_step > top:
        raise ValueError("grid step exceeds the aggregate range")
    count = int(math.floor(top / grid_step + 1e-12)) + 1
    values = np.linspace(0.0, top, count)
    return AggregatorGrid(step=float(values[1] - values[0]) if count > 1 else top,
                          values=values)


def lipschitz_equilibrium_gap(n, m, impact_bound):
    """Equilibrium approximation admitted by a bounded-impact game:
    impact_bound * sqrt(8 n ln(2 m n))."""
    return impact_bound * math.sqrt(8.0 * n * math.log(2.0 * m * n))


def candidate_cost(q_target, i, d, p, p_d, impact_bound, contender_mask=None):
    """Distance between a grid target and the profile's actual aggregate.

    This is the smallest slack making the target feasible from both sides.
    """
    from .model import aggregate_contention_mixed

    actual = aggregate_contention_mixed(i, d, p, p_d, impact_bound,
                                        contender_mask)
    return abs(actual - q_target)


@dataclass
class SetValuedTarget:
    """Per (user, channel) accepted grid target and its released cost."""

    q_hat: np.ndarray
    cost: np.ndarray
    fallback_count: int
    threshold: float


def select_targets(grid, p, P, impact_bound, threshold, epsilon, noise,
                   contender_mask=None):
    """Pick one grid target per (user, channel) via noisy threshold scans.

    Grid values stream in natural ascending order; the first one whose noisy
    distance to the actual aggregate falls under the noisy threshold is
    taken.  ``threshold=None`` selects the 25th percentile of the true cost
    pool, a default that keeps acceptances plentiful in typical instances.
    Exhausted scans fall back to the noise-free argmin and are counted.
    """
    P = np.asarray(P, dtype=float)
    n, k = P.shape
    actual = aggregate_matrix(p, P, impact_bound, contender_mask)
    # (n*k, grid) cost streams
    costs = np.abs(actual.reshape(-1, 1) - grid.values[None, :])
    if threshold is None:
        threshold = float(np.percentile(costs, 25.0))
    idx, value, exhausted = scan_batch(
        costs, threshold, epsilon, impact_bound, noise, tag="target-scan")
    fallback = int(exhausted.sum())
    if fallback:
        argmin = np.argmin(costs, axis=1)
        idx = np.where(exhausted, argmin, idx)
        value = np.where(exhausted, costs[np.arange(n * k), argmin], value)
    q_hat = grid.values[idx].reshape(n, k)
    cost = value.reshape(n, k)
    return SetValuedTarget(q_hat=q_hat, cost=cost, fallback_count=fallback,
                           threshold=threshold)


def near_best_actions(i, d, q_target, slack, game):
    """Actions within ``slack`` of the best utility on channel d, with the
    aggregate treated as pinned at ``q_target``.

    With the aggregate pinned, only the rate term distinguishes actions.
    Channels the user cannot contend on have no near-best actions.
    """
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    if game.m == 0:
        raise ValueError("empty action set")
    if not game.contender_mask[i, d]:
        return np.array([], dtype=int)
    utilities = np.array([
        log_rate(i, j, d, game.radio) + q_target for j in range(game.m)
    ])
    return np.flatnonzero(utilities >= utilities.max() - slack - 1e-12)


def learning_error_fixed_point(n, k, impact_bound, failure_prob, epsilon,
                               delta, tol=1e-10):
    """Smallest learning error consistent with its own induced horizon.

    Solves E^2 = 32*sqrt(2)*n*g^2*ln(2kT/beta)*sqrt(ln k * ln(1/delta))/eps
    with T = 16 n^2 g^2 ln k / E^2, by damped fixed-point iteration on E^2
    starting from E = 1.  Returns (error, horizon) with the horizon as a
    real number; learners round it up.
    """
    log_k = math.log(k)
    if log_k == 0.0:
        # single channel: nothing to learn, no learning error
        return 0.0, 0.0
    c_horizon = 16.0 * (n * impact_bound) ** 2 * log_k
    c_err = (32.0 * math.sqrt(2.0) * n * impact_bound ** 2
             * math.sqrt(log_k * math.log(1.0 / delta)) / epsilon)
    log_num = math.log(2.0 * k * c_horizon / failure_prob)
    x = 1.0
    for _ in range(MAX_FIXED_POINT_ITERS):
        fx = c_err * (log_num - math.log(x))
        x_new = 0.5 * (x + fx)
        if x_new <= 0:
            x_new = x / 2.0
        if abs(x_new - x) <= tol * max(1.0, abs(x_new)):
            x = x_new
            break
        x = x_new
    else:
        raise NumericalError("learning-error fixed point did not converge")
    return math.sqrt(x), c_horizon / x


def learning_error_for_periods(n, k, impact_bound, periods):
    """Learning error implied by an explicitly chosen horizon.

    Inverts T = 16 n^2 g^2 ln k / E^2, so longer horizons mean smaller
    errors.
    """
    if periods <= 0:
        raise ValueError("periods must be positive")
    return 4.0 * n * impact_bound * math.sqrt(math.log(k) / periods)


@dataclass(frozen=True)
class ApproximationBudget:
    """Decomposed equilibrium approximation.

    total = lipschitz_gap + grid_step + search_error + learning_error, and
    response_slack = impact_bound + 2*grid_step + lipschitz_gap is the slack
    used when forming near-best action sets.
    """

    lipschitz_gap: float
    grid_step: float
    search_error: float
    learning_error: float
    total: float
    response_slack: float
    impact_bound: float
    periods: float


def approximation_budget(n, m, k, impact_bound, grid_step, failure_prob,
                         epsilon, delta, periods=None):
    """Assemble the full approximation budget for one configuration.

    ``periods=None`` derives the horizon from the learning-error fixed
    point; otherwise the learning error is the one implied by the requested
    horizon.
    """
    zeta = lipschitz_equilibrium_gap(n, m, impact_bound)
    e_search = total_scan_error_bound(n, k, impact_bound, grid_step,
                                      failure_prob, epsilon)
    if periods is None:
        e_learn, horizon = learning_error_fixed_point(
            n, k, impact_bound, failure_prob, epsilon, delta)
        if horizon > 0:
            horizon = math.ceil(horizon)
    else:
        e_learn = learning_error_for_periods(n, k, impact_bound, periods)
        horizon = periods
    total = zeta + grid_step + e_search + e_learn
    return ApproximationBudget(
        lipschitz_gap=zeta,
        grid_step=grid_step,
        search_error=e_search,
        learning_error=e_learn,
        total=total,
        response_slack=impact_bound + 2.0 * grid_step + zeta,
        impact_bound=impact_bound,
        periods=max(int(horizon), 1),
    )


def measure_regret(game, P, mode="standard", p=None):
    """Max unilateral improvement per user by exhaustive deviation search.

    Deviations range over every (action, pure channel) pair while the other
    users keep their rows of ``P``.  In ``standard`` mode the deviator's
    contention change propagates into every aggregate; in ``aggregative``
    mode aggregates stay pinned at their current values.  Mixed deviations
    are covered because the expected utility is linear in the deviator's own
    row.  Returns (per-user regrets, max regret).
    """
    if mode not in ("standard", "aggregative"):
        raise ValueError("mode must be 'standard' or 'aggregative'")
    if game.n * game.m * game.k > MAX_REGRET_CELLS:
        raise InstanceTooLarge(
            "exhaustive deviation search refused; instance too large")
    P = np.asarray(P, dtype=float)
    if p is None:
        p = game.contention()
    mask = game.contender_mask
    current = np.array([
        expected_utility(i, int(game.assigned_action[i]), p, P, game.radio,
                         game.impact_bound, mask)
        for i in range(game.n)
    ])
    frozen = aggregate_matrix(p, P, game.impact_bound, mask)
    regrets = np.zeros(game.n)
    for i in range(game.n):
        best = -np.inf
        for j in range(game.m):
            if mode == "standard":
                p_dev = p.copy()
                p_dev[i] = game.action_contention[i, j]
            for d in range(game.k):
                if not mask[i, d]:
                    continue
                if mode == "standard":
                    P_dev = P.copy()
                    P_dev[i] = 0.0
                    P_dev[i, d] = 1.0
                    u = (log_rate(i, j, d, game.radio)
                         + aggregate_matrix(p_dev, P_dev, game.impact_bound,
                                            mask)[i, d])
                else:
                    u = log_rate(i, j, d, game.radio) + frozen[i, d]
                best = max(best, u)
        regrets[i] = best - current[i]
    return regrets, float(regrets.max())
