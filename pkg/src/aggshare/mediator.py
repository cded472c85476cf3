"""The weak mediator: collect voluntary reports, learn, suggest.

The mediator can only collect reported channel rows (opt-out users report
nothing), run the private target search and learning loop, and hand back
non-binding suggestions.  Opt-in users receive their personal averaged row;
opt-out users always receive the fixed uniform row, which by construction
cannot depend on anybody's report.

Privacy spend per epoch is twice the configured epsilon: the target search
consumes one epsilon-worth of threshold-scan noise and the per-period
selections compose to another under the adaptive composition rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .equilibrium import approximation_budget, build_grid, select_targets
from .learning import ConstraintSet, EpochContext, LearnerParams, mw_run
from .model import ModelError, ROW_SUM_TOL, own_share

FIXED_KIND = "fixed"
PERSONAL_KIND = "personal"


@dataclass
class Report:
    """One user's submission: a channel row, or None when opting out."""

    user: int
    row: np.ndarray | None

    @property
    def opted_in(self):
        return self.row is not None


@dataclass
class Suggestion:
    user: int
    row: np.ndarray
    kind: str


@dataclass
class Billboard:
    """Everything the mediator publishes.

    Per-user target rows and ceilings from the search phase, and per-period
    aggregate selections and connection shares from the learning phase.  A
    user's suggestion is a deterministic function of this board plus their
    own report and radio data, which is the structural basis of the joint
    privacy claim.
    """

    q_hat: np.ndarray
    ceilings: np.ndarray
    selections: np.ndarray
    connection: np.ndarray


@dataclass
class EpochResult:
    suggestion: np.ndarray
    opt_in: np.ndarray
    trajectory: object
    billboard: Billboard
    budget: object
    learner: LearnerParams
    cset: ConstraintSet
    fallback_count: int
    rejected_reports: int
    epsilon_spent: float
    threshold: float
    seed: int


def collect_reports(rows, opt_in_flags):
    """Wrap submitted rows as reports; malformed opt-in rows are downgraded
    to opt-out with a warning rather than rejected outright."""
    rows = np.asarray(rows, dtype=float)
    reports = []
    rejected = 0
    for i, opted in enumerate(opt_in_flags):
        if not opted:
            reports.append(Report(user=i, row=None))
            continue
        row = rows[i]
        bad = (np.any(row < -ROW_SUM_TOL) or np.any(row > 1 + ROW_SUM_TOL)
               or abs(row.sum() - 1.0) > ROW_SUM_TOL)
        if bad:
            warnings.warn(f"user {i} submitted a non-stochastic row; "
                          "treating the user as opted out")
            reports.append(Report(user=i, row=None))
            rejected += 1
        else:
            reports.append(Report(user=i, row=row.copy()))
    return reports, rejected


def reported_profile(reports, k):
    """Numeric matrix the mediator computes with: opt-out rows are uniform."""
    n = len(reports)
    P = np.full((n, k), 1.0 / k)
    for r in reports:
        if r.opted_in:
            P[r.user] = r.row
    return P


def _log_rate_rows(game, user):
    """(m, k) log rates for one user across all actions and channels."""
    radio = game.radio
    snr = (radio.tx_power_w[user] * radio.channel_gain[user][None, :]
           / radio.noise_w[user][None, :])
    rate = radio.bandwidth_hz[user][None, :] * np.log2(1.0 + snr)
    if np.any(rate <= 0):
        raise ModelError("zero rate has no log utility (channel gain 0?)")
    return np.log(rate)


def support_row(game, user, q_hat_row, slack):
    """Channels where the user's assigned action stays within ``slack`` of
    the best action, with aggregates pinned at the published targets.

    Falls back to the user's contendable channels when the assigned action
    is dominated everywhere (possible under a tiny slack), since an empty
    support admits no strategy row.
    """
    util = _log_rate_rows(game, user) + np.asarray(q_hat_row)[None, :]
    j = int(game.assigned_action[user])
    ok = util[j] >= util.max(axis=0) - slack - 1e-12
    row = game.contender_mask[user] & ok
    if not row.any():
        row = game.contender_mask[user].copy()
    return row


def build_constraints(game, q_hat, response_slack, opt_out):
    support = np.zeros((game.n, game.k), dtype=bool)
    for i in range(game.n):
        support[i] = support_row(game, i, q_hat[i], response_slack)
    return ConstraintSet(support=support, opt_out=np.asarray(opt_out, bool))


def _learner_for(game, budget, privacy, periods):
    if periods is not None:
        return LearnerParams.from_periods(
            game.n, game.k, game.impact_bound, periods,
            privacy.per_round(periods))
    T = max(int(budget.periods), 1)
    eps0 = privacy.per_round(T)
    if budget.learning_error <= 0:
        return LearnerParams(periods=1, step_size=0.0, epsilon0=eps0,
                             learning_error=0.0)
    return LearnerParams(
        periods=T,
        step_size=budget.learning_error / (4.0 * game.n * game.impact_bound),
        epsilon0=eps0,
        learning_error=budget.learning_error)


def run_epoch(game, reports, privacy, noise, *, periods=None,
              failure_prob=0.25, threshold=None,
              prefer_high_connection=False, rejected_reports=0):
    """One full mediation epoch: grid, private target search, constraint
    sets, learning loop, suggestions."""
    p = game.contention()
    P = reported_profile(reports, game.k)
    opt_out = np.array([not r.opted_in for r in reports], dtype=bool)
    grid = build_grid(game.n, game.impact_bound, game.grid_step)
    budget = approximation_budget(
        game.n, game.m, game.k, game.impact_bound, game.grid_step,
        failure_prob, privacy.epsilon, privacy.delta, periods=periods)
    learner = _learner_for(game, budget, privacy, periods)
    targets = select_targets(grid, p, P, game.impact_bound, threshold,
                             privacy.epsilon, noise, game.contender_mask)
    ceilings = targets.q_hat + game.grid_step + budget.search_error
    cset = build_constraints(game, targets.q_hat, budget.response_slack,
                             opt_out)
    ctx = EpochContext(
        n=game.n, k=game.k, impact_bound=game.impact_bound, grid=grid,
        ceilings=ceilings,
        own_share=own_share(p, game.k, game.contender_mask),
        cset=cset, prefer_high_connection=prefer_high_connection)
    result = mw_run(ctx, learner, noise)
    board = Billboard(q_hat=targets.q_hat, ceilings=ceilings,
                      selections=result.trajectory.selections,
                      connection=result.trajectory.connection)
    return EpochResult(
        suggestion=result.suggestion,
        opt_in=~opt_out,
        trajectory=result.trajectory,
        billboard=board,
        budget=budget,
        learner=learner,
        cset=cset,
        fallback_count=targets.fallback_count,
        rejected_reports=rejected_reports,
        epsilon_spent=2.0 * privacy.epsilon,
        threshold=targets.threshold,
        seed=noise.rng_seed,
    )


def issue_suggestions(epoch, opt_in_flags):
    """Personal averaged rows for opt-in users, the fixed uniform row for
    everyone else."""
    k = epoch.suggestion.shape[1]
    uniform = np.full(k, 1.0 / k)
    out = []
    for i, opted in enumerate(opt_in_flags):
        if opted:
            out.append(Suggestion(user=i, row=epoch.suggestion[i].copy(),
                                  kind=PERSONAL_KIND))
        else:
            out.append(Suggestion(user=i, row=uniform.copy(),
                                  kind=FIXED_KIND))
    return out


def replay_user_row(game, budget, learner, billboard, user, opted_in):
    """Rebuild one user's suggestion row from published data only.

    Uses the billboard (targets, per-period connection shares), the user's
    own opt-in status and their own radio/action data; no other user's
    report or contention enters.  Reproduces the mediator's row bit-exactly.
    """
    k = game.k
    if not opted_in:
        return np.full(k, 1.0 / k)
    support = support_row(game, user, billboard.q_hat[user],
                          budget.response_slack)
    row = np.full(k, 1.0 / k)
    acc = np.zeros(k)
    T = billboard.connection.shape[0]
    for t in range(T):
        q_bar = billboard.connection[t, user]
        w = row * np.exp(-learner.step_size * q_bar)
        wz = np.where(support, w, 0.0)
        total = wz.sum()
        row = wz / (total if total > 0.0 else 1.0)
        acc += row
    return acc / T
