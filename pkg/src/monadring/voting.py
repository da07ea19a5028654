"""Threshold voting game: payoffs, subgame thresholds, strategies, solvers.

n voters each cast top/bottom; a side wins when its fraction of all n votes
strictly exceeds that side's threshold.  Winners collect beta, the losing
side pays alpha, everything else pays zero.  Threshold comparisons are done
on exact rationals (`Fraction`), so `count/n > theta` never depends on float
rounding; floats passed as thresholds are read as their shortest decimal
literal (0.6 means 3/5).

Expectations over a symmetric mixed strategy xi are evaluated as binomial
tail sums.  Two conventions are provided for the penalty tail:

* ``"opponents"`` (default) — the opposing count is drawn from the n-1
  other voters, which is what an exhaustive enumeration of opponent
  profiles produces;
* ``"population"`` — the opposing count is drawn from all n seats, treating
  the electorate as exchangeable including the conditioning voter.

The two differ systematically (the population tail counts one extra trial);
keeping both makes the difference measurable instead of silently corrected.
All expectation and gradient functions are numeric-type generic: pass a
`Fraction` strategy to get exact rational values, floats for speed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb, floor, lgamma


class NoInteriorRoot(Exception):
    """The equilibrium condition has no sign change inside (0, 1)."""


class NonConvergence(Exception):
    """Mechanism optimisation failed to converge; carries the value trace."""

    def __init__(self, message: str, trace: tuple[float, ...]):
        super().__init__(message)
        self.trace = trace


class Vote(enum.Enum):
    TOP = "top"
    BOT = "bot"

    @property
    def opposite(self) -> "Vote":
        return Vote.BOT if self is Vote.TOP else Vote.TOP


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, (float, str)):
        return Fraction(str(value))
    raise TypeError(f"cannot interpret {value!r} as an exact threshold")


@dataclass(frozen=True)
class VotingGameParams:
    """Subgame parameters (the global-network pair is recorded context only)."""

    n: int
    theta_top: Fraction
    theta_bot: Fraction
    alpha: float = 1
    beta: float = 1
    weight: float = 1
    global_n: int | None = None
    global_theta: Fraction | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta_top", as_fraction(self.theta_top))
        object.__setattr__(self, "theta_bot", as_fraction(self.theta_bot))
        if self.global_theta is not None:
            object.__setattr__(self, "global_theta", as_fraction(self.global_theta))
        if self.n < 2:
            raise ValueError("need at least two voters")
        for name, theta in (("theta_top", self.theta_top), ("theta_bot", self.theta_bot)):
            if not 0 < theta <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {theta}")
        if self.theta_top + self.theta_bot < 1:
            raise ValueError("thresholds must satisfy theta_top + theta_bot >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("payoff magnitudes must be non-negative")

    def threshold(self, side: Vote) -> Fraction:
        return self.theta_top if side is Vote.TOP else self.theta_bot


@dataclass(frozen=True)
class VoteState:
    """Observed counts when a voter moves: n_seen of the n-1 others have voted."""

    n_top: int = 0
    n_bot: int = 0

    def __post_init__(self):
        if self.n_top < 0 or self.n_bot < 0:
            raise ValueError("vote counts must be non-negative")

    @property
    def n_seen(self) -> int:
        return self.n_top + self.n_bot

    def count(self, side: Vote) -> int:
        return self.n_top if side is Vote.TOP else self.n_bot


@dataclass(frozen=True)
class Strategy:
    """Probability of voting top."""

    xi: float

    def __post_init__(self):
        if not 0 <= self.xi <= 1:
            raise ValueError("strategy must be a probability")


def payoff(params: VotingGameParams, own_vote: Vote, final_top: int, final_bot: int):
    """Realised payoff given the final tally.

    beta when the own side's fraction strictly exceeds its threshold,
    -alpha when the opposing side's does, zero otherwise.
    """
    n = params.n
    if final_top + final_bot != n:
        raise ValueError(f"final counts must sum to n={n}")
    own = final_top if own_vote is Vote.TOP else final_bot
    other = final_bot if own_vote is Vote.TOP else final_top
    if Fraction(own, n) > params.threshold(own_vote):
        return params.beta
    if Fraction(other, n) > params.threshold(own_vote.opposite):
        return -params.alpha
    return 0


def subgame_threshold(params: VotingGameParams, state: VoteState, side: Vote = Vote.TOP):
    """Residual threshold the remaining voters face for ``side``.

    Zero once the side has already cleared its quota, infinity once the
    opposing side has, otherwise the fraction of remaining votes needed.
    """
    n = params.n
    if state.n_seen > n - 1:
        raise ValueError("observed more votes than there are other voters")
    own = state.count(side)
    other = state.count(side.opposite)
    if own >= params.threshold(side) * n:
        return Fraction(0)
    if other >= params.threshold(side.opposite) * n:
        return math.inf
    return (params.threshold(side) * n - own) / (n - state.n_seen)


@dataclass(frozen=True)
class VoteDecision:
    """Outcome of the perfect-information voting rule.

    ``determined`` marks a clinching vote; otherwise the voter randomises
    and ``vote`` carries the tie-break lean (``bias`` its top-probability).
    """

    vote: Vote
    determined: bool
    bias: Fraction


def rational_vote_perfect(params: VotingGameParams, state: VoteState,
                          expected_future, randomize_bias=None) -> VoteDecision:
    """Vote of a rational player who has seen every earlier vote.

    ``expected_future`` lists the top-vote probabilities of the voters still
    to come.  A side is clinched when the observed count plus the own vote
    plus the expected future votes strictly exceeds the side's quota.  When
    neither side clinches, the voter randomises; under ideal information the
    lean is deterministic: vote for whichever side is closer to its
    threshold.  ``randomize_bias`` overrides that lean with a caller-chosen
    top-probability.
    """
    n = params.n
    future = [as_fraction(p) for p in expected_future]
    if state.n_seen + 1 + len(future) != n:
        raise ValueError("state plus remaining voters must account for all n votes")
    if any(not 0 <= p <= 1 for p in future):
        raise ValueError("future vote probabilities must lie in [0, 1]")
    expected_top = sum(future, Fraction(0))
    expected_bot = len(future) - expected_top
    if state.n_top + 1 + expected_top > params.theta_top * n:
        return VoteDecision(Vote.TOP, True, Fraction(1))
    if state.n_bot + 1 + expected_bot > params.theta_bot * n:
        return VoteDecision(Vote.BOT, True, Fraction(0))
    if randomize_bias is not None:
        bias = as_fraction(randomize_bias)
        lean = Vote.TOP if bias > Fraction(1, 2) else Vote.BOT
        return VoteDecision(lean, False, bias)
    deficit_top = params.theta_top * n - state.n_top
    deficit_bot = params.theta_bot * n - state.n_bot
    if deficit_top < deficit_bot:
        return VoteDecision(Vote.TOP, False, Fraction(1))
    return VoteDecision(Vote.BOT, False, Fraction(0))


# --- expectations under a symmetric mixed strategy ------------------------

def _first_above(x: Fraction) -> int:
    """Smallest integer strictly greater than x."""
    return floor(x) + 1


def _upper_tail(trials: int, k: int, prob):
    """P[X >= k] for X ~ Binomial(trials, prob), in the arithmetic of prob."""
    if k <= 0:
        return 1 + prob * 0
    if k > trials:
        return prob * 0
    q = 1 - prob
    return sum(comb(trials, i) * prob ** i * q ** (trials - i)
               for i in range(k, trials + 1))


def _upper_tail_grad(trials: int, k: int, prob):
    """d/dprob of the binomial upper tail."""
    if k <= 0 or k > trials:
        return prob * 0
    return trials * comb(trials - 1, k - 1) * prob ** (k - 1) * (1 - prob) ** (trials - k)


def _tail_starts(params: VotingGameParams, vote: Vote) -> tuple[int, int]:
    n = params.n
    own = params.threshold(vote)
    other = params.threshold(vote.opposite)
    reward_start = _first_above(own * n - 1)
    penalty_start = _first_above(other * n)
    return reward_start, penalty_start


def _penalty_trial_count(params: VotingGameParams, penalty_pool: str) -> int:
    if penalty_pool == "opponents":
        return params.n - 1
    if penalty_pool == "population":
        return params.n
    raise ValueError("penalty_pool must be 'opponents' or 'population'")


def expected_payoff(params: VotingGameParams, xi, vote: Vote,
                    penalty_pool: str = "opponents"):
    """Expected payoff conditional on the voter's own vote.

    Reward: the other n-1 voters push the own side past its quota
    (own vote included in the count).  Penalty: the opposing count clears
    its quota; drawn over n-1 or n trials per ``penalty_pool``.
    """
    n = params.n
    reward_start, penalty_start = _tail_starts(params, vote)
    trials = _penalty_trial_count(params, penalty_pool)
    own_prob = xi if vote is Vote.TOP else 1 - xi
    reward = _upper_tail(n - 1, reward_start, own_prob)
    penalty = _upper_tail(trials, penalty_start, 1 - own_prob)
    return params.beta * reward - params.alpha * penalty


def expected_payoff_grad_xi(params: VotingGameParams, xi, vote: Vote,
                            penalty_pool: str = "opponents"):
    """Exact d/dxi of :func:`expected_payoff` (closed form)."""
    n = params.n
    reward_start, penalty_start = _tail_starts(params, vote)
    trials = _penalty_trial_count(params, penalty_pool)
    own_prob = xi if vote is Vote.TOP else 1 - xi
    sign = 1 if vote is Vote.TOP else -1
    reward = _upper_tail_grad(n - 1, reward_start, own_prob)
    penalty = _upper_tail_grad(trials, penalty_start, 1 - own_prob)
    return sign * (params.beta * reward + params.alpha * penalty)


def posterior_expected_payoff(params: VotingGameParams, xi,
                              penalty_pool: str = "opponents"):
    """Mixture of the two conditionals under the strategy itself."""
    return (xi * expected_payoff(params, xi, Vote.TOP, penalty_pool)
            + (1 - xi) * expected_payoff(params, xi, Vote.BOT, penalty_pool))


def posterior_grad_xi(params: VotingGameParams, xi,
                      penalty_pool: str = "opponents"):
    """Exact d/dxi of the posterior expectation (product rule)."""
    return (xi * expected_payoff_grad_xi(params, xi, Vote.TOP, penalty_pool)
            + expected_payoff(params, xi, Vote.TOP, penalty_pool)
            + (1 - xi) * expected_payoff_grad_xi(params, xi, Vote.BOT, penalty_pool)
            - expected_payoff(params, xi, Vote.BOT, penalty_pool))


def enumerate_expected_payoff(params: VotingGameParams, xi, vote: Vote):
    """Brute-force oracle: exhaust all 2^(n-1) opponent profiles.

    Kept deliberately independent of the tail-sum path; used to pin the
    closed forms in tests.
    """
    n = params.n
    total = xi * 0
    for profile in range(1 << (n - 1)):
        tops = profile.bit_count()
        bots = n - 1 - tops
        prob = xi ** tops * (1 - xi) ** bots
        final_top = tops + (1 if vote is Vote.TOP else 0)
        total = total + prob * payoff(params, vote, final_top, n - final_top)
    return total


# --- threshold-design derivatives -----------------------------------------

def beta_pdf(x: float, a: float, b: float) -> float:
    """Beta density via log-gamma; a, b must be positive."""
    if a <= 0 or b <= 0:
        raise ValueError(f"beta density parameters must be positive, got a={a}, b={b}")
    if x <= 0 or x >= 1:
        if x == 0:
            return b if a == 1 else (0.0 if a > 1 else math.inf)
        if x == 1:
            return a if b == 1 else (0.0 if b > 1 else math.inf)
        raise ValueError("beta density argument must lie in [0, 1]")
    log_pdf = (lgamma(a + b) - lgamma(a) - lgamma(b)
               + (a - 1) * math.log(x) + (b - 1) * math.log(1 - x))
    return math.exp(log_pdf)


@dataclass(frozen=True)
class ThetaGradients:
    """Threshold sensitivities of the conditional and posterior expectations.

    The conditional partials use the Beta-density likelihood approximation
    of the tail's threshold derivative; the posterior pair mixes them under
    the strategy.
    """

    top_wrt_top: float
    top_wrt_bot: float
    bot_wrt_bot: float
    bot_wrt_top: float
    posterior_top: float
    posterior_bot: float


def theta_gradients(params: VotingGameParams, xi: float) -> ThetaGradients:
    return _theta_gradients_raw(params.n, float(params.theta_top),
                                float(params.theta_bot), params.alpha,
                                params.beta, xi)


def _theta_gradients_raw(n: int, tt: float, tb: float, alpha, beta,
                         xi: float) -> ThetaGradients:
    top_wrt_top = beta * n * beta_pdf(xi, n * tt, n - n * tt + 1) * n
    top_wrt_bot = -alpha * n * beta_pdf(1 - xi, n * tb + 1, n - n * tb + 1) * (n + 1)
    bot_wrt_bot = beta * n * beta_pdf(xi, n * tb, n - n * tb + 1) * n
    bot_wrt_top = -alpha * n * beta_pdf(1 - xi, n * tt + 1, n - n * tt + 1) * (n + 1)
    return ThetaGradients(
        top_wrt_top=top_wrt_top,
        top_wrt_bot=top_wrt_bot,
        bot_wrt_bot=bot_wrt_bot,
        bot_wrt_top=bot_wrt_top,
        posterior_top=top_wrt_top * xi + bot_wrt_top * (1 - xi),
        posterior_bot=top_wrt_bot * xi + bot_wrt_bot * (1 - xi),
    )


# --- equilibrium -----------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumSolution:
    """Interior mixed equilibrium plus the always-present boundary pair.

    ``posterior_residual`` reports the posterior-expectation derivative at
    the interior point as a diagnostic; it is generally nonzero because the
    interior equilibrium balances the threshold deficits, not the posterior
    slope (see the solver docstring).
    """

    xi: float
    trivial: tuple[float, float]
    boundary_stable: tuple[bool, bool]
    posterior_residual: float


def boundary_equilibria(params: VotingGameParams) -> tuple[bool, bool]:
    """Are all-bottom (xi=0) and all-top (xi=1) self-enforcing?

    At a boundary everyone is on one side; the boundary is an equilibrium
    when conforming pays at least as much as deviating.
    """
    stable_bot = expected_payoff(params, 0, Vote.BOT) >= expected_payoff(params, 0, Vote.TOP)
    stable_top = expected_payoff(params, 1, Vote.TOP) >= expected_payoff(params, 1, Vote.BOT)
    return stable_bot, stable_top


def deficit_balance(params: VotingGameParams, xi):
    """Signed imbalance theta_bot*(1-xi) - theta_top*xi.

    The interior mixed equilibrium xi* = theta_bot/(theta_top + theta_bot)
    is its unique root: the strategy weights the two sides inversely to how
    demanding their thresholds are.
    """
    return params.theta_bot * (1 - xi) - params.theta_top * xi


def solve_equilibrium_xi(params: VotingGameParams, tol: float = 1e-12) -> EquilibriumSolution:
    """Interior mixed equilibrium by bisection on the deficit balance.

    Besides the interior point, xi = 0 and xi = 1 are always trivial
    equilibria (unanimity is self-enforcing whenever alpha, beta >= 0);
    both are reported with their stability flags.  The derivative of the
    posterior expectation at the interior point is returned as
    ``posterior_residual`` for diagnostics.
    """
    lo, hi = 1e-6, 1 - 1e-6
    f_lo = float(deficit_balance(params, lo))
    f_hi = float(deficit_balance(params, hi))
    if f_lo == 0:
        root = lo
    elif f_hi == 0:
        root = hi
    elif f_lo * f_hi > 0:
        raise NoInteriorRoot("deficit balance has no sign change in (0, 1)")
    else:
        while hi - lo > tol:
            mid = (lo + hi) / 2
            f_mid = float(deficit_balance(params, mid))
            if f_mid == 0:
                lo = hi = mid
                break
            if f_lo * f_mid < 0:
                hi = mid
            else:
                lo, f_lo = mid, f_mid
        root = (lo + hi) / 2
    return EquilibriumSolution(
        xi=root,
        trivial=(0.0, 1.0),
        boundary_stable=boundary_equilibria(params),
        posterior_residual=float(posterior_grad_xi(params, root)),
    )


# --- mechanism design -------------------------------------------------------

@dataclass(frozen=True)
class MechanismObjective:
    """Regularised design objective weights.

    ``rho_cutoff`` drives the invalid-mechanism step penalty: a side whose
    pass probability under the current strategy falls below the cutoff
    contributes its full lambda weight.
    """

    lam: float = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    rho_cutoff: float = 0.95

    def __post_init__(self):
        if min(self.lam, self.lam1, self.lam2) < 0:
            raise ValueError("regularisation weights must be non-negative")
        if not 0 < self.rho_cutoff < 1:
            raise ValueError("rho_cutoff must lie in (0, 1)")


def pass_probability(params: VotingGameParams, xi: float, side: Vote) -> float:
    """P[side's total over all n seats strictly exceeds its quota]."""
    n = params.n
    start = _first_above(params.threshold(side) * n)
    prob = xi if side is Vote.TOP else 1 - xi
    return float(_upper_tail(n, start, prob))


def mechanism_value(objective: MechanismObjective, params: VotingGameParams,
                    xi: float) -> float:
    """Design objective: posterior payoff + gradient regulariser + step penalties."""
    value = float(posterior_expected_payoff(params, xi))
    if objective.lam:
        grads = theta_gradients(params, xi)
        value += objective.lam * (grads.posterior_top + grads.posterior_bot) ** 2
    if objective.lam1 and pass_probability(params, xi, Vote.TOP) < objective.rho_cutoff:
        value += objective.lam1
    if objective.lam2 and pass_probability(params, xi, Vote.BOT) < objective.rho_cutoff:
        value += objective.lam2
    return value


@dataclass(frozen=True)
class MechanismResult:
    theta_top: float
    theta_bot: float
    xi: float
    trace: tuple[float, ...]
    iterations: int


def _with_thetas(params: VotingGameParams, tt: float, tb: float) -> VotingGameParams:
    return VotingGameParams(
        n=params.n,
        theta_top=Fraction(str(round(min(max(tt, 0.01), 1.0), 12))),
        theta_bot=Fraction(str(round(min(max(tb, 0.01), 1.0), 12))),
        alpha=params.alpha, beta=params.beta, weight=params.weight,
        global_n=params.global_n, global_theta=params.global_theta)


def optimize_mechanism(objective: MechanismObjective, init: tuple[float, float, float],
                       params: VotingGameParams, *, theta_rate: float = 0.01,
                       tol: float = 1e-10, max_iters: int = 10_000,
                       update_theta: bool = True) -> MechanismResult:
    """Alternating iteration: xi seeks its stationary point, theta descends.

    The xi step is a damped Newton move onto the root of the posterior
    derivative (the voters settling on a stationary strategy); the theta
    step is plain gradient descent using the Beta-density threshold
    sensitivities plus a finite-difference term for the regulariser.
    Stops when the objective change falls below ``tol``.
    """
    tt, tb, xi = init
    cur = _with_thetas(params, tt, tb)
    eps = 1e-6
    trace = [mechanism_value(objective, cur, xi)]
    for iteration in range(1, max_iters + 1):
        # xi: damped Newton toward the stationary point of the posterior
        grad = float(posterior_grad_xi(cur, xi))
        h = 1e-6
        curv = (float(posterior_grad_xi(cur, min(xi + h, 1 - eps)))
                - float(posterior_grad_xi(cur, max(xi - h, eps)))) / (2 * h)
        if abs(curv) > 1e-12:
            xi -= 0.5 * grad / curv
        else:
            xi += 0.1 * grad
        xi = min(max(xi, eps), 1 - eps)

        if update_theta:
            grads = theta_gradients(cur, xi)
            step_top = grads.posterior_top
            step_bot = grads.posterior_bot
            if objective.lam:
                combined = grads.posterior_top + grads.posterior_bot

                def smooth_sum(a, b):
                    g = _theta_gradients_raw(cur.n, a, b, cur.alpha, cur.beta, xi)
                    return g.posterior_top + g.posterior_bot

                dh = 1e-5
                step_top += objective.lam * combined * (
                    smooth_sum(tt + dh, tb) - smooth_sum(tt - dh, tb)) / dh
                step_bot += objective.lam * combined * (
                    smooth_sum(tt, tb + dh) - smooth_sum(tt, tb - dh)) / dh
            tt = min(max(tt - theta_rate * step_top, 0.05), 0.99)
            tb = min(max(tb - theta_rate * step_bot, 0.05), 0.99)
            if tt + tb < 1:  # keep the design in the valid region
                shortfall = (1 - tt - tb) / 2
                tt += shortfall
                tb += shortfall
            cur = _with_thetas(params, tt, tb)

        trace.append(mechanism_value(objective, cur, xi))
        if abs(trace[-1] - trace[-2]) < tol:
            return MechanismResult(tt, tb, xi, tuple(trace), iteration)
    raise NonConvergence(f"no convergence after {max_iters} iterations", tuple(trace))
