"""Finite-game primitives: best responses and epsilon-equilibrium checks.

`GameDefs` is the record a (Bayesian) game is described by: players, their
finite strategy spaces, a payoff function, and optionally type spaces with
priors.  The helpers below only need the strategic form; the type fields
are carried for callers that model incomplete information.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence


@dataclass(frozen=True)
class GameDefs:
    players: tuple
    strategy_spaces: tuple[tuple, ...]
    payoff: Callable[[int, tuple], float]
    type_spaces: tuple[tuple, ...] | None = None
    type_priors: tuple[dict, ...] | None = None
    epsilon: float = 0.0

    def __post_init__(self):
        if len(self.players) != len(self.strategy_spaces):
            raise ValueError("one strategy space per player required")
        if any(len(space) == 0 for space in self.strategy_spaces):
            raise ValueError("strategy spaces must be non-empty")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def best_response(defs: GameDefs, player: int, profile: Sequence) -> object:
    """Argmax strategy for ``player`` against the others' fixed profile.

    Ties break toward the lowest-index strategy in the player's space.
    """
    base = list(profile)
    best = None
    best_value = None
    for strategy in defs.strategy_spaces[player]:
        base[player] = strategy
        value = defs.payoff(player, tuple(base))
        if best_value is None or value > best_value:
            best, best_value = strategy, value
    return best


def deviation_gain(defs: GameDefs, player: int, profile: Sequence) -> float:
    """How much the player gains by unilaterally switching to a best response."""
    base = list(profile)
    current = defs.payoff(player, tuple(base))
    base[player] = best_response(defs, player, profile)
    return defs.payoff(player, tuple(base)) - current


def is_epsilon_equilibrium(defs: GameDefs, profile: Sequence,
                           epsilon: float | None = None) -> bool:
    """No player can gain more than epsilon by deviating unilaterally."""
    eps = defs.epsilon if epsilon is None else epsilon
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    return all(deviation_gain(defs, i, profile) <= eps
               for i in range(len(defs.players)))
