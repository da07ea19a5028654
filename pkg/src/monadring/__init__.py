"""Monadring: a desk-scale token-ring subnet consensus protocol.

Subpackages by layer: :mod:`monadring.fhe` (BFV encryption with tracked
noise), :mod:`monadring.shamir` (threshold sharing and resharing),
:mod:`monadring.voting` / :mod:`monadring.games` (voting-game mathematics),
:mod:`monadring.blind` (encrypted ballots and threshold opening),
:mod:`monadring.ledger` / :mod:`monadring.ring` (the subnet state machine),
:mod:`monadring.hostnet` (the anchoring registry), and :mod:`monadring.sim`
(the deterministic discrete-event harness behind the ``monadring`` CLI).
"""

from .fhe import FheParams, RingElement, Ciphertext, FheKeys
from .scenario import Scenario, ScenarioError, load_scenario
from .sim import Metrics, RunResult, run, replay
from .voting import Vote, VotingGameParams, solve_equilibrium_xi

__all__ = [
    "Ciphertext",
    "FheKeys",
    "FheParams",
    "Metrics",
    "RingElement",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "Vote",
    "VotingGameParams",
    "load_scenario",
    "replay",
    "run",
    "solve_equilibrium_xi",
]
