"""Scenario files: the structured-text description of one simulation run.

Scenarios are YAML documents with nested sections (see the schema below);
a scenario plus its seed fully determines a run, byte for byte.

Schema::

    seed: 42                  # 64-bit run seed
    rounds: 20                # stop after this many completed circulations
    duration: 100000          # optional simulated-time cap
    subnet:
      id: demo
      nodes: [n0, n1, n2, n3, n4]    # initial registrations, join order
      launch_threshold: 5            # default: all listed nodes
      epsilon: 10                    # per-hop time estimate (recovery unit)
      epoch_length: 10               # rounds per epoch
      rotation_count: 0              # members swapped per epoch
      vote_threshold: 3              # t for threshold decryption
    candidates: [c0, c1]             # join after activation -> rotation pool
    network: {delay_min: 1, delay_max: 3, proc_time: 1}
    workload: {requests_per_round: 1}
    fhe: {ring_degree: 64, ciphertext_modulus_bits: 40,
          plaintext_modulus_bits: 16, sigma: 3.2}
    voting: {theta_top: "0.5", theta_bot: "0.5", alpha: 1, beta: 1}
    broadcast: false
    faults:
      - {time: 120, node: n2, kind: DropToken}
    upgrades:
      - {round: 5, version: 2}

Fault kinds: Crash, Recover, DropToken, TamperGroup, DoubleSign, Equivocate.
``epsilon`` must exceed ``delay_max + proc_time`` or the recovery-time bound
cannot hold; validation enforces this.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import yaml

from .fhe import FheParams
from .voting import VotingGameParams


class ScenarioError(Exception):
    """Scenario file fails schema or consistency validation."""


class FaultKind(enum.Enum):
    CRASH = "Crash"
    RECOVER = "Recover"
    DROP_TOKEN = "DropToken"
    TAMPER_GROUP = "TamperGroup"
    DOUBLE_SIGN = "DoubleSign"
    EQUIVOCATE = "Equivocate"


@dataclass(frozen=True)
class FaultSpec:
    time: int
    node: str
    kind: FaultKind


@dataclass(frozen=True)
class UpgradeSpec:
    round: int
    version: int


@dataclass(frozen=True)
class Scenario:
    seed: int
    subnet_id: str
    nodes: tuple[str, ...]
    epsilon: int
    rounds: int = 0
    duration: int = 0
    launch_threshold: int = 0
    epoch_length: int = 10
    rotation_count: int = 0
    vote_threshold: int = 0
    candidates: tuple[str, ...] = ()
    delay_min: int = 1
    delay_max: int = 3
    proc_time: int = 1
    requests_per_round: int = 1
    fhe: FheParams = field(default_factory=lambda: SIM_FHE_PARAMS)
    voting: VotingGameParams | None = None
    broadcast: bool = False
    faults: tuple[FaultSpec, ...] = ()
    upgrades: tuple[UpgradeSpec, ...] = ()

    def __post_init__(self):
        if self.rounds <= 0 and self.duration <= 0:
            raise ScenarioError("scenario needs a positive rounds or duration limit")
        if len(self.nodes) < 3:
            raise ScenarioError("a subnet needs at least 3 initial nodes")
        if len(set(self.nodes + self.candidates)) != len(self.nodes) + len(self.candidates):
            raise ScenarioError("node and candidate ids must be unique")
        if self.launch_threshold == 0:
            object.__setattr__(self, "launch_threshold", len(self.nodes))
        if not 3 <= self.launch_threshold <= len(self.nodes):
            raise ScenarioError("launch threshold must lie in [3, len(nodes)]")
        if self.vote_threshold == 0:
            object.__setattr__(self, "vote_threshold", self.launch_threshold // 2 + 1)
        if not 2 <= self.vote_threshold <= self.launch_threshold:
            raise ScenarioError("vote threshold must satisfy 2 <= t <= n")
        if not 0 <= self.delay_min <= self.delay_max:
            raise ScenarioError("need 0 <= delay_min <= delay_max")
        if self.proc_time < 1:
            raise ScenarioError("proc_time must be at least 1")
        if self.epsilon <= self.delay_max + self.proc_time:
            raise ScenarioError(
                "epsilon must exceed delay_max + proc_time for recovery bounds")
        if self.epoch_length < 1:
            raise ScenarioError("epoch_length must be positive")
        if self.requests_per_round < 0:
            raise ScenarioError("requests_per_round must be non-negative")
        known = set(self.nodes) | set(self.candidates)
        for fault in self.faults:
            if fault.node not in known:
                raise ScenarioError(f"fault names unknown node {fault.node!r}")
            if fault.time < 0:
                raise ScenarioError("fault times must be non-negative")
        for upgrade in self.upgrades:
            if upgrade.version < 2:
                raise ScenarioError("upgrades must target version 2 or higher")

    @property
    def voting_params(self) -> VotingGameParams:
        if self.voting is not None:
            return self.voting
        return VotingGameParams(n=self.launch_threshold, theta_top="0.5",
                                theta_bot="0.5")


SIM_FHE_PARAMS = FheParams(ring_degree=64, ciphertext_modulus=1 << 40,
                           plaintext_modulus=1 << 16, gaussian_stddev=3.2)


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ScenarioError(f"missing {key!r} in {context}")
    return mapping[key]


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    try:
        subnet = _require(doc, "subnet", "scenario")
        network = doc.get("network", {})
        workload = doc.get("workload", {})
        fhe_doc = doc.get("fhe", {})
        voting_doc = doc.get("voting")
        faults = []
        for entry in doc.get("faults", []) or []:
            try:
                kind = FaultKind(_require(entry, "kind", "fault"))
            except ValueError as exc:
                raise ScenarioError(f"unknown fault kind {entry.get('kind')!r}") from exc
            faults.append(FaultSpec(time=int(_require(entry, "time", "fault")),
                                    node=str(_require(entry, "node", "fault")),
                                    kind=kind))
        upgrades = [UpgradeSpec(round=int(_require(entry, "round", "upgrade")),
                                version=int(_require(entry, "version", "upgrade")))
                    for entry in doc.get("upgrades", []) or []]
        fhe_params = SIM_FHE_PARAMS
        if fhe_doc:
            fhe_params = FheParams(
                ring_degree=int(fhe_doc.get("ring_degree", 64)),
                ciphertext_modulus=1 << int(fhe_doc.get("ciphertext_modulus_bits", 40)),
                plaintext_modulus=1 << int(fhe_doc.get("plaintext_modulus_bits", 16)),
                gaussian_stddev=float(fhe_doc.get("sigma", 3.2)),
            )
        voting = None
        if voting_doc:
            voting = VotingGameParams(
                n=int(voting_doc.get("n", len(_require(subnet, "nodes", "subnet")))),
                theta_top=str(_require(voting_doc, "theta_top", "voting")),
                theta_bot=str(_require(voting_doc, "theta_bot", "voting")),
                alpha=float(voting_doc.get("alpha", 1)),
                beta=float(voting_doc.get("beta", 1)),
            )
        return Scenario(
            seed=int(_require(doc, "seed", "scenario")),
            rounds=int(doc.get("rounds", 0)),
            duration=int(doc.get("duration", 0)),
            subnet_id=str(_require(subnet, "id", "subnet")),
            nodes=tuple(str(n) for n in _require(subnet, "nodes", "subnet")),
            launch_threshold=int(subnet.get("launch_threshold", 0)),
            epsilon=int(_require(subnet, "epsilon", "subnet")),
            epoch_length=int(subnet.get("epoch_length", 10)),
            rotation_count=int(subnet.get("rotation_count", 0)),
            vote_threshold=int(subnet.get("vote_threshold", 0)),
            candidates=tuple(str(c) for c in doc.get("candidates", []) or []),
            delay_min=int(network.get("delay_min", 1)),
            delay_max=int(network.get("delay_max", 3)),
            proc_time=int(network.get("proc_time", 1)),
            requests_per_round=int(workload.get("requests_per_round", 1)),
            fhe=fhe_params,
            voting=voting,
            broadcast=bool(doc.get("broadcast", False)),
            faults=tuple(faults),
            upgrades=tuple(upgrades),
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_from_yaml(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from exc
    return scenario_from_dict(doc)


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        return scenario_from_yaml(handle.read())
