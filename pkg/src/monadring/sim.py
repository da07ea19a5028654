"""Deterministic discrete-event simulator for the full subnet workflow.

Drives launch (hostnet registration, threshold activation, key generation
and sharing), token circulation, the broadcast optimization, per-epoch key
resharing and member rotation, fault injection, token recovery, and blind
slashing votes, all on simulated time.  Two runs of the same scenario
produce byte-identical event logs, and every metric is recomputed from the
log, so replaying a log yields exactly the run's metrics.

Log records are ``time|node|kind|payload`` lines; payloads are digests or
comma-joined ``key=value`` tokens, never free text.

Fault semantics:

* ``Crash`` — the node stops processing; predecessors detect the missing
  acknowledgment after epsilon and reroute, dropping the member's group.
* ``Recover`` — the node resumes and copies a live member's ledger (the
  desk-scale stand-in for state sync, which the protocol leaves open).
* ``DropToken`` — the node's next token delivery vanishes in flight with
  no acknowledgment signal; only the recovery timers can notice.
* ``TamperGroup`` — at its next turn the node replaces its group with one
  rewriting an event it previously signed, forking itself.
* ``DoubleSign`` — the node broadcasts a conflicting same-nonce variant of
  the group it put in the token.
* ``Equivocate`` — the node sends a conflicting same-nonce variant to its
  predecessor disguised as a recovery copy.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import blind, ring
from .fhe import decode_int
from .hostnet import HostnetLedger
from .ledger import EventKind, KvStateMachine
from .scenario import FaultKind, Scenario
from .shamir import SharingPolicy


class InvariantBreach(Exception):
    """An internal protocol invariant failed during the run."""


# --- metrics ------------------------------------------------------------------

@dataclass
class Metrics:
    rounds_completed: int = 0
    round_latencies: list[int] = field(default_factory=list)
    tokens_lost: int = 0
    tokens_recovered: int = 0
    recovery_latencies: list[int] = field(default_factory=list)
    violations: dict[str, int] = field(default_factory=dict)
    evidence_count: int = 0
    votes_opened: int = 0
    votes_passed: int = 0
    digest_checkpoints: int = 0
    digest_agreements: int = 0
    q_zero_returns: int = 0
    q_nonzero_returns: int = 0
    anchors_accepted: int = 0
    copies_ignored: int = 0
    rotations: int = 0
    upgrades_applied: int = 0
    crashes: int = 0
    recoveries: int = 0

    @classmethod
    def from_log(cls, lines: list[str]) -> "Metrics":
        m = cls()
        for line in lines:
            parts = line.rstrip("\n").split("|")
            if len(parts) != 4:
                raise ValueError(f"malformed log line: {line!r}")
            _, _, kind, payload = parts
            fields = dict(item.split("=", 1) for item in payload.split(",")
                          if "=" in item)
            if kind == "round":
                m.rounds_completed += 1
                m.round_latencies.append(int(fields["latency"]))
            elif kind == "drop":
                m.tokens_lost += 1
            elif kind == "recovered":
                m.tokens_recovered += 1
                m.recovery_latencies.append(int(fields["latency"]))
            elif kind == "violation":
                rule = fields["rule"]
                m.violations[rule] = m.violations.get(rule, 0) + 1
            elif kind == "evidence":
                m.evidence_count += 1
            elif kind == "voteopen":
                m.votes_opened += 1
            elif kind == "voteclose":
                if fields["passed"] == "1":
                    m.votes_passed += 1
            elif kind == "checkpoint":
                m.digest_checkpoints += 1
                if fields["agree"] == "1":
                    m.digest_agreements += 1
            elif kind == "qret":
                if int(fields["q"]) == 0:
                    m.q_zero_returns += 1
                else:
                    m.q_nonzero_returns += 1
            elif kind == "anchor":
                if fields["accepted"] == "1":
                    m.anchors_accepted += 1
            elif kind == "copy":
                m.copies_ignored += 1
            elif kind == "rotation":
                m.rotations += 1
            elif kind == "upgradeapplied":
                m.upgrades_applied += 1
            elif kind == "crash":
                m.crashes += 1
            elif kind == "recover":
                m.recoveries += 1
        return m

    def to_csv(self) -> str:
        rows = ["metric,value"]
        for name in ("rounds_completed", "tokens_lost", "tokens_recovered",
                     "evidence_count", "votes_opened", "votes_passed",
                     "digest_checkpoints", "digest_agreements",
                     "q_zero_returns", "q_nonzero_returns", "anchors_accepted",
                     "copies_ignored", "rotations", "upgrades_applied",
                     "crashes", "recoveries"):
            rows.append(f"{name},{getattr(self, name)}")
        rows.append("mean_round_latency," + (
            f"{sum(self.round_latencies) / len(self.round_latencies):.2f}"
            if self.round_latencies else "0"))
        rows.append("max_recovery_latency," + (
            str(max(self.recovery_latencies)) if self.recovery_latencies else "0"))
        for rule in sorted(self.violations):
            rows.append(f"violations_{rule},{self.violations[rule]}")
        return "\n".join(rows) + "\n"

    def summary(self) -> str:
        lines = [
            f"rounds completed: {self.rounds_completed}",
            f"digest checkpoints: {self.digest_agreements}/{self.digest_checkpoints} agree",
            f"q returns: {self.q_zero_returns} clean, {self.q_nonzero_returns} non-zero",
            f"tokens lost/recovered: {self.tokens_lost}/{self.tokens_recovered}",
            f"violations: {sum(self.violations.values())} "
            f"({', '.join(f'{k}={v}' for k, v in sorted(self.violations.items())) or 'none'})",
            f"slashing votes: {self.votes_opened} opened, {self.votes_passed} passed",
            f"rotations: {self.rotations}, upgrades applied: {self.upgrades_applied}",
            f"anchors accepted: {self.anchors_accepted}",
        ]
        return "\n".join(lines) + "\n"


@dataclass
class VoteRecord:
    key: tuple
    seq: int
    offender: str
    opened_at: int
    evidence: ring.SlashingEvidence
    balloted: set = field(default_factory=set)
    collected: dict = field(default_factory=dict)  # voter -> ciphertext (from token)
    tally: int | None = None
    passed: bool | None = None
    transcript: blind.DecryptionTranscript | None = None


@dataclass
class RunResult:
    metrics: Metrics
    log: list[str]
    hostnet: HostnetLedger
    nodes: dict
    votes: list[VoteRecord]
    evidence: list[ring.SlashingEvidence]


def replay(log_lines: list[str]) -> Metrics:
    """Recompute metrics from a previous run's log."""
    return Metrics.from_log(list(log_lines))


# --- the engine ------------------------------------------------------------------

class _SimNode:
    def __init__(self, state: ring.NodeState):
        self.state = state
        self.crashed = False
        self.fault_mode: FaultKind | None = None
        self.drop_next_send = False
        self.request_counter = 0
        self.upgrade_logged = False


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.rng = random.Random(scenario.seed)
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self.log: list[str] = []
        self.hostnet = HostnetLedger()
        self.nodes: dict[str, _SimNode] = {}
        self.votes: dict[tuple, VoteRecord] = {}
        self.evidence: list[ring.SlashingEvidence] = []
        self._delivered: set[int] = set()
        self._delivery_seq = 0
        self._vote_seq = 0
        self._laps = 0
        self._lap_started_at = 0
        self._last_drop_at: int | None = None
        self._stopped = False
        self._epoch = 0
        self._round_setup: blind.RoundSetup | None = None
        self._bundles: dict[str, blind.KeyShareBundle] = {}
        self._collected_groups: set[tuple] = set()
        self._nonce_counter = 0

    # -- plumbing ---------------------------------------------------------------

    def _emit(self, node: str, kind: str, payload: str):
        self.log.append(f"{self.now}|{node}|{kind}|{payload}")

    def _schedule(self, delay: int, kind: str, **data):
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, kind, data))

    def _ring(self) -> tuple[str, ...]:
        return self.hostnet.view(self.sc.subnet_id).nodelist

    def _key_lookup(self, node_id: str):
        return self.hostnet.view(self.sc.subnet_id).node_keys.get(node_id)

    def _successor_of(self, node_id: str, old_list: tuple[str, ...],
                      new_list: tuple[str, ...]) -> str:
        # a just-rotated-out holder hands over by its old slot position
        reference = new_list if node_id in new_list else old_list
        idx = reference.index(node_id)
        return new_list[(idx + 1) % len(new_list)]

    def _head(self, nodelist: tuple[str, ...]) -> str:
        for node_id in nodelist:
            if not self.nodes[node_id].crashed:
                return node_id
        raise InvariantBreach("every member crashed")

    # -- setup -------------------------------------------------------------------

    def _setup(self):
        sc = self.sc
        binary = KvStateMachine.binary(1)
        digest = hashlib.sha256(binary).hexdigest()
        self.hostnet.register_subnet(sc.subnet_id, sc.launch_threshold, binary, digest)
        self._emit("hostnet", "register", f"subnet={sc.subnet_id}")
        for node_id in sc.nodes + sc.candidates:
            key = ring.derive_node_key(sc.seed, node_id)
            status = self.hostnet.join_subnet(node_id, sc.subnet_id, key)
            self._emit(node_id, "join", f"status={status.value}")
        nodelist = self._ring()
        self._emit("hostnet", "launch", f"nodelist={'+'.join(nodelist)}")
        for node_id in sc.nodes + sc.candidates:
            signer = ring.NodeSigner(node_id, ring.derive_node_key(sc.seed, node_id))
            self.nodes[node_id] = _SimNode(ring.NodeState(node_id, signer, binary))
        self._setup_epoch_crypto(nodelist, first=True)
        for fault in sc.faults:
            self._schedule(fault.time, "fault", node=fault.node, fault_kind=fault.kind)
        head = self._head(nodelist)
        self._emit(head, "genesis", "token=empty")
        self._process_token(head, ring.Token(()))

    def _setup_epoch_crypto(self, nodelist: tuple[str, ...], first: bool):
        n = len(nodelist)
        t = min(self.sc.vote_threshold, n)
        if first:
            setup = blind.setup_round(n, t, self.sc.fhe, self.rng)
            self._round_setup = setup
            self._bundles = dict(zip(nodelist, setup.aggregation_shares))
            self._emit("subnet", "keyshare", f"n={n},t={t}")
            return
        old_policy = self._round_setup.policy
        new_policy = SharingPolicy(n=n, t=t)
        new_bundles = blind.reshare_key_bundles(
            list(self._bundles.values()), old_policy, new_policy, self.rng)
        self._bundles = dict(zip(nodelist, new_bundles))
        self._round_setup = blind.RoundSetup(
            params=self.sc.fhe, policy=new_policy, players=self._round_setup.players,
            aggregation_keys=self._round_setup.aggregation_keys,
            aggregation_shares=tuple(new_bundles))
        rebuilt = blind.reconstruct_secret_key(new_bundles[:t], new_policy, self.sc.fhe)
        if rebuilt != self._round_setup.aggregation_keys.secret_key:
            raise InvariantBreach("resharing lost the aggregation key")
        self._emit("subnet", "reshare", f"n={n},t={t}")

    # -- main loop ----------------------------------------------------------------

    def run(self) -> RunResult:
        self._setup()
        while self._heap and not self._stopped:
            time, _, kind, data = heapq.heappop(self._heap)
            if self.sc.duration and time > self.sc.duration:
                break
            self.now = time
            if kind == "deliver":
                self._on_deliver(**data)
            elif kind == "ack_check":
                self._on_ack_check(**data)
            elif kind == "timer":
                self._on_timer(**data)
            elif kind == "fault":
                self._on_fault(**data)
            elif kind == "broadcast":
                self._on_broadcast(**data)
            else:  # pragma: no cover
                raise InvariantBreach(f"unknown event kind {kind!r}")
        metrics = Metrics.from_log(self.log)
        return RunResult(metrics=metrics, log=self.log, hostnet=self.hostnet,
                         nodes={k: v.state for k, v in self.nodes.items()},
                         votes=sorted(self.votes.values(), key=lambda r: r.seq),
                         evidence=self.evidence)

    # -- sending ---------------------------------------------------------------------

    def _send_token(self, sender: str, recipient: str, token: ring.Token,
                    copy: bool = False):
        node = self.nodes[sender]
        cls = ring.TokenCopyResend if copy else ring.TokenDelivery
        message = cls(sender=sender, recipient=recipient, token=token)
        payload = message.encode()
        digest = hashlib.sha256(payload).hexdigest()[:12]
        if node.drop_next_send and not copy:
            node.drop_next_send = False
            self._last_drop_at = self.now
            self._emit(sender, "drop", f"to={recipient},msg={digest}")
            return
        self._delivery_seq += 1
        delivery_id = self._delivery_seq
        delay = self.rng.randint(self.sc.delay_min, self.sc.delay_max)
        self._emit(sender, "send", f"to={recipient},msg={digest},copy={int(copy)}")
        self._schedule(delay, "deliver", payload=payload, delivery_id=delivery_id)
        if not copy:
            self._schedule(self.sc.epsilon, "ack_check", sender=sender,
                           recipient=recipient, delivery_id=delivery_id)

    def _broadcast_group(self, sender: str, group: ring.Group,
                         nodelist: tuple[str, ...]):
        payload = ring.GroupBroadcast(sender=sender, group=group).encode()
        for other in nodelist:
            if other == sender:
                continue
            delay = self.rng.randint(self.sc.delay_min, self.sc.delay_max)
            self._schedule(delay, "broadcast", payload=payload, recipient=other)

    # -- event handlers -----------------------------------------------------------------

    def _on_deliver(self, payload: bytes, delivery_id: int):
        message = ring.decode_message(payload)
        recipient = message.recipient
        node = self.nodes[recipient]
        if node.crashed:
            return  # no processing, no acknowledgment
        self._delivered.add(delivery_id)
        self._process_token(recipient, message.token,
                            is_resend=isinstance(message, ring.TokenCopyResend))

    def _on_ack_check(self, sender: str, recipient: str, delivery_id: int):
        if delivery_id in self._delivered or self.nodes[sender].crashed:
            return
        sim_node = self.nodes[sender]
        token = sim_node.state.last_sent_token
        if token is None:
            return
        nodelist = self._ring()
        if sender not in nodelist or recipient not in nodelist:
            return
        idx = nodelist.index(sender)
        next_next = nodelist[(idx + 2) % len(nodelist)]
        if next_next == sender:
            return
        # skip the silent successor; its group falls off the token
        pruned = ring.Token(tuple(g for g in token.groups
                                  if g.composer != recipient))
        sim_node.state.last_sent_token = pruned
        self._emit(sender, "skip", f"offline={recipient},to={next_next}")
        self._send_token(sender, next_next, pruned)

    def _on_timer(self, node_id: str):
        sim_node = self.nodes[node_id]
        if sim_node.crashed:
            return
        nodelist = self._ring()
        if node_id not in nodelist:
            return
        token = sim_node.state.recovery_tick(self.now, len(nodelist), self.sc.epsilon)
        if token is None:
            return
        successor = self._successor_of(node_id, nodelist, nodelist)
        self._emit(node_id, "resend", f"to={successor}")
        self._send_token(node_id, successor, token, copy=True)
        self._schedule(sim_node.state.recovery_deadline - self.now,
                       "timer", node_id=node_id)

    def _on_fault(self, node: str, fault_kind: FaultKind):
        sim_node = self.nodes[node]
        if fault_kind is FaultKind.CRASH:
            sim_node.crashed = True
            self._emit(node, "crash", "state=down")
        elif fault_kind is FaultKind.RECOVER:
            sim_node.crashed = False
            self._emit(node, "recover", "state=up")
            self._sync_ledger(node)
        elif fault_kind is FaultKind.DROP_TOKEN:
            sim_node.drop_next_send = True
            self._emit(node, "armdrop", "next_send=1")
        else:
            sim_node.fault_mode = fault_kind
            self._emit(node, "armfault", f"kind={fault_kind.value}")

    def _on_broadcast(self, payload: bytes, recipient: str):
        if self.nodes[recipient].crashed:
            return
        message = ring.decode_message(payload)
        state = self.nodes[recipient].state
        evidence = state.conflict_evidence(message.group)
        if evidence is not None:
            self._register_evidence(recipient, evidence)
        status = state.broadcast_precommit(message.group, self._key_lookup)
        self._emit(recipient, "precommit", f"from={message.sender},status={status}")
        state.retry_deferred(self._key_lookup)

    # -- token processing --------------------------------------------------------------

    def _process_token(self, node_id: str, token: ring.Token, is_resend: bool = False):
        sim_node = self.nodes[node_id]
        state = sim_node.state
        entry_list = self._ring()
        if node_id not in entry_list:
            return
        if is_resend:
            # recovery copies are recognisable: all their events are already
            # handled; only a copy carrying news re-animates the ring
            if state.is_copy(token):
                self._emit(node_id, "copy", f"max={token.max_event_id}")
                return
            if self._last_drop_at is not None:
                latency = self.now - self._last_drop_at
                self._emit(node_id, "recovered", f"latency={latency}")
                self._last_drop_at = None
        state.note_live_token()

        own = state.own_group(token)
        if own is not None:
            self._emit(node_id, "qret", f"q={own.q}")
            if node_id == self._head(entry_list):
                self._complete_lap(entry_list)
                if self._stopped:
                    return
        nodelist = self._ring()
        if node_id not in nodelist:
            # rotated out while holding: execute, drop our stale group, and
            # hand the write lock to whoever occupies the ring now
            out = state.execute_and_release(token, nodelist)
            successor = self._successor_of(node_id, entry_list, nodelist)
            self._emit(node_id, "handover", f"to={successor}")
            self._send_token(node_id, successor, out)
            return

        self._collect_ballots(token)

        for _ in range(self.sc.requests_per_round):
            sim_node.request_counter += 1
            state.enqueue_request(
                f"put k_{node_id}_{sim_node.request_counter} r{self._laps}".encode())

        view = self.hostnet.view(self.sc.subnet_id)
        if state.process_upgrade(view.functions, token):
            self._emit(node_id, "upgradequeued", f"version={max(view.functions)}")

        report = state.validate_token(token, nodelist, self._key_lookup)
        if any(v.rule == "behind" for v in report.violations) and not is_resend:
            # the live token moved past our ledger (fresh joiner or long
            # outage): resync from the most advanced live peer and re-audit
            self._sync_ledger(node_id)
            report = state.validate_token(token, nodelist, self._key_lookup)
        for violation in report.violations:
            self._emit(node_id, "violation",
                       f"rule={violation.rule},composer={violation.composer or '-'}")
        for evidence in report.evidence:
            self._register_evidence(node_id, evidence)

        if not report.valid and is_resend or \
                any(v.rule == "behind" for v in report.violations):
            # a copy carrying claims that do not validate, or a live token we
            # still cannot audit, is never acted on; archive the signed
            # claims for later conflict pairing
            for group in token.groups:
                evidence = state.conflict_evidence(group)
                if evidence is not None:
                    self._register_evidence(node_id, evidence)
            return

        if report.valid:
            out = state.apply_and_advance(token, nodelist)
        else:
            out = state.handle_conflict(token, report, nodelist)
        self._emit(node_id, "advance",
                   f"digest={state.ledger.state_digest()[:12]},max={state.ledger.max_event_id}")
        if state.ledger.active_version > 1 and not sim_node.upgrade_logged:
            sim_node.upgrade_logged = True
            self._emit(node_id, "upgradeapplied",
                       f"version={state.ledger.active_version}")

        out = self._apply_compose_faults(sim_node, out, nodelist)
        self._collect_ballots(out)

        successor = self._successor_of(node_id, entry_list, nodelist)
        self._send_token(node_id, successor, out)
        if self.sc.broadcast and out.groups:
            self._broadcast_group(node_id, out.groups[-1], nodelist)
        deadline = state.arm_recovery(self.now, len(nodelist), self.sc.epsilon)
        self._schedule(deadline - self.now, "timer", node_id=node_id)

    def _apply_compose_faults(self, sim_node: _SimNode, out: ring.Token,
                              nodelist: tuple[str, ...]) -> ring.Token:
        mode = sim_node.fault_mode
        if mode is None or not out.groups:
            return out
        state = sim_node.state
        own = out.groups[-1]
        if mode is FaultKind.TAMPER_GROUP:
            target = self._own_past_event(state)
            if target is None:
                return out  # nothing signed yet; stay armed for the next lap
            sim_node.fault_mode = None
            # the lie lives on the wire only: the node undoes its own compose
            # locally so it stays on the honest chain while sending a group
            # that rewrites an event it signed earlier
            self._undo_own_compose(state, own)
            forged_event = ring.Event(target.event_id, EventKind.MODIFICATION,
                                      b"put forged 666")
            forged = ring.make_group(state.signer, (forged_event,),
                                     own.post_state_digest, q=len(nodelist) - 1,
                                     nonce=own.nonce)
            self._emit(state.node_id, "tamper", f"event={target.event_id}")
            return ring.Token(out.groups[:-1] + (forged,))
        if mode in (FaultKind.DOUBLE_SIGN, FaultKind.EQUIVOCATE):
            if not own.events:
                return out  # wait for a lap where we actually composed events
            sim_node.fault_mode = None
            variant_events = tuple(
                ring.Event(e.event_id, e.kind, e.payload + b" forged")
                for e in own.events)
            variant = ring.make_group(state.signer, variant_events,
                                      "0" * 64, own.q, own.nonce)
            if mode is FaultKind.DOUBLE_SIGN:
                self._emit(state.node_id, "doublesign", f"nonce={own.nonce}")
                self._broadcast_group(state.node_id, variant, nodelist)
            else:
                predecessor = nodelist[(nodelist.index(state.node_id) - 1)
                                       % len(nodelist)]
                self._emit(state.node_id, "equivocate", f"to={predecessor}")
                self._send_token(state.node_id, predecessor,
                                 ring.Token((variant,)), copy=True)
        return out

    def _undo_own_compose(self, state: ring.NodeState, own: ring.Group):
        """Rewind a node's ledger to before its own freshly composed group."""
        if not own.events:
            state.pending_votes = list(own.encrypted_votes) + state.pending_votes
            return
        keep = len(state.ledger.events) - len(own.events)
        rebuilt = type(state.ledger)()
        for event in state.ledger.events[:keep]:
            rebuilt.apply(event)
        state.ledger = rebuilt
        for event in reversed(own.events):
            state.event_origin.pop(event.event_id, None)
            state.pending.appendleft((event.kind, event.payload))
        state.pending_votes = list(own.encrypted_votes) + state.pending_votes

    def _own_past_event(self, state: ring.NodeState):
        for event_id in range(state.ledger.max_event_id, 0, -1):
            event = state.ledger.event(event_id)
            origin = state.event_origin.get(event_id)
            if origin is not None and origin.composer == state.node_id and \
                    event.kind is EventKind.MODIFICATION:
                return event
        return None

    # -- laps, epochs, rotation -----------------------------------------------------------

    def _complete_lap(self, nodelist: tuple[str, ...]):
        self._laps += 1
        latency = self.now - self._lap_started_at
        self._lap_started_at = self.now
        self._emit("subnet", "round", f"n={self._laps},latency={latency}")
        self._checkpoint(nodelist)
        self._anchor(nodelist)
        for upgrade in self.sc.upgrades:
            if upgrade.round == self._laps:
                binary = KvStateMachine.binary(upgrade.version)
                self.hostnet.register_function(
                    self.sc.subnet_id, binary,
                    hashlib.sha256(binary).hexdigest(), upgrade.version)
                self._emit("hostnet", "upgrade", f"version={upgrade.version}")
        if self.sc.rounds and self._laps >= self.sc.rounds:
            self._stopped = True
            return
        if self._laps % self.sc.epoch_length == 0:
            self._close_votes(nodelist)
            self._rotate(nodelist)

    def _checkpoint(self, nodelist: tuple[str, ...]):
        live = [n for n in nodelist if not self.nodes[n].crashed]
        common = min(self.nodes[n].state.ledger.max_event_id for n in live)
        digests = set()
        for node_id in live:
            ledger = self.nodes[node_id].state.ledger
            clone = type(ledger)()
            for event in ledger.events[:common + 1]:
                clone.apply(event)
            digests.add(clone.state_digest())
        agree = int(len(digests) == 1)
        self._emit("subnet", "checkpoint",
                   f"agree={agree},upto={common},digest={sorted(digests)[0][:12]}")
        if not agree:
            raise InvariantBreach(f"state digests diverged at common event {common}")

    def _anchor(self, nodelist: tuple[str, ...]):
        head = self._head(nodelist)
        ledger = self.nodes[head].state.ledger
        accepted = self.hostnet.anchor_root(self.sc.subnet_id, ledger.state_digest(),
                                            ledger.max_event_id)
        self._emit(head, "anchor",
                   f"accepted={int(accepted)},event={ledger.max_event_id}")

    def _rotate(self, nodelist: tuple[str, ...]):
        view = self.hostnet.view(self.sc.subnet_id)
        self._epoch += 1
        if self.sc.rotation_count > 0 and view.candidate_pool:
            seed = hashlib.sha256(f"epoch|{self.sc.seed}|{self._epoch}".encode()).digest()
            result = ring.rotate_members(nodelist, view.candidate_pool, seed,
                                         self.sc.rotation_count)
            if result.rotated_out:
                self.hostnet.update_nodelist(self.sc.subnet_id, result.nodelist,
                                             returned_to_pool=result.rotated_out,
                                             removed_from_pool=result.rotated_in)
                for joiner in result.rotated_in:
                    self._sync_ledger(joiner)
                head = self._head(result.nodelist)
                self.nodes[head].state.enqueue_member_change(result.nodelist)
                self._emit("subnet", "rotation",
                           f"epoch={self._epoch},out={'+'.join(result.rotated_out)},"
                           f"in={'+'.join(result.rotated_in)}")
        self._setup_epoch_crypto(self._ring(), first=False)

    def _sync_ledger(self, node_id: str):
        """Desk-scale state transfer: joiners and recovered nodes copy a live peer."""
        nodelist = self._ring()
        donors = [n for n in nodelist if not self.nodes[n].crashed and n != node_id]
        if not donors:
            return
        donors.sort(key=lambda n: (-self.nodes[n].state.ledger.max_event_id,
                                   nodelist.index(n)))
        donor = self.nodes[donors[0]].state.ledger
        target = self.nodes[node_id].state
        if target.ledger.max_event_id < donor.max_event_id:
            target.ledger = donor.clone()
            target.confirmed_max = donor.max_event_id
            self._emit(node_id, "sync", f"from={donors[0]},max={donor.max_event_id}")

    # -- slashing votes ----------------------------------------------------------------

    def _register_evidence(self, reporter: str, evidence: ring.SlashingEvidence):
        key = evidence.dedup_key
        if key in self.votes:
            return
        if not ring.verify_evidence(evidence, self._key_lookup):
            raise InvariantBreach("collected evidence does not verify")
        self.evidence.append(evidence)
        self._emit(reporter, "evidence",
                   f"offender={evidence.offender},range={evidence.event_range[0]}"
                   f"-{evidence.event_range[1]}")
        self._vote_seq += 1
        record = VoteRecord(key=key, seq=self._vote_seq, offender=evidence.offender,
                            opened_at=self.now, evidence=evidence)
        self.votes[key] = record
        self._emit("subnet", "voteopen", f"offender={evidence.offender}")
        nodelist = self._ring()
        for node_id in nodelist:
            if self.nodes[node_id].crashed:
                continue
            if node_id == evidence.offender:
                ballot_bit = 0  # the offender defends itself
            else:
                ballot_bit = int(ring.verify_evidence(evidence, self._key_lookup))
            self._nonce_counter += 1
            strategy = blind.encrypt_strategy(
                self._round_setup, nodelist.index(node_id) + 1, ballot_bit,
                self.rng, nonce=self._nonce_counter)
            record.balloted.add(node_id)
            self.nodes[node_id].state.attach_vote(strategy.ciphertext)
            self._emit(node_id, "ballot", f"offender={evidence.offender}")

    def _collect_ballots(self, token: ring.Token):
        """Register ballots as they physically ride past inside the token."""
        for group in token.groups:
            if not group.encrypted_votes:
                continue
            key = (group.composer, group.nonce)
            if key in self._collected_groups:
                continue
            self._collected_groups.add(key)
            open_votes = sorted(
                (r for r in self.votes.values()
                 if group.composer in r.balloted and group.composer not in r.collected
                 and r.tally is None),
                key=lambda r: r.seq)
            for ct, record in zip(group.encrypted_votes, open_votes):
                record.collected[group.composer] = ct

    def _close_votes(self, nodelist: tuple[str, ...]):
        live = [n for n in nodelist if not self.nodes[n].crashed]
        for record in sorted(self.votes.values(), key=lambda r: r.seq):
            if record.tally is not None:
                continue
            needed = [n for n in record.balloted
                      if n in self.nodes and not self.nodes[n].crashed]
            if not needed or not all(n in record.collected for n in needed):
                continue
            strategies = [
                blind.EncryptedStrategy(player_id=i + 1, ciphertext=ct, nonce=0)
                for i, (voter, ct) in enumerate(sorted(record.collected.items()))]
            tally_ct = blind.homomorphic_tally(strategies)
            policy = self._round_setup.policy
            bundles = list(self._bundles.values())[:policy.t]
            plain, transcript = blind.threshold_decrypt(tally_ct, bundles,
                                                        policy, self.sc.fhe)
            if not blind.verify_transcript(transcript, tally_ct, bundles,
                                           policy, self.sc.fhe):
                raise InvariantBreach("threshold decryption transcript failed")
            record.tally = decode_int(plain)
            record.transcript = transcript
            voters = len(record.collected)
            params = self.sc.voting_params
            record.passed = Fraction(record.tally, voters) > params.theta_top
            self._emit("subnet", "voteclose",
                       f"offender={record.offender},tally={record.tally},"
                       f"voters={voters},passed={int(record.passed)}")


def run(scenario: Scenario) -> RunResult:
    """Execute one scenario end to end."""
    return Simulation(scenario).run()
