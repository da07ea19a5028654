"""Token-ring subnet protocol: groups, tokens, validation, advancement.

A token is the subnet's circulating write lock; it carries one event group
per member.  Receiving a token, a node checks every group's signature,
replays the new events against its own ledger, decrements the hop counter
of each group it executes, replaces its previous group with a freshly
composed one (hop counter n-1) at the token's tail, and forwards it.

Signatures are a deterministic keyed MAC with per-node keys registered on
the hostnet; attribution only needs unforgeability against the other desk
participants, and a real digital signature slots in unchanged.

Conflicting signed content from one key over overlapping event ids is
slashing evidence.  Nonces strictly increase per node, so reusing one on
different content is itself conflicting signed content.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from collections import deque
from dataclasses import dataclass, field, replace

from . import wire
from .fhe import Ciphertext
from .ledger import Event, EventKind, KvStateMachine, LedgerError, SubnetLedger
from .voting import VotingGameParams


class ProtocolError(Exception):
    """Token handling cannot proceed (misuse, not a peer fault)."""


# --- signatures -------------------------------------------------------------

class NodeSigner:
    """Keyed-MAC signer; the hostnet registry maps node id -> key."""

    def __init__(self, node_id: str, key: bytes):
        self.node_id = node_id
        self._key = key

    def sign(self, message: bytes) -> bytes:
        return hmac.new(self._key, message, hashlib.sha256).digest()


def verify_signature(key: bytes, message: bytes, signature: bytes) -> bool:
    return hmac.compare_digest(
        hmac.new(key, message, hashlib.sha256).digest(), signature)


def derive_node_key(seed: int, node_id: str) -> bytes:
    return hashlib.sha256(f"nodekey|{seed}|{node_id}".encode()).digest()


# --- groups and tokens --------------------------------------------------------

@dataclass(frozen=True)
class Group:
    """One member's batch: events, post-state digest, signature, nonce, hops.

    ``q`` starts at n-1 and is decremented by every executing receiver;
    back at the composer it must have reached zero (negative values mean
    members joined mid-circulation).
    """

    composer: str
    events: tuple[Event, ...]
    post_state_digest: str
    signature: bytes
    nonce: int
    q: int
    encrypted_votes: tuple[Ciphertext, ...] = ()

    def __post_init__(self):
        ids = [e.event_id for e in self.events]
        if any(b != a + 1 for a, b in zip(ids, ids[1:])):
            raise ValueError("group events must carry consecutive ids")

    @property
    def min_event_id(self) -> int | None:
        return self.events[0].event_id if self.events else None

    @property
    def max_event_id(self) -> int | None:
        return self.events[-1].event_id if self.events else None


def group_signing_bytes(composer: str, nonce: int, events: tuple[Event, ...],
                        post_state_digest: str) -> bytes:
    parts = [wire.encode_str(composer), wire.encode_uint(nonce, 8),
             wire.encode_uint(len(events), 4)]
    for event in events:
        parts.append(wire.encode_uint(event.event_id, 8))
        parts.append(bytes([event.kind.value]))
        parts.append(wire.encode_bytes(event.payload))
    parts.append(wire.encode_str(post_state_digest))
    return b"".join(parts)


def make_group(signer: NodeSigner, events: tuple[Event, ...], post_state_digest: str,
               q: int, nonce: int, votes: tuple[Ciphertext, ...] = ()) -> Group:
    signature = signer.sign(group_signing_bytes(signer.node_id, nonce, events,
                                                post_state_digest))
    return Group(composer=signer.node_id, events=events,
                 post_state_digest=post_state_digest, signature=signature,
                 nonce=nonce, q=q, encrypted_votes=votes)


def verify_group(group: Group, key: bytes) -> bool:
    return verify_signature(
        key, group_signing_bytes(group.composer, group.nonce, group.events,
                                 group.post_state_digest), group.signature)


@dataclass(frozen=True)
class Token:
    groups: tuple[Group, ...]

    @property
    def max_event_id(self) -> int:
        ids = [g.max_event_id for g in self.groups if g.events]
        return max(ids) if ids else -1


@dataclass(frozen=True)
class SubnetConfig:
    """Static subnet parameters; membership itself lives on the hostnet."""

    subnet_id: str
    nodelist: tuple[str, ...]
    epsilon: int
    epoch_length: int = 10
    rotation_count: int = 0
    threshold: int = 0
    vote_threshold: int = 0
    voting: VotingGameParams | None = None

    def __post_init__(self):
        if len(self.nodelist) < 3:
            raise ValueError("a subnet needs at least 3 members")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.threshold == 0:
            object.__setattr__(self, "threshold", len(self.nodelist))
        if self.vote_threshold == 0:
            object.__setattr__(self, "vote_threshold", len(self.nodelist) // 2 + 1)
        if not 2 <= self.vote_threshold <= len(self.nodelist):
            raise ValueError("vote threshold must satisfy 2 <= t <= n")


# --- violations and evidence ---------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str            # "q" | "signature" | "continuity" | "digest" | "conflict"
    composer: str | None
    detail: str


@dataclass(frozen=True)
class SlashingEvidence:
    """Two verifying groups from one key with conflicting overlapping content."""

    offender: str
    group_a: Group
    group_b: Group
    event_range: tuple[int, int]

    @property
    def dedup_key(self) -> tuple:
        return (self.offender, self.event_range)


def _ranges_overlap(a: Group, b: Group) -> tuple[int, int] | None:
    if not a.events or not b.events:
        return (a.nonce, b.nonce) if a.nonce == b.nonce else None
    lo = max(a.min_event_id, b.min_event_id)
    hi = min(a.max_event_id, b.max_event_id)
    if lo > hi and a.nonce != b.nonce:
        return None
    return (lo, hi) if lo <= hi else (a.min_event_id, a.max_event_id)


def make_evidence(original: Group, conflicting: Group) -> SlashingEvidence | None:
    """Pair two groups into evidence, or None if they do not convict one key."""
    if original.composer != conflicting.composer:
        return None
    if group_signing_bytes(original.composer, original.nonce, original.events,
                           original.post_state_digest) == \
       group_signing_bytes(conflicting.composer, conflicting.nonce,
                           conflicting.events, conflicting.post_state_digest):
        return None  # same content, nothing conflicting
    overlap = _ranges_overlap(original, conflicting)
    if overlap is None:
        return None
    return SlashingEvidence(offender=original.composer, group_a=original,
                            group_b=conflicting, event_range=overlap)


def verify_evidence(evidence: SlashingEvidence, key_lookup) -> bool:
    """Both signatures verify under the offender's registered key and conflict."""
    key = key_lookup(evidence.offender)
    if key is None:
        return False
    if evidence.group_a.composer != evidence.offender or \
       evidence.group_b.composer != evidence.offender:
        return False
    if not (verify_group(evidence.group_a, key) and verify_group(evidence.group_b, key)):
        return False
    return make_evidence(evidence.group_a, evidence.group_b) is not None


# --- node state ------------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    evidence: list[SlashingEvidence] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


class NodeState:
    """Single-owner protocol state of one subnet member."""

    def __init__(self, node_id: str, signer: NodeSigner, genesis_binary: bytes):
        self.node_id = node_id
        self.signer = signer
        self.ledger = SubnetLedger.genesis(genesis_binary)
        self.pending: deque[tuple[EventKind, bytes]] = deque()
        self.pending_votes: list[Ciphertext] = []
        self.last_seen_token: Token | None = None
        self.last_sent_token: Token | None = None
        self.nonce = 0
        self.last_compose_size: int | None = None
        # groups already executed (and hop-decremented) by this node
        self._seen_groups: set[tuple[str, int]] = set()
        # event id -> the signed group that carried it when we applied it
        self.event_origin: dict[int, Group] = {}
        # composer -> {nonce: signing bytes} for nonce-reuse detection
        self._nonce_archive: dict[str, dict[int, Group]] = {}
        self.deferred_broadcasts: list[Group] = []
        # highest event id confirmed through the token path; broadcast
        # precommits stay speculative until a token covers them
        self.confirmed_max = 0
        # recovery bookkeeping (driven by the simulator clock)
        self.recovery_deadline: int | None = None
        self.awaiting_return = False

    # -- small queries -------------------------------------------------------

    def own_group(self, token: Token) -> Group | None:
        for group in token.groups:
            if group.composer == self.node_id:
                return group
        return None

    def is_copy(self, token: Token) -> bool:
        """A token whose events we have all handled already is a copy.

        Only token-confirmed events count: the live token must never look
        like a copy just because its events arrived early by broadcast.
        """
        return token.max_event_id <= self.confirmed_max

    def enqueue_request(self, payload: bytes) -> None:
        self.pending.append((EventKind.MODIFICATION, payload))

    def enqueue_member_change(self, nodelist: tuple[str, ...]) -> None:
        self.pending.append((EventKind.MEMBER_CHANGE, ",".join(nodelist).encode()))

    def attach_vote(self, ballot: Ciphertext) -> None:
        self.pending_votes.append(ballot)

    # -- validation ------------------------------------------------------------

    def validate_token(self, token: Token, nodelist: tuple[str, ...],
                       key_lookup) -> ValidationReport:
        """Check hop counters, signatures, continuity, digests, conflicts."""
        report = ValidationReport()
        own = self.own_group(token)
        if own is not None and self.last_compose_size is not None:
            if own.q > 0:
                report.violations.append(Violation(
                    "q", self.node_id,
                    f"own group returned with q={own.q}, members were skipped"))
            elif own.q < 0:
                joiners = len(nodelist) - self.last_compose_size
                if -own.q > joiners:
                    report.violations.append(Violation(
                        "q", self.node_id,
                        f"own group q={own.q} but only {joiners} joiners on the hostnet"))

        bad_signature: set[tuple[str, int]] = set()
        for group in token.groups:
            key = key_lookup(group.composer)
            if key is None or not verify_group(group, key):
                bad_signature.add((group.composer, group.nonce))
                report.violations.append(Violation(
                    "signature", group.composer,
                    f"group nonce={group.nonce} fails signature verification"))

        conflicted = self._detect_conflicts(token, report, bad_signature)
        self._check_continuity(token, own, conflicted, report)
        return report

    def _detect_conflicts(self, token: Token, report: ValidationReport,
                          bad_signature: set) -> set[tuple[str, int]]:
        """Compare overlapping event claims and nonce reuse against history.

        Returns the groups to exclude from the continuity chain: those with
        bad signatures or content contradicting applied history.  A nonce
        reused on different content produces evidence and a violation, but
        the group still competes on content (one of the two versions may be
        the chain-consistent one).
        """
        conflicted = set()
        for group in token.groups:
            gid = (group.composer, group.nonce)
            if gid in bad_signature:
                conflicted.add(gid)
                continue
            # nonce reuse with different content
            archived = self._nonce_archive.get(group.composer, {}).get(group.nonce)
            if archived is not None:
                evidence = make_evidence(archived, group)
                if evidence is not None:
                    report.violations.append(Violation(
                        "conflict", group.composer,
                        f"nonce {group.nonce} reused with different content"))
                    report.evidence.append(evidence)
            # rewriting history we already applied
            for event in group.events:
                if event.event_id > self.ledger.max_event_id:
                    break
                applied = self.ledger.event(event.event_id)
                if applied.payload != event.payload or applied.kind != event.kind:
                    conflicted.add(gid)
                    origin = self.event_origin.get(event.event_id)
                    detail = (f"event {event.event_id} contradicts the applied ledger")
                    report.violations.append(Violation("conflict", group.composer, detail))
                    if origin is not None:
                        evidence = make_evidence(origin, group)
                        if evidence is not None:
                            report.evidence.append(evidence)
                    break
            # remember every signature-valid claim for later conflict pairing
            self._nonce_archive.setdefault(group.composer, {}).setdefault(
                group.nonce, group)
        return conflicted

    def conflict_evidence(self, group: Group) -> SlashingEvidence | None:
        """Check one out-of-band group against everything this node has seen.

        Archives the group (first claim per nonce wins) so a later
        conflicting version from the same key can be paired with it.
        """
        archived = self._nonce_archive.get(group.composer, {}).get(group.nonce)
        evidence = None
        if archived is not None:
            evidence = make_evidence(archived, group)
        if evidence is None:
            for event in group.events:
                if event.event_id > self.ledger.max_event_id:
                    break
                applied = self.ledger.event(event.event_id)
                if applied.payload != event.payload or applied.kind != event.kind:
                    origin = self.event_origin.get(event.event_id)
                    if origin is not None:
                        evidence = make_evidence(origin, group)
                    break
        self._nonce_archive.setdefault(group.composer, {}).setdefault(group.nonce, group)
        return evidence

    def _check_continuity(self, token: Token, own: Group | None,
                          conflicted: set, report: ValidationReport) -> None:
        """New events across the other groups must extend our log gap-free.

        A group whose events jump ahead of the running cursor is flagged
        individually (rule "continuity").  When no group at all supplies our
        next event, we are the stale party and record rule "behind": the
        token cannot be audited from this ledger.
        """
        expected = self.ledger.max_event_id + 1
        relevant = []
        for group in token.groups:
            if own is not None and group is own:
                continue
            if (group.composer, group.nonce) in conflicted:
                continue
            ids = [e.event_id for e in group.events if e.event_id >= expected]
            relevant.append((group, ids))
        progressing = set()
        cursor = expected
        for group, ids in relevant:
            if not ids:
                continue
            if ids[0] == cursor:
                progressing.add((group.composer, group.nonce))
                cursor = ids[-1] + 1
            else:
                report.violations.append(Violation(
                    "continuity", group.composer,
                    f"events {ids[0]}..{ids[-1]} do not continue from {cursor}"))
        if cursor == expected:
            starts = [ids[0] for _, ids in relevant if ids]
            if starts:
                report.violations.append(Violation(
                    "behind", None,
                    f"missing events {expected}..{min(starts) - 1}; "
                    f"token cannot be audited from this ledger"))
            return
        # digests: replay the progressing groups on a scratch ledger
        scratch = self.ledger.clone()
        for group, ids in relevant:
            if (group.composer, group.nonce) not in progressing:
                continue
            try:
                for event in group.events:
                    if event.event_id > scratch.max_event_id:
                        scratch.apply(event)
            except LedgerError as exc:
                report.violations.append(Violation(
                    "digest", group.composer, f"events do not apply: {exc}"))
                return
            if group.events and group.max_event_id == scratch.max_event_id:
                if scratch.state_digest() != group.post_state_digest:
                    report.violations.append(Violation(
                        "digest", group.composer,
                        f"replay digest mismatch after event {group.max_event_id}"))
                    return

    # -- execution -------------------------------------------------------------

    def _execute_group(self, group: Group) -> Group:
        """Apply a group's unapplied events; decrement q on first execution."""
        for event in group.events:
            if event.event_id > self.ledger.max_event_id:
                self.ledger.apply(event)
                self.event_origin[event.event_id] = group
        gid = (group.composer, group.nonce)
        self._nonce_archive.setdefault(group.composer, {})[group.nonce] = group
        if gid in self._seen_groups:
            return group
        self._seen_groups.add(gid)
        return replace(group, q=group.q - 1)

    def _compose(self, nodelist: tuple[str, ...], extra_votes: tuple[Ciphertext, ...]) -> Group:
        events = []
        next_id = self.ledger.max_event_id + 1
        while self.pending:
            kind, payload = self.pending.popleft()
            events.append(Event(next_id, kind, payload))
            next_id += 1
        for event in events:
            self.ledger.apply(event)
        votes = tuple(self.pending_votes) + tuple(extra_votes)
        self.pending_votes = []
        self.nonce += 1
        group = make_group(self.signer, tuple(events), self.ledger.state_digest(),
                           q=len(nodelist) - 1, nonce=self.nonce, votes=votes)
        for event in events:
            self.event_origin[event.event_id] = group
        self._nonce_archive.setdefault(self.node_id, {})[self.nonce] = group
        self._seen_groups.add((self.node_id, self.nonce))
        self.last_compose_size = len(nodelist)
        return group

    def apply_and_advance(self, token: Token, nodelist: tuple[str, ...],
                          votes: tuple[Ciphertext, ...] = ()) -> Token:
        """Execute every foreign group, then swap in a fresh own group at the tail.

        Groups composed by members no longer on the nodelist are executed but
        not carried forward (their composer will never replace them).
        """
        self.last_seen_token = token
        own = self.own_group(token)
        members = set(nodelist)
        carried = []
        for group in token.groups:
            if own is not None and group is own:
                continue
            executed = self._execute_group(group)
            # a departed composer's group still rides until fully circulated
            if group.composer in members or executed.q > 0:
                carried.append(executed)
        out = Token(groups=tuple(carried) + (self._compose(nodelist, votes),))
        self.confirmed_max = self.ledger.max_event_id
        self.last_sent_token = out
        self.awaiting_return = True
        return out

    def execute_and_release(self, token: Token, nodelist: tuple[str, ...]) -> Token:
        """Forward the token without composing: used when our membership ended.

        Executes every foreign group (hop counters included) and removes our
        own stale group; the member replacing us adds theirs when the token
        arrives there.
        """
        self.last_seen_token = token
        own = self.own_group(token)
        members = set(nodelist)
        carried = []
        for group in token.groups:
            if own is not None and group is own:
                continue
            executed = self._execute_group(group)
            if group.composer in members or executed.q > 0:
                carried.append(executed)
        self.confirmed_max = self.ledger.max_event_id
        out = Token(groups=tuple(carried))
        self.last_sent_token = out
        self.awaiting_return = False
        self.recovery_deadline = None
        return out

    def _try_execute(self, group: Group) -> Group | None:
        """Execute a group only if it extends the ledger consistently.

        Returns the hop-decremented group, or None when the group rewrites
        applied history, leaves a gap, fails to apply, or its post-state
        digest contradicts the local replay (everything rolled back).
        """
        for event in group.events:
            if event.event_id > self.ledger.max_event_id:
                break
            applied = self.ledger.event(event.event_id)
            if applied.payload != event.payload or applied.kind != event.kind:
                return None
        unapplied = [e for e in group.events if e.event_id > self.ledger.max_event_id]
        if unapplied and unapplied[0].event_id != self.ledger.max_event_id + 1:
            return None
        snap = self.ledger.snapshot()
        try:
            for event in unapplied:
                self.ledger.apply(event)
        except LedgerError:
            self.ledger.restore(snap)
            return None
        if group.events and group.max_event_id == self.ledger.max_event_id and \
                self.ledger.state_digest() != group.post_state_digest:
            self.ledger.restore(snap)
            return None
        return self._execute_group(group)

    def handle_conflict(self, token: Token, report: ValidationReport,
                        nodelist: tuple[str, ...],
                        votes: tuple[Ciphertext, ...] = ()) -> Token:
        """Advance past misbehaving groups, keeping them aboard as evidence.

        Every group that still replays consistently is executed; the rest
        ride along untouched so later holders see the conflicting signed
        content.  The corrective own group starts from the smallest commonly
        agreed id, i.e. right after our applied prefix.
        """
        self.last_seen_token = token
        own = self.own_group(token)
        members = set(nodelist)
        carried = []
        for group in token.groups:
            if own is not None and group is own:
                continue
            executed = self._try_execute(group)
            if executed is None:
                carried.append(group)  # kept verbatim: it is the evidence
            elif group.composer in members or executed.q > 0:
                carried.append(executed)
        out = Token(groups=tuple(carried) + (self._compose(nodelist, votes),))
        self.confirmed_max = self.ledger.max_event_id
        self.last_sent_token = out
        self.awaiting_return = True
        return out

    # -- broadcast optimization ---------------------------------------------------

    def broadcast_precommit(self, group: Group, key_lookup) -> str:
        """Speculatively apply a broadcast group; token arrival stays authoritative.

        Returns "applied", "deferred" (gap ahead of us), "stale" (all known),
        or "rejected" (bad signature / digest mismatch, rolled back).
        """
        key = key_lookup(group.composer)
        if key is None or not verify_group(group, key):
            return "rejected"
        if not group.events or group.max_event_id <= self.ledger.max_event_id:
            return "stale"
        if group.min_event_id > self.ledger.max_event_id + 1:
            self.deferred_broadcasts.append(group)
            return "deferred"
        snap = self.ledger.snapshot()
        try:
            for event in group.events:
                if event.event_id > self.ledger.max_event_id:
                    self.ledger.apply(event)
        except LedgerError:
            self.ledger.restore(snap)
            return "rejected"
        if self.ledger.state_digest() != group.post_state_digest:
            self.ledger.restore(snap)
            return "rejected"
        for event in group.events:
            self.event_origin.setdefault(event.event_id, group)
        self._nonce_archive.setdefault(group.composer, {})[group.nonce] = group
        return "applied"

    def retry_deferred(self, key_lookup) -> int:
        """Re-offer deferred broadcasts; returns how many got applied."""
        applied = 0
        progress = True
        while progress:
            progress = False
            for group in list(self.deferred_broadcasts):
                if group.max_event_id <= self.ledger.max_event_id:
                    self.deferred_broadcasts.remove(group)
                    continue
                if group.min_event_id <= self.ledger.max_event_id + 1:
                    self.deferred_broadcasts.remove(group)
                    if self.broadcast_precommit(group, key_lookup) == "applied":
                        applied += 1
                        progress = True
        return applied

    # -- upgrades -------------------------------------------------------------------

    def process_upgrade(self, functions: dict[int, tuple[str, bytes]],
                        token: Token | None = None) -> bool:
        """Queue a function-upgrade event if the hostnet holds a newer version.

        ``functions`` maps version -> (digest, binary).  The event enters at
        most once: not when the token, our ledger, or our queue already
        carries the upgrade.  A binary whose digest does not match the
        hostnet record is rejected.
        """
        active = self.ledger.active_version
        newer = [v for v in functions if v > active]
        if not newer:
            return False
        version = max(newer)
        digest, binary = functions[version]
        if hashlib.sha256(binary).hexdigest() != digest:
            raise ProtocolError(f"function v{version} binary does not match its digest")
        marker = KvStateMachine.parse_binary(binary)
        if token is not None:
            for group in token.groups:
                for event in group.events:
                    if event.kind is EventKind.FUNCTION_UPGRADE and \
                       KvStateMachine.parse_binary(event.payload) >= marker:
                        return False
        for kind, payload in self.pending:
            if kind is EventKind.FUNCTION_UPGRADE and \
               KvStateMachine.parse_binary(payload) >= marker:
                return False
        self.pending.appendleft((EventKind.FUNCTION_UPGRADE, binary))
        return True

    # -- token recovery -------------------------------------------------------------

    def arm_recovery(self, now: int, ring_size: int, epsilon: int) -> int:
        """Start the countdown after delivering the token; returns the deadline."""
        self.recovery_deadline = now + ring_size * epsilon
        return self.recovery_deadline

    def note_live_token(self) -> None:
        self.awaiting_return = False

    def recovery_tick(self, now: int, ring_size: int, epsilon: int) -> Token | None:
        """Resend our retained copy if the token has not come back in time.

        The copy is re-dispatched in the form we addressed to our successor,
        which carries the same information as the received copy plus our own
        group.  Nodes that never held the token have nothing to resend.
        """
        if self.recovery_deadline is None or now < self.recovery_deadline:
            return None
        if not self.awaiting_return or self.last_sent_token is None:
            self.recovery_deadline = None
            return None
        self.recovery_deadline = now + ring_size * epsilon
        return self.last_sent_token


# --- member rotation ----------------------------------------------------------------

@dataclass(frozen=True)
class RotationResult:
    nodelist: tuple[str, ...]
    rotated_out: tuple[str, ...]
    rotated_in: tuple[str, ...]
    shortfall: int


def rotation_score(epoch_seed: bytes, tag: str, member: str) -> bytes:
    return hashlib.sha256(epoch_seed + b"|" + tag.encode() + b"|" + member.encode()).digest()


def rotate_members(nodelist: tuple[str, ...], candidate_pool: tuple[str, ...],
                   epoch_seed: bytes, rotation_count: int) -> RotationResult:
    """Swap the lowest-scoring members for the lowest-scoring candidates.

    Scores are keyed hashes of (seed, member), so any party can recompute
    the selection from the published seed.  A pool smaller than the
    rotation count rotates as many as available.
    """
    if rotation_count <= 0 or not candidate_pool:
        return RotationResult(nodelist, (), (), max(rotation_count, 0))
    count = min(rotation_count, len(candidate_pool))
    shortfall = rotation_count - count
    outgoing = tuple(sorted(nodelist,
                            key=lambda m: rotation_score(epoch_seed, "out", m))[:count])
    incoming = tuple(sorted(candidate_pool,
                            key=lambda m: rotation_score(epoch_seed, "in", m))[:count])
    replacements = iter(incoming)
    out_set = set(outgoing)
    new_list = tuple(next(replacements) if member in out_set else member
                     for member in nodelist)
    return RotationResult(new_list, outgoing, incoming, shortfall)


# --- wire messages --------------------------------------------------------------------

def _encode_event(event: Event) -> bytes:
    return (wire.encode_uint(event.event_id, 8) + bytes([event.kind.value])
            + wire.encode_bytes(event.payload))


def _decode_event(reader: wire.Reader) -> Event:
    return Event(reader.u64(), EventKind(reader.u8()), reader.lp_bytes())


def _encode_group(group: Group) -> bytes:
    parts = [wire.encode_str(group.composer),
             wire.encode_uint(len(group.events), 4)]
    parts.extend(_encode_event(e) for e in group.events)
    parts.append(wire.encode_str(group.post_state_digest))
    parts.append(wire.encode_bytes(group.signature))
    parts.append(wire.encode_uint(group.nonce, 8))
    parts.append(struct.pack("<q", group.q))
    parts.append(wire.encode_uint(len(group.encrypted_votes), 4))
    parts.extend(wire.encode_bytes(wire.encode_ciphertext(ct))
                 for ct in group.encrypted_votes)
    return b"".join(parts)


def _decode_group(reader: wire.Reader) -> Group:
    composer = reader.lp_str()
    events = tuple(_decode_event(reader) for _ in range(reader.u32()))
    digest = reader.lp_str()
    signature = reader.lp_bytes()
    nonce = reader.u64()
    q = struct.unpack("<q", reader.take(8))[0]
    votes = tuple(wire.decode_blob(reader.lp_bytes()) for _ in range(reader.u32()))
    return Group(composer=composer, events=events, post_state_digest=digest,
                 signature=signature, nonce=nonce, q=q, encrypted_votes=votes)


def encode_token(token: Token) -> bytes:
    return wire.encode_uint(len(token.groups), 4) + b"".join(
        _encode_group(g) for g in token.groups)


def decode_token(reader: wire.Reader) -> Token:
    return Token(groups=tuple(_decode_group(reader) for _ in range(reader.u32())))


@dataclass(frozen=True)
class TokenDelivery:
    sender: str
    recipient: str
    token: Token

    KIND = wire.KIND_TOKEN_DELIVERY

    def encode(self) -> bytes:
        return wire.frame(self.KIND, wire.encode_str(self.sender)
                          + wire.encode_str(self.recipient) + encode_token(self.token))


@dataclass(frozen=True)
class TokenCopyResend:
    sender: str
    recipient: str
    token: Token

    KIND = wire.KIND_TOKEN_COPY_RESEND

    def encode(self) -> bytes:
        return wire.frame(self.KIND, wire.encode_str(self.sender)
                          + wire.encode_str(self.recipient) + encode_token(self.token))


@dataclass(frozen=True)
class GroupBroadcast:
    sender: str
    group: Group

    KIND = wire.KIND_GROUP_BROADCAST

    def encode(self) -> bytes:
        return wire.frame(self.KIND, wire.encode_str(self.sender)
                          + _encode_group(self.group))


def decode_message(data: bytes):
    kind, reader = unframe_checked(data)
    if kind in (wire.KIND_TOKEN_DELIVERY, wire.KIND_TOKEN_COPY_RESEND):
        sender = reader.lp_str()
        recipient = reader.lp_str()
        token = decode_token(reader)
        cls = TokenDelivery if kind == wire.KIND_TOKEN_DELIVERY else TokenCopyResend
        message = cls(sender=sender, recipient=recipient, token=token)
    elif kind == wire.KIND_GROUP_BROADCAST:
        message = GroupBroadcast(sender=reader.lp_str(), group=_decode_group(reader))
    else:
        raise wire.WireError(f"unknown message kind {kind:#x}")
    if not reader.done():
        raise wire.WireError("trailing bytes after message")
    return message


def unframe_checked(data: bytes) -> tuple[int, wire.Reader]:
    return wire.unframe(data)
