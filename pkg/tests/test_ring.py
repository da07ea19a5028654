import random

import pytest

from monadring.fhe import FheParams, encode_int, encrypt, keygen
from monadring.ledger import Event, EventKind, KvStateMachine
from monadring.ring import (
    GroupBroadcast,
    NodeSigner,
    NodeState,
    SubnetConfig,
    Token,
    TokenCopyResend,
    TokenDelivery,
    decode_message,
    derive_node_key,
    make_evidence,
    make_group,
    rotate_members,
    rotation_score,
    verify_evidence,
    verify_group,
)

GENESIS = KvStateMachine.binary(1)


class MiniRing:
    """Hand-driven ring of NodeStates, no simulator."""

    def __init__(self, n=3):
        self.ids = tuple(f"n{i}" for i in range(n))
        self.keys = {nid: derive_node_key(7, nid) for nid in self.ids}
        self.nodes = {nid: NodeState(nid, NodeSigner(nid, self.keys[nid]), GENESIS)
                      for nid in self.ids}

    def key_lookup(self, node_id):
        return self.keys.get(node_id)

    def step(self, node_id, token, requests=()):
        node = self.nodes[node_id]
        for payload in requests:
            node.enqueue_request(payload)
        report = node.validate_token(token, self.ids, self.key_lookup)
        assert report.valid, report.violations
        return node.apply_and_advance(token, self.ids)

    def bootstrap_lap(self, requests_for=None):
        """One full lap from an empty token; returns the token at n0 again."""
        token = Token(())
        for nid in self.ids:
            reqs = (requests_for or {}).get(nid, ())
            token = self.step(nid, token, reqs)
        return token


class TestCirculation:
    def test_bootstrap_builds_full_token(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        assert [g.composer for g in token.groups] == ["n0", "n1", "n2"]

    def test_rotation_order(self):
        # after n0 handles [G0,G1,G2] the outgoing token is [G1,G2,G0']
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        out = ring.step("n0", token)
        assert [g.composer for g in out.groups] == ["n1", "n2", "n0"]
        assert out.groups[-1].nonce == 2  # fresh composition

    def test_q_returns_to_zero(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap({"n0": [b"put a 1"]})
        own = ring.nodes["n0"].own_group(token)
        assert own.q == 0

    def test_empty_pending_composes_empty_group(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        group = token.groups[0]
        assert group.events == ()
        assert group.post_state_digest == ring.nodes["n0"].ledger.state_digest()

    def test_queue_drain_assigns_consecutive_ids(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        # push local max to 7 with one more lap of requests
        reqs = {nid: [f"put k{nid}{j} v".encode() for j in range(2)]
                for nid in ring.ids}
        token = ring.step("n0", token, reqs["n0"])
        token = ring.step("n1", token, reqs["n1"])
        token = ring.step("n2", token, reqs["n2"])
        node0 = ring.nodes["n0"]
        assert node0.ledger.max_event_id == 2  # before receiving n1/n2 batches
        token = ring.step("n0", token, [b"put x 1", b"put y 2", b"put z 3"])
        new_group = token.groups[-1]
        assert [e.event_id for e in new_group.events] == [7, 8, 9]

    def test_digest_agreement_after_lap(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap({"n0": [b"put a 1"], "n1": [b"put b 2"]})
        token = ring.step("n0", token)
        token = ring.step("n1", token)
        ring.step("n2", token)
        digests = {ring.nodes[nid].ledger.state_digest() for nid in ring.ids}
        assert len(digests) == 1

    def test_copy_recognition(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        out = ring.step("n0", token, [b"put c 1"])
        assert ring.nodes["n0"].is_copy(token)      # already handled
        assert not ring.nodes["n1"].is_copy(out)    # n0's new group is news


class TestValidation:
    def test_q_positive_violation(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        bad = Token(tuple(
            g if g.composer != "n0" else
            make_group(node0.signer, g.events, g.post_state_digest, 1, g.nonce)
            for g in token.groups))
        report = node0.validate_token(bad, ring.ids, ring.key_lookup)
        assert any(v.rule == "q" for v in report.violations)

    def test_q_negative_matches_joiners(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        grown = ring.ids + ("n3",)
        resigned = Token(tuple(
            g if g.composer != "n0" else
            make_group(node0.signer, g.events, g.post_state_digest, -1, g.nonce)
            for g in token.groups))
        ok = node0.validate_token(resigned, grown, ring.key_lookup)
        assert not any(v.rule == "q" for v in ok.violations)
        bad = node0.validate_token(resigned, ring.ids, ring.key_lookup)
        assert any(v.rule == "q" for v in bad.violations)

    def test_forged_signature_detected(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        forged_group = token.groups[1]
        forged = Token((token.groups[0],
                        make_group(ring.nodes["n0"].signer, forged_group.events,
                                   forged_group.post_state_digest, forged_group.q,
                                   forged_group.nonce),
                        token.groups[2]))
        # n0-signed group claiming to be n1's position: composer check fails
        object.__setattr__(forged.groups[1], "composer", "n1")
        report = ring.nodes["n0"].validate_token(forged, ring.ids, ring.key_lookup)
        assert any(v.rule == "signature" for v in report.violations)

    def test_continuity_gap_detected(self):
        ring = MiniRing(3)
        ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        attacker = ring.nodes["n2"]
        skip = Event(node0.ledger.max_event_id + 2, EventKind.MODIFICATION, b"put g 1")
        gap_group = make_group(attacker.signer, (skip,), "0" * 64, 2, 99)
        report = node0.validate_token(Token((gap_group,)), ring.ids, ring.key_lookup)
        assert any(v.rule == "continuity" for v in report.violations)

    def test_digest_mismatch_detected(self):
        ring = MiniRing(3)
        ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        attacker = ring.nodes["n2"]
        ev = Event(node0.ledger.max_event_id + 1, EventKind.MODIFICATION, b"put h 1")
        lying = make_group(attacker.signer, (ev,), "f" * 64, 2, 99)
        report = node0.validate_token(Token((lying,)), ring.ids, ring.key_lookup)
        assert any(v.rule == "digest" for v in report.violations)


class TestEvidence:
    def tampering_setup(self):
        """n2 rewrites an event it signed earlier; n0 sees both versions."""
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        token = ring.step("n0", token)
        token = ring.step("n1", token)
        token = ring.step("n2", token, [b"put victim 1"])
        # n0 applies n2's genuine group
        report = ring.nodes["n0"].validate_token(token, ring.ids, ring.key_lookup)
        assert report.valid
        token = ring.nodes["n0"].apply_and_advance(token, ring.ids)
        attacker = ring.nodes["n2"]
        ledger0 = ring.nodes["n0"].ledger
        eid = next(i for i in range(1, ledger0.max_event_id + 1)
                   if ledger0.event(i).payload == b"put victim 1")
        original = ring.nodes["n0"].event_origin[eid]
        rewritten = Event(eid, EventKind.MODIFICATION, b"put victim 999")
        forged = make_group(attacker.signer, (rewritten,),
                            original.post_state_digest, 2, original.nonce + 50)
        return ring, token, original, forged

    def test_rewrite_produces_evidence(self):
        ring, token, original, forged = self.tampering_setup()
        tampered = Token(token.groups + (forged,))
        report = ring.nodes["n0"].validate_token(tampered, ring.ids, ring.key_lookup)
        assert any(v.rule == "conflict" for v in report.violations)
        assert len(report.evidence) == 1
        evidence = report.evidence[0]
        assert evidence.offender == "n2"
        assert verify_evidence(evidence, ring.key_lookup)

    def test_evidence_signatures_verify_and_conflict(self):
        ring, _, original, forged = self.tampering_setup()
        evidence = make_evidence(original, forged)
        assert evidence is not None
        assert verify_group(evidence.group_a, ring.keys["n2"])
        assert verify_group(evidence.group_b, ring.keys["n2"])
        assert evidence.group_a.events != evidence.group_b.events

    def test_no_evidence_for_identical_content(self):
        ring, _, original, _ = self.tampering_setup()
        assert make_evidence(original, original) is None

    def test_cross_composer_is_not_evidence(self):
        ring, _, original, forged = self.tampering_setup()
        relabeled = make_group(ring.nodes["n1"].signer, forged.events,
                               forged.post_state_digest, forged.q, forged.nonce)
        assert make_evidence(original, relabeled) is None

    def test_nonce_reuse_is_evidence(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        attacker = ring.nodes["n2"]
        node0 = ring.nodes["n0"]
        eid = node0.ledger.max_event_id + 1
        variant_a = make_group(attacker.signer,
                               (Event(eid, EventKind.MODIFICATION, b"put d 1"),),
                               "a" * 64, 2, 77)
        variant_b = make_group(attacker.signer,
                               (Event(eid, EventKind.MODIFICATION, b"put d 2"),),
                               "b" * 64, 2, 77)
        node0._nonce_archive.setdefault("n2", {})[77] = variant_a
        report = node0.validate_token(Token((variant_b,)), ring.ids, ring.key_lookup)
        assert report.evidence
        assert report.evidence[0].offender == "n2"
        assert verify_evidence(report.evidence[0], ring.key_lookup)

    def test_handle_conflict_keeps_evidence_aboard(self):
        ring, token, original, forged = self.tampering_setup()
        tampered = Token(token.groups + (forged,))
        node0 = ring.nodes["n0"]
        before = node0.ledger.state_digest()
        report = node0.validate_token(tampered, ring.ids, ring.key_lookup)
        out = node0.handle_conflict(tampered, report, ring.ids)
        assert forged in out.groups          # evidence rides along
        assert out.groups[-1].composer == "n0"  # corrective group at the tail
        assert node0.ledger.state["victim"] == "1"  # rewrite was not applied
        assert node0.ledger.state_digest() == before


class TestBroadcast:
    def test_precommit_next_events(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        out = ring.step("n0", token, [b"put bc 1"])
        new_group = out.groups[-1]
        status = ring.nodes["n2"].broadcast_precommit(new_group, ring.key_lookup)
        assert status == "applied"
        assert ring.nodes["n2"].ledger.state["bc"] == "1"

    def test_gap_deferred_then_no_double_application(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        out = ring.step("n0", token, [b"put bc 1"])
        future = make_group(
            ring.nodes["n1"].signer,
            (Event(out.groups[-1].max_event_id + 1, EventKind.MODIFICATION, b"put gap 1"),),
            "0" * 64, 2, 99)
        node2 = ring.nodes["n2"]
        assert node2.broadcast_precommit(future, ring.key_lookup) == "deferred"
        # token arrives (via n1) carrying the events the broadcast announced
        out = ring.step("n1", out)
        report = node2.validate_token(out, ring.ids, ring.key_lookup)
        assert report.valid
        node2.apply_and_advance(out, ring.ids)
        assert node2.ledger.state["bc"] == "1"
        assert node2.retry_deferred(ring.key_lookup) == 0  # gap group digest is fake
        assert node2.ledger.state.get("gap") is None

    def test_bad_digest_rolls_back(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        lying = make_group(
            ring.nodes["n1"].signer,
            (Event(node0.ledger.max_event_id + 1, EventKind.MODIFICATION, b"put bad 1"),),
            "f" * 64, 2, 99)
        before = node0.ledger.state_digest()
        assert node0.broadcast_precommit(lying, ring.key_lookup) == "rejected"
        assert node0.ledger.state_digest() == before

    def test_stale_broadcast_ignored(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        group = token.groups[0]
        assert ring.nodes["n1"].broadcast_precommit(group, ring.key_lookup) == "stale"


class TestRecovery:
    def test_resend_after_deadline(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        out = ring.step("n0", token)
        node0.arm_recovery(now=100, ring_size=3, epsilon=5)
        assert node0.recovery_tick(110, 3, 5) is None  # deadline is 115
        resent = node0.recovery_tick(115, 3, 5)
        assert resent == out
        assert node0.recovery_deadline == 115 + 15  # re-armed

    def test_no_resend_once_token_returned(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        ring.step("n0", token)
        node0.arm_recovery(now=100, ring_size=3, epsilon=5)
        node0.note_live_token()
        assert node0.recovery_tick(200, 3, 5) is None

    def test_new_member_never_resends(self):
        node = NodeState("fresh", NodeSigner("fresh", b"k"), GENESIS)
        node.arm_recovery(now=0, ring_size=3, epsilon=5)
        assert node.last_seen_token is None
        assert node.recovery_tick(1000, 3, 5) is None


class TestUpgradeInjection:
    def make_functions(self, versions=(1, 2)):
        import hashlib
        return {v: (hashlib.sha256(KvStateMachine.binary(v)).hexdigest(),
                    KvStateMachine.binary(v)) for v in versions}

    def test_injects_once(self):
        ring = MiniRing(3)
        ring.bootstrap_lap()
        node0 = ring.nodes["n0"]
        functions = self.make_functions()
        assert node0.process_upgrade(functions)
        assert not node0.process_upgrade(functions)  # already queued
        kind, payload = node0.pending[0]
        assert kind is EventKind.FUNCTION_UPGRADE
        assert payload == KvStateMachine.binary(2)

    def test_equal_version_noop(self):
        ring = MiniRing(3)
        node0 = ring.nodes["n0"]
        assert not node0.process_upgrade(self.make_functions(versions=(1,)))

    def test_upgrade_already_in_token_not_duplicated(self):
        ring = MiniRing(3)
        ring.bootstrap_lap()
        node0, node1 = ring.nodes["n0"], ring.nodes["n1"]
        functions = self.make_functions()
        assert node1.process_upgrade(functions)
        upgrade_event = Event(node1.ledger.max_event_id + 1,
                              EventKind.FUNCTION_UPGRADE, KvStateMachine.binary(2))
        carrying = Token((make_group(node1.signer, (upgrade_event,), "0" * 64, 2, 50),))
        assert not node0.process_upgrade(functions, carrying)

    def test_digest_mismatch_rejected(self):
        from monadring.ring import ProtocolError
        ring = MiniRing(3)
        node0 = ring.nodes["n0"]
        functions = {2: ("0" * 64, KvStateMachine.binary(2))}
        with pytest.raises(ProtocolError):
            node0.process_upgrade(functions)

    def test_applied_upgrade_switches_interpreter_everywhere(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        functions = self.make_functions()
        ring.nodes["n0"].process_upgrade(functions)
        token = ring.step("n0", token)
        token = ring.step("n1", token)
        token = ring.step("n2", token)
        assert all(ring.nodes[n].ledger.active_version == 2 for n in ring.ids)
        # v2 grammar now folds everywhere
        token = ring.step("n0", token, [b"put s x", b"append s yz"])
        token = ring.step("n1", token)
        ring.step("n2", token)
        assert all(ring.nodes[n].ledger.state["s"] == "xyz" for n in ring.ids)


class TestRotation:
    def test_zero_count_identity(self):
        result = rotate_members(("a", "b", "c"), ("p", "q"), b"seed", 0)
        assert result.nodelist == ("a", "b", "c")
        assert result.rotated_out == ()

    def test_deterministic_and_verifiable(self):
        a = rotate_members(("a", "b", "c", "d"), ("p", "q", "r"), b"epoch1", 2)
        b = rotate_members(("a", "b", "c", "d"), ("p", "q", "r"), b"epoch1", 2)
        assert a == b
        # any party can recompute the outgoing choice from the seed
        expected_out = tuple(sorted(("a", "b", "c", "d"),
                                    key=lambda m: rotation_score(b"epoch1", "out", m))[:2])
        assert a.rotated_out == expected_out

    def test_shortfall(self):
        result = rotate_members(("a", "b", "c"), ("p",), b"s", 2)
        assert len(result.rotated_in) == 1
        assert result.shortfall == 1

    def test_positions_preserved(self):
        result = rotate_members(("a", "b", "c", "d"), ("p", "q"), b"s2", 1)
        changed = [i for i, (old, new) in
                   enumerate(zip(("a", "b", "c", "d"), result.nodelist)) if old != new]
        assert len(changed) == 1


class TestMessageCodecs:
    def test_token_delivery_roundtrip(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap({"n0": [b"put a 1"]})
        msg = TokenDelivery(sender="n2", recipient="n0", token=token)
        assert decode_message(msg.encode()) == msg

    def test_copy_resend_roundtrip(self):
        ring = MiniRing(3)
        token = ring.bootstrap_lap()
        msg = TokenCopyResend(sender="n0", recipient="n1", token=token)
        decoded = decode_message(msg.encode())
        assert isinstance(decoded, TokenCopyResend)
        assert decoded == msg

    def test_broadcast_roundtrip_with_votes(self):
        params = FheParams(ring_degree=16, ciphertext_modulus=1 << 40,
                           plaintext_modulus=1 << 16)
        keys = keygen(params, random.Random(0))
        ballot = encrypt(keys.public_key, encode_int(1, params), params, random.Random(1))
        signer = NodeSigner("n0", b"k")
        group = make_group(signer, (), "d" * 64, 2, 5, votes=(ballot,))
        msg = GroupBroadcast(sender="n0", group=group)
        assert decode_message(msg.encode()) == msg
