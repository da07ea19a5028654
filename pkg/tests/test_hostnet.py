import hashlib

import pytest

from monadring.hostnet import HostnetError, HostnetLedger, SubnetStatus
from monadring.ledger import KvStateMachine

BINARY = KvStateMachine.binary(1)
DIGEST = hashlib.sha256(BINARY).hexdigest()


def register(ledger, subnet_id="s1", threshold=3):
    return ledger.register_subnet(subnet_id, threshold, BINARY, DIGEST)


class TestRegisterSubnet:
    def test_creates_pending_subnet(self):
        ledger = HostnetLedger()
        register(ledger)
        view = ledger.view("s1")
        assert view.status is SubnetStatus.PENDING
        assert view.nodelist == ()
        assert view.functions[1][0] == DIGEST

    def test_wrong_digest_rejected(self):
        ledger = HostnetLedger()
        with pytest.raises(HostnetError):
            ledger.register_subnet("s1", 3, BINARY, "0" * 64)

    def test_duplicate_rejected(self):
        ledger = HostnetLedger()
        register(ledger)
        with pytest.raises(HostnetError):
            register(ledger)


class TestJoin:
    def test_threshold_launch_preserves_join_order(self):
        ledger = HostnetLedger()
        register(ledger, threshold=3)
        assert ledger.join_subnet("n0", "s1", b"k0") is SubnetStatus.PENDING
        assert ledger.join_subnet("n1", "s1", b"k1") is SubnetStatus.PENDING
        assert ledger.join_subnet("n2", "s1", b"k2") is SubnetStatus.ACTIVE
        assert ledger.view("s1").nodelist == ("n0", "n1", "n2")

    def test_join_after_active_goes_to_pool(self):
        ledger = HostnetLedger()
        register(ledger, threshold=3)
        for i in range(3):
            ledger.join_subnet(f"n{i}", "s1", b"k")
        ledger.join_subnet("late", "s1", b"k")
        view = ledger.view("s1")
        assert view.nodelist == ("n0", "n1", "n2")
        assert view.candidate_pool == ("late",)

    def test_multi_subnet_membership(self):
        ledger = HostnetLedger()
        register(ledger, "s1")
        register(ledger, "s2")
        ledger.join_subnet("n0", "s1", b"k")
        ledger.join_subnet("n0", "s2", b"k")
        assert "n0" in ledger.view("s1").nodelist
        assert "n0" in ledger.view("s2").nodelist

    def test_unknown_subnet(self):
        ledger = HostnetLedger()
        with pytest.raises(HostnetError):
            ledger.join_subnet("n0", "nope", b"k")


class TestAnchors:
    def make_active(self):
        ledger = HostnetLedger()
        register(ledger, threshold=3)
        for i in range(3):
            ledger.join_subnet(f"n{i}", "s1", b"k")
        return ledger

    def test_first_anchor_accepted(self):
        ledger = self.make_active()
        assert ledger.anchor_root("s1", "d" * 64, 10)
        assert ledger.view("s1").anchor == (10, "d" * 64)

    def test_monotone_supersede(self):
        ledger = self.make_active()
        ledger.anchor_root("s1", "a" * 64, 10)
        assert ledger.anchor_root("s1", "b" * 64, 25)
        assert ledger.view("s1").anchor[0] == 25

    def test_regression_rejected(self):
        ledger = self.make_active()
        ledger.anchor_root("s1", "a" * 64, 25)
        assert not ledger.anchor_root("s1", "b" * 64, 20)
        assert ledger.view("s1").anchor[0] == 25

    def test_pending_subnet_cannot_anchor(self):
        ledger = HostnetLedger()
        register(ledger)
        assert not ledger.anchor_root("s1", "a" * 64, 1)


class TestFunctions:
    def test_register_upgrade(self):
        ledger = HostnetLedger()
        register(ledger)
        v2 = KvStateMachine.binary(2)
        ledger.register_function("s1", v2, hashlib.sha256(v2).hexdigest(), 2)
        assert set(ledger.view("s1").functions) == {1, 2}

    def test_bad_digest(self):
        ledger = HostnetLedger()
        register(ledger)
        with pytest.raises(HostnetError):
            ledger.register_function("s1", b"zzz", "0" * 64, 2)


class TestReplay:
    def test_log_replay_reproduces_state(self):
        ledger = HostnetLedger()
        register(ledger, threshold=3)
        for i in range(4):
            ledger.join_subnet(f"n{i}", "s1", f"k{i}".encode())
        ledger.anchor_root("s1", "a" * 64, 7)
        ledger.update_nodelist("s1", ("n0", "n3", "n2"), ("n1",), ("n3",))
        replayed = HostnetLedger.replay(list(ledger.log))
        assert replayed.report() == ledger.report()
        assert replayed.view("s1") == ledger.view("s1")

    def test_report_is_deterministic(self):
        ledger = HostnetLedger()
        register(ledger, threshold=3)
        for i in range(3):
            ledger.join_subnet(f"n{i}", "s1", b"k")
        assert ledger.report() == ledger.report()
        assert "status=active" in ledger.report()
