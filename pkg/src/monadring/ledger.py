"""Event-indexed subnet ledger: a deterministic fold over an ordered log.

The transition function is a pluggable interpreter over (state, payload);
the default is a key-value machine whose event payloads are UTF-8 lines
``put <key> <value>`` / ``del <key>`` (version 2 adds ``append``).  Loading
or upgrading the function is itself an event, so the ledger's state digest
covers the active interpreter version.  Event ids index straight into the
log, so lookups and the max id are O(1).
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass


class LedgerError(Exception):
    """Event violates the ledger's append rules or payload grammar."""


class EventKind(enum.Enum):
    MODIFICATION = 1
    FUNCTION_LOAD = 2
    FUNCTION_UPGRADE = 3
    MEMBER_CHANGE = 4


@dataclass(frozen=True)
class Event:
    event_id: int
    kind: EventKind
    payload: bytes

    def __post_init__(self):
        if self.event_id < 0:
            raise ValueError("event ids are non-negative")


# reserved state key the ledger itself writes on membership changes
NODELIST_KEY = "__nodelist"


class KvStateMachine:
    """Deterministic key-value interpreter; versions differ in grammar."""

    NAME = "kv-state-machine"
    VERSIONS = (1, 2)

    def __init__(self, version: int):
        if version not in self.VERSIONS:
            raise LedgerError(f"unknown state machine version {version}")
        self.version = version

    @classmethod
    def binary(cls, version: int) -> bytes:
        """Stand-in for the executable function body registered on the hostnet."""
        return f"{cls.NAME} v{version}".encode()

    @classmethod
    def parse_binary(cls, payload: bytes) -> int:
        text = payload.decode("utf-8", errors="replace")
        prefix = f"{cls.NAME} v"
        if not text.startswith(prefix):
            raise LedgerError(f"not a recognised function binary: {text!r}")
        try:
            return int(text[len(prefix):])
        except ValueError as exc:
            raise LedgerError(f"bad version in function binary: {text!r}") from exc

    def apply(self, state: dict[str, str], payload: bytes) -> dict[str, str]:
        out = dict(state)
        for line in payload.decode("utf-8").splitlines():
            parts = line.split(" ", 2)
            op = parts[0]
            if op == "put" and len(parts) == 3:
                out[parts[1]] = parts[2]
            elif op == "del" and len(parts) == 2:
                out.pop(parts[1], None)
            elif op == "append" and len(parts) == 3 and self.version >= 2:
                out[parts[1]] = out.get(parts[1], "") + parts[2]
            else:
                raise LedgerError(f"v{self.version} cannot interpret {line!r}")
        return out


def binary_digest(binary: bytes) -> str:
    return hashlib.sha256(binary).hexdigest()


def canonical_state(state: dict[str, str], version: int) -> bytes:
    """Byte-exact canonical form: version header, then sorted length-prefixed pairs."""
    parts = [b"kv|v" + str(version).encode() + b"|"]
    for key in sorted(state):
        kb = key.encode()
        vb = state[key].encode()
        parts.append(len(kb).to_bytes(4, "little") + kb)
        parts.append(len(vb).to_bytes(4, "little") + vb)
    return b"".join(parts)


class SubnetLedger:
    """Fold of the transition function over the event log.

    Event 0 must load the function; every later event id must extend the
    log by exactly one.
    """

    def __init__(self):
        self.events: list[Event] = []
        self.state: dict[str, str] = {}
        self.machine: KvStateMachine | None = None

    @classmethod
    def genesis(cls, function_binary: bytes) -> "SubnetLedger":
        ledger = cls()
        ledger.apply(Event(0, EventKind.FUNCTION_LOAD, function_binary))
        return ledger

    @property
    def max_event_id(self) -> int:
        return len(self.events) - 1

    def event(self, event_id: int) -> Event:
        if not 0 <= event_id < len(self.events):
            raise LedgerError(f"no event {event_id}")
        return self.events[event_id]

    @property
    def active_version(self) -> int:
        return self.machine.version if self.machine else 0

    def apply(self, event: Event) -> None:
        if event.event_id != self.max_event_id + 1:
            raise LedgerError(
                f"event {event.event_id} does not extend max id {self.max_event_id}")
        if event.kind is EventKind.FUNCTION_LOAD:
            if event.event_id != 0:
                raise LedgerError("the function is loaded only by event 0")
            self.machine = KvStateMachine(KvStateMachine.parse_binary(event.payload))
        elif self.machine is None:
            raise LedgerError("event 0 must load the function first")
        elif event.kind is EventKind.MODIFICATION:
            self.state = self.machine.apply(self.state, event.payload)
        elif event.kind is EventKind.FUNCTION_UPGRADE:
            version = KvStateMachine.parse_binary(event.payload)
            if version <= self.machine.version:
                raise LedgerError(
                    f"upgrade to v{version} does not raise v{self.machine.version}")
            self.machine = KvStateMachine(version)
        elif event.kind is EventKind.MEMBER_CHANGE:
            self.state = {**self.state, NODELIST_KEY: event.payload.decode("utf-8")}
        else:  # pragma: no cover - enum is closed
            raise LedgerError(f"unhandled event kind {event.kind}")
        self.events.append(event)

    def state_digest(self) -> str:
        return hashlib.sha256(canonical_state(self.state, self.active_version)).hexdigest()

    def snapshot(self) -> tuple:
        return (len(self.events), dict(self.state), self.active_version)

    def restore(self, snap: tuple) -> None:
        count, state, version = snap
        if count > len(self.events):
            raise LedgerError("snapshot is ahead of the ledger")
        del self.events[count:]
        self.state = dict(state)
        self.machine = KvStateMachine(version) if version else None

    def clone(self) -> "SubnetLedger":
        other = SubnetLedger()
        other.events = list(self.events)
        other.state = dict(self.state)
        other.machine = KvStateMachine(self.active_version) if self.machine else None
        return other
