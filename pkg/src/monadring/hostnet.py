"""Simulated hostnet ledger: subnet registry, registrations, anchors.

The hostnet's own consensus is out of scope; this models its ledger as an
already-final transaction log applied atomically.  Subnet event logs never
land here, only their root-state digests.  Replaying the transaction log
reproduces the registry state bit-for-bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum


class HostnetError(Exception):
    """Transaction rejected by the registry rules."""


class SubnetStatus(Enum):
    PENDING = "pending"
    ACTIVE = "active"


@dataclass
class SubnetRecord:
    subnet_id: str
    threshold: int
    status: SubnetStatus = SubnetStatus.PENDING
    nodelist: tuple[str, ...] = ()
    candidate_pool: tuple[str, ...] = ()
    functions: dict[int, tuple[str, bytes]] = field(default_factory=dict)
    anchor: tuple[int, str] | None = None  # (max event id, state digest)
    node_keys: dict[str, bytes] = field(default_factory=dict)


@dataclass(frozen=True)
class HostnetView:
    """Immutable snapshot handed to subnet nodes."""

    subnet_id: str
    status: SubnetStatus
    nodelist: tuple[str, ...]
    candidate_pool: tuple[str, ...]
    functions: dict[int, tuple[str, bytes]]
    anchor: tuple[int, str] | None
    node_keys: dict[str, bytes]

    def key_of(self, node_id: str) -> bytes | None:
        return self.node_keys.get(node_id)


class HostnetLedger:
    """Registry as a deterministic state machine over its transaction log."""

    def __init__(self):
        self.subnets: dict[str, SubnetRecord] = {}
        self.log: list[tuple] = []

    # -- transactions ----------------------------------------------------------

    def _apply(self, tx: tuple):
        kind = tx[0]
        if kind == "register_subnet":
            _, subnet_id, threshold, binary, digest, version = tx
            if subnet_id in self.subnets:
                raise HostnetError(f"subnet {subnet_id!r} already registered")
            if hashlib.sha256(binary).hexdigest() != digest:
                raise HostnetError("function binary does not match its digest")
            record = SubnetRecord(subnet_id=subnet_id, threshold=threshold)
            record.functions[version] = (digest, binary)
            self.subnets[subnet_id] = record
        elif kind == "join_subnet":
            _, node_id, subnet_id, node_key = tx
            record = self._record(subnet_id)
            if node_id in record.nodelist or node_id in record.candidate_pool:
                raise HostnetError(f"{node_id!r} already registered with {subnet_id!r}")
            record.node_keys[node_id] = node_key
            if record.status is SubnetStatus.PENDING:
                record.nodelist = record.nodelist + (node_id,)
                if len(record.nodelist) >= record.threshold:
                    record.status = SubnetStatus.ACTIVE
            else:
                record.candidate_pool = record.candidate_pool + (node_id,)
        elif kind == "anchor_root":
            _, subnet_id, max_event_id, digest = tx
            record = self._record(subnet_id)
            if record.status is not SubnetStatus.ACTIVE:
                raise HostnetError("cannot anchor a pending subnet")
            if record.anchor is not None and max_event_id <= record.anchor[0]:
                raise HostnetError(
                    f"anchor at event {max_event_id} regresses from {record.anchor[0]}")
            record.anchor = (max_event_id, digest)
        elif kind == "register_function":
            _, subnet_id, binary, digest, version = tx
            record = self._record(subnet_id)
            if hashlib.sha256(binary).hexdigest() != digest:
                raise HostnetError("function binary does not match its digest")
            if version in record.functions:
                raise HostnetError(f"function v{version} already registered")
            record.functions[version] = (digest, binary)
        elif kind == "update_nodelist":
            _, subnet_id, new_nodelist, returned_to_pool, removed_from_pool = tx
            record = self._record(subnet_id)
            pool = [m for m in record.candidate_pool if m not in set(removed_from_pool)]
            pool.extend(returned_to_pool)
            record.candidate_pool = tuple(pool)
            record.nodelist = tuple(new_nodelist)
        else:
            raise HostnetError(f"unknown transaction kind {kind!r}")

    def submit(self, tx: tuple):
        """Validate and apply a transaction, appending it to the final log."""
        self._apply(tx)
        self.log.append(tx)

    def _record(self, subnet_id: str) -> SubnetRecord:
        if subnet_id not in self.subnets:
            raise HostnetError(f"unknown subnet {subnet_id!r}")
        return self.subnets[subnet_id]

    # -- public operations -------------------------------------------------------

    def register_subnet(self, subnet_id: str, threshold: int, binary: bytes,
                        digest: str, version: int = 1) -> str:
        self.submit(("register_subnet", subnet_id, threshold, binary, digest, version))
        return subnet_id

    def join_subnet(self, node_id: str, subnet_id: str, node_key: bytes) -> SubnetStatus:
        """Register a joiner; the threshold-th one activates the subnet.

        Membership in several subnets is fine: registrations are tracked per
        subnet.  Joins after activation land in the rotation candidate pool.
        """
        self.submit(("join_subnet", node_id, subnet_id, node_key))
        return self._record(subnet_id).status

    def anchor_root(self, subnet_id: str, state_digest: str, max_event_id: int) -> bool:
        """Record a subnet root; anchors only ever move forward."""
        try:
            self.submit(("anchor_root", subnet_id, max_event_id, state_digest))
        except HostnetError:
            return False
        return True

    def register_function(self, subnet_id: str, binary: bytes, digest: str,
                          version: int) -> None:
        self.submit(("register_function", subnet_id, binary, digest, version))

    def update_nodelist(self, subnet_id: str, new_nodelist: tuple[str, ...],
                        returned_to_pool: tuple[str, ...],
                        removed_from_pool: tuple[str, ...]) -> None:
        self.submit(("update_nodelist", subnet_id, new_nodelist,
                     returned_to_pool, removed_from_pool))

    # -- views and reports ----------------------------------------------------------

    def view(self, subnet_id: str) -> HostnetView:
        record = self._record(subnet_id)
        return HostnetView(
            subnet_id=subnet_id,
            status=record.status,
            nodelist=record.nodelist,
            candidate_pool=record.candidate_pool,
            functions=dict(record.functions),
            anchor=record.anchor,
            node_keys=dict(record.node_keys),
        )

    @classmethod
    def replay(cls, log: list[tuple]) -> "HostnetLedger":
        ledger = cls()
        for tx in log:
            ledger.submit(tx)
        return ledger

    def report(self) -> str:
        """Deterministic text dump for golden-file tests."""
        lines = []
        for subnet_id in sorted(self.subnets):
            record = self.subnets[subnet_id]
            lines.append(f"subnet {subnet_id} status={record.status.value} "
                         f"threshold={record.threshold}")
            lines.append(f"  nodelist {','.join(record.nodelist) or '-'}")
            lines.append(f"  pool {','.join(record.candidate_pool) or '-'}")
            for version in sorted(record.functions):
                digest, _ = record.functions[version]
                lines.append(f"  function v{version} {digest[:16]}")
            if record.anchor:
                lines.append(f"  anchor event={record.anchor[0]} {record.anchor[1][:16]}")
        return "\n".join(lines) + "\n"
