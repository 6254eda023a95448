from __future__ import annotations

import errno
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .FileComm_Base import (Base, CommContext, ShapeMismatch, StaleMessage, SymlinkUnsupported,
                            TransportIoError, WrongTransport)
from .fc_msgcore import (MAX_TAG, MessageEnvelope, MessageFilePair, encode_message, message_file_names,
                          shared_file_names)
from .fc_p2p_api import P2P
from .fc_topology import HostRankMap
from .fc_transport import TransportMode, create_lock, write_atomic

logger = logging.getLogger(__name__)

# collectives own tags [tag_base, tag_base + TAG_STRIDE)
TAG_STRIDE = 1024

_NO_SYMLINKS = {errno.EPERM, errno.EOPNOTSUPP, errno.ENOSYS, errno.EACCES}

FLOAT = np.dtype("<f8")


def block_len(global_len: int, np_: int, r: int) -> int:
    return global_len // np_ + (1 if r < global_len % np_ else 0)


def block_offset(global_len: int, np_: int, r: int) -> int:
    return r * (global_len // np_) + min(r, global_len % np_)


@dataclass
class DistVector:
    """
    One rank's share of a block-distributed float64 array.

    Rank ``r`` owns ``[block_offset(r), block_offset(r) + block_len(r))``;
    lower ranks take the remainder elements.
    """

    global_len: int
    np: int
    rank: int
    local: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=FLOAT))

    def __post_init__(self):
        self.local = np.ascontiguousarray(self.local, dtype=FLOAT)
        expected = block_len(self.global_len, self.np, self.rank)
        if self.local.ndim != 1 or self.local.size != expected:
            raise ShapeMismatch(f"rank {self.rank} holds {self.local.size} elements, distribution gives {expected}")

    @classmethod
    def from_global(cls, values, np_: int, rank: int) -> DistVector:
        values = np.asarray(values, dtype=FLOAT)
        lo = block_offset(values.size, np_, rank)
        return cls(values.size, np_, rank, values[lo:lo + block_len(values.size, np_, rank)])

    @property
    def offset(self) -> int:
        return block_offset(self.global_len, self.np, self.rank)


@dataclass(frozen=True)
class McastGroup:
    root: int
    members: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate members in {self.members}")
        if self.root in self.members:
            raise ValueError(f"root {self.root} listed as a member")


@dataclass(frozen=True)
class NodeAwarePlan:
    level1: McastGroup
    level2: dict[int, McastGroup]
    distributors: dict[str, int]


def node_aware_plan(hmap: HostRankMap, root: int) -> NodeAwarePlan:
    """
    Two-level fan-out for a broadcast from ``root``.

    Level 1 goes from root to one distributor per other node (that node's
    lowest rank). Level 2 goes from each distributor to its node peers. Root
    is the distributor of its own node whether or not it is the lowest rank
    there.

    :param hmap: Host-to-rank map.
    :param root: Broadcasting rank.
    :return: The plan.
    """
    root_node = hmap.node_of(root)
    distributors = {root_node: root}
    for node in hmap.nodes():
        if node != root_node:
            distributors[node] = hmap.leader_of(node)
    level1 = McastGroup(root, tuple(d for n, d in distributors.items() if n != root_node))
    level2 = {}
    for d in distributors.values():
        peers = tuple(p for p in hmap.node_peers(d) if p != d)
        if peers:
            level2[d] = McastGroup(d, peers)
    return NodeAwarePlan(level1, level2, distributors)


def agg_schedule(np_: int) -> list[list[tuple[int, int]]]:
    """
    Binomial gather rounds: in round ``k`` every rank ``r`` with
    ``r % 2**(k+1) == 2**k`` sends to ``r - 2**k``.

    :param np_: Number of ranks.
    :return: One list of ``(sender, receiver)`` pairs per round.
    """
    rounds = []
    step = 1
    while step < np_:
        rounds.append([(r, r - step) for r in range(step, np_, 2 * step)])
        step *= 2
    return rounds


def rounds_for(np_: int) -> int:
    return math.ceil(math.log2(np_)) if np_ > 1 else 0


class Collectives(Base):
    def __init__(self, ctx: CommContext, use_symlinks: bool = True):
        super().__init__(ctx)
        self.p2p = P2P(ctx)
        self.use_symlinks = use_symlinks

    def _tag(self, tag_base: int, offset: int) -> int:
        if not 0 <= offset < TAG_STRIDE or tag_base + offset > MAX_TAG:
            raise ValueError(f"tag {tag_base}+{offset} outside the collective tag range")
        return tag_base + offset

    def mcast(self, group: McastGroup, tag: int, payload: bytes | None = None) -> bytes | None:
        """
        One sender, many receivers sharing a single buffer file.

        Members that share the root's inbox read the root's buffer through
        per-member symbolic links. Members elsewhere get one copy per node,
        addressed to the lowest member there, which re-publishes it locally
        for the others.

        :param group: Root and members; every one of them must call.
        :param tag: Message tag.
        :param payload: Bytes to send (root only).
        :return: None on the root, the payload on members.
        """
        self.check_rank(group.root)
        for m in group.members:
            self.check_rank(m)
        if self.rank == group.root:
            self._mcast_root(group, tag, bytes(payload))
            return None
        if self.rank not in group.members:
            raise ValueError(f"rank {self.rank} is not part of {group}")
        return self._mcast_member(group, tag)

    def _by_inbox(self, ranks) -> dict[Path, list[int]]:
        groups: dict[Path, list[int]] = {}
        for r in sorted(ranks):
            groups.setdefault(self.transport.inbox_of(r), []).append(r)
        return groups

    def _mcast_root(self, group: McastGroup, tag: int, payload: bytes) -> None:
        my_inbox = self.transport.inbox_of(self.rank)
        for inbox, members in self._by_inbox(group.members).items():
            if inbox == my_inbox:
                self.publish_shared(members, group.root, tag, payload)
            else:
                # one transfer per node; the lowest member fans out locally
                self.p2p.send(members[0], tag, payload)

    def _mcast_member(self, group: McastGroup, tag: int) -> bytes:
        my_inbox = self.transport.inbox_of(self.rank)
        payload = self.p2p.recv(group.root, tag)
        if my_inbox == self.transport.inbox_of(group.root):
            return payload
        node_members = self._by_inbox(group.members)[my_inbox]
        if self.rank == node_members[0] and len(node_members) > 1:
            self.publish_shared(node_members[1:], group.root, tag, payload)
        return payload

    def publish_shared(self, members: list[int], source: int, tag: int, payload: bytes) -> None:
        """
        Publishes one buffer for several colocated members: the real buffer,
        a buffer link per member, a lock link per member, and finally the real
        lock that makes every lock link resolve at once.

        :param members: Receivers sharing this rank's inbox.
        :param source: Rank named as the sender in file names and header.
        :param tag: Message tag.
        :param payload: Message bytes.
        """
        if len(members) == 1 or not self.use_symlinks:
            self._publish_copies(members, source, tag, payload)
            return
        inbox = self.transport.inbox_of(members[0])
        real = shared_file_names(source, tag, inbox)
        pairs = [message_file_names(m, source, tag, inbox) for m in members]
        if real.lock_path.exists() or any(os.path.lexists(p.lock_path) for p in pairs):
            raise StaleMessage(f"unconsumed multicast from rank {source} tag {tag} in {inbox}")
        try:
            inbox.mkdir(parents=True, exist_ok=True)
            write_atomic(real.buffer_path, encode_message(MessageEnvelope(source, source, tag, payload)),
                         self.transport.fsync)
            try:
                self._link_all(pairs, real)
            except SymlinkUnsupported as err:
                real.buffer_path.unlink(missing_ok=True)
                self.transport.metrics.symlink_fallbacks += 1
                logger.warning("symbolic links unavailable in %s (%s), copying per member", inbox, err)
                self._publish_copies(members, source, tag, payload)
                return
            create_lock(real.lock_path)
        except OSError as err:
            raise TransportIoError(f"cannot publish multicast in {inbox}: {err}") from err
        self.transport.metrics.messages_published += 1
        logger.debug("multicast from %d tag %d linked for %s", source, tag, members)

    def _link_all(self, pairs: list[MessageFilePair], real: MessageFilePair) -> None:
        made = []
        try:
            for p in pairs:
                os.symlink(real.buffer_path.name, p.buffer_path)
                made.append(p.buffer_path)
            # lock links dangle until the real lock exists
            for p in pairs:
                os.symlink(real.lock_path.name, p.lock_path)
                made.append(p.lock_path)
        except OSError as err:
            for path in made:
                path.unlink(missing_ok=True)
            if err.errno in _NO_SYMLINKS:
                raise SymlinkUnsupported(str(err)) from err
            raise

    def _publish_copies(self, members: list[int], source: int, tag: int, payload: bytes) -> None:
        for m in members:
            self.transport.publish(MessageEnvelope(source=source, dest=m, tag=tag, payload=payload))

    def bcast_central(self, root: int, tag: int, payload: bytes | None = None) -> bytes:
        """
        Broadcast through the shared directory: one buffer, a link and a lock
        link per receiving rank.

        :param root: Broadcasting rank.
        :param tag: Base tag of this collective.
        :param payload: Bytes to broadcast (root only).
        :return: The payload, on every rank.
        """
        if self.transport.mode != TransportMode.SHARED_FS:
            raise WrongTransport("bcast_central needs the shared-filesystem transport")
        self.check_rank(root)
        if self.rank == root:
            payload = bytes(payload)
            if self.np > 1:
                group = McastGroup(root, tuple(r for r in range(self.np) if r != root))
                self.mcast(group, self._tag(tag, 0), payload)
            return payload
        group = McastGroup(root, tuple(r for r in range(self.np) if r != root))
        return self.mcast(group, self._tag(tag, 0))

    def bcast_node_aware(self, root: int, tag: int, payload: bytes | None = None) -> bytes:
        """
        Two-level broadcast: root to one distributor per node, then each
        distributor to the ranks of its own node.

        :param root: Broadcasting rank.
        :param tag: Base tag of this collective.
        :param payload: Bytes to broadcast (root only).
        :return: The payload, on every rank.
        """
        self.check_rank(root)
        plan = node_aware_plan(self.map, root)
        if self.rank == root:
            data = bytes(payload)
            if plan.level1.members:
                self.mcast(plan.level1, self._tag(tag, 0), data)
        elif self.rank in plan.level1.members:
            data = self.mcast(plan.level1, self._tag(tag, 0))
        else:
            data = None
        distributor = plan.distributors[self.map.node_of(self.rank)]
        local = plan.level2.get(distributor)
        if local is not None:
            if self.rank == distributor:
                self.mcast(local, self._tag(tag, 1), data)
            else:
                data = self.mcast(local, self._tag(tag, 1))
        return data

    def agg(self, v: DistVector, tag: int) -> np.ndarray:
        """
        Gathers a block-distributed array onto rank 0 with a binomial tree.

        Each non-root rank sends exactly once, np - 1 messages in total, in at
        most ceil(log2 np) rounds.

        :param v: This rank's block.
        :param tag: Base tag of this collective; round ``k`` uses ``tag + k``.
        :return: The whole array on rank 0, an empty array elsewhere.
        """
        if v.np != self.np or v.rank != self.rank:
            raise ShapeMismatch(f"vector distributed as rank {v.rank}/{v.np}, caller is {self.rank}/{self.np}")
        acc = v.local
        step = 1
        k = 0
        while step < self.np:
            if self.rank % (2 * step) == step:
                self.p2p.send(self.rank - step, self._tag(tag, k), acc.astype(FLOAT, copy=False).tobytes())
                return np.empty(0, dtype=FLOAT)
            partner = self.rank + step
            if partner < self.np:
                data = self.p2p.recv(partner, self._tag(tag, k))
                end = min(self.rank + 2 * step, self.np)
                expected = block_offset(v.global_len, self.np, end) - block_offset(v.global_len, self.np, partner)
                if len(data) != expected * FLOAT.itemsize:
                    raise ShapeMismatch(
                        f"rank {self.rank} round {k}: got {len(data)} bytes from rank {partner}, "
                        f"expected {expected} elements"
                    )
                acc = np.concatenate([acc, np.frombuffer(data, dtype=FLOAT)])
            step *= 2
            k += 1
        return acc
