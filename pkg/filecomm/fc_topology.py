from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .FileComm_Base import DuplicateRank, GapInRanks, ParseError, RankOutOfRange, UnknownNode

logger = logging.getLogger(__name__)


def check_node_id(node: str) -> str:
    if not node or any(c.isspace() for c in node):
        raise ParseError(f"invalid node id {node!r}")
    return node


@dataclass(frozen=True)
class RankEntry:
    node: str
    msg_dir: Path


@dataclass(frozen=True)
class HostRankMap:
    """
    Which node every rank lives on and where its message directory is.

    Immutable once built; ``entries[r]`` belongs to rank ``r``.
    """

    entries: tuple[RankEntry, ...]
    _by_node: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise GapInRanks("host map holds no ranks")
        by_node: dict[str, list[int]] = {}
        for r, entry in enumerate(self.entries):
            check_node_id(entry.node)
            if not entry.msg_dir.is_absolute():
                raise ParseError(f"rank {r}: message directory {entry.msg_dir} is not absolute")
            by_node.setdefault(entry.node, []).append(r)
        object.__setattr__(self, "_by_node", {n: tuple(rs) for n, rs in by_node.items()})

    @classmethod
    def from_entries(cls, entries) -> HostRankMap:
        """
        Builds a map from ``(rank, node, msg_dir)`` triples in any order.

        :param entries: Iterable of triples.
        :return: Validated map.
        """
        seen: dict[int, RankEntry] = {}
        for rank, node, msg_dir in entries:
            if rank < 0:
                raise ParseError(f"negative rank {rank}")
            if rank in seen:
                raise DuplicateRank(f"rank {rank} listed twice")
            seen[rank] = RankEntry(check_node_id(node), Path(msg_dir))
        np_ = len(seen)
        missing = [r for r in range(np_) if r not in seen]
        if missing:
            raise GapInRanks(f"ranks missing from host map: {missing}")
        return cls(tuple(seen[r] for r in range(np_)))

    @property
    def np(self) -> int:
        return len(self.entries)

    def _entry(self, r: int) -> RankEntry:
        if not 0 <= r < self.np:
            raise RankOutOfRange(f"rank {r} outside [0, {self.np})")
        return self.entries[r]

    def node_of(self, r: int) -> str:
        return self._entry(r).node

    def msg_dir_of(self, r: int) -> Path:
        return self._entry(r).msg_dir

    def nodes(self) -> list[str]:
        """
        Distinct nodes ordered by their lowest rank.
        """
        return sorted(self._by_node, key=lambda n: self._by_node[n][0])

    def colocated(self, a: int, b: int) -> bool:
        return self.node_of(a) == self.node_of(b)

    def leader_of(self, node: str) -> int:
        """
        Lowest rank hosted on ``node``.

        :param node: Node id.
        :return: Leader rank.
        """
        try:
            return self._by_node[node][0]
        except KeyError:
            raise UnknownNode(f"no rank runs on node {node!r}") from None

    def node_peers(self, r: int) -> list[int]:
        return list(self._by_node[self.node_of(r)])

    def leaders(self) -> list[int]:
        return [self._by_node[n][0] for n in self.nodes()]


def parse_map(text: str) -> HostRankMap:
    triples = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected '<rank> <node> <msg_dir>', got {raw!r}")
        try:
            rank = int(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: rank {parts[0]!r} is not an integer") from None
        triples.append((rank, parts[1], parts[2]))
    return HostRankMap.from_entries(triples)


def load_map(file: Path | str) -> HostRankMap:
    """
    Reads a hostmap file: one ``<rank> <node> <msg_dir>`` line per rank.

    :param file: Path of the hostmap.
    :return: Validated map.
    """
    hmap = parse_map(Path(file).read_text(encoding="utf-8"))
    logger.debug("loaded host map %s: np=%d nodes=%d", file, hmap.np, len(hmap.nodes()))
    return hmap


def format_map(hmap: HostRankMap) -> str:
    return "".join(f"{r} {e.node} {e.msg_dir}\n" for r, e in enumerate(hmap.entries))


def write_map(hmap: HostRankMap, file: Path | str) -> None:
    Path(file).write_text(format_map(hmap), encoding="utf-8", newline="\n")
