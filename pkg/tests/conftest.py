from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from filecomm.FileComm_Base import PollPolicy
from filecomm.fc_config import Placement
from filecomm.fc_launcher import assign_nodes
from filecomm.fc_topology import HostRankMap, RankEntry
from filecomm.fc_transport import CopierConfig, TransportMode
from filecomm.filecomm import FileComm

TEST_POLL = PollPolicy(timeout=60.0)


def build_map(root: Path, node_of_rank: list[int], mode=TransportMode.LOCAL_FS) -> HostRankMap:
    entries = []
    for node in node_of_rank:
        d = root / "shared" if mode == TransportMode.SHARED_FS else root / f"vnode{node}"
        d.mkdir(parents=True, exist_ok=True)
        entries.append(RankEntry(f"vnode{node}", d))
    return HostRankMap(tuple(entries))


def build_comms(root: Path, np_: int, nodes: int = 1, placement=Placement.CONTIGUOUS,
                mode=TransportMode.LOCAL_FS, copier: CopierConfig | None = None,
                poll: PollPolicy = TEST_POLL) -> list[FileComm]:
    hmap = build_map(root, assign_nodes(np_, nodes, placement), mode)
    return [FileComm.create(r, hmap, mode, copier, poll) for r in range(np_)]


def run_ranks(comms: list[FileComm], fn) -> list:
    """Runs ``fn(comm)`` for every rank on its own thread and returns the results in rank order."""
    with ThreadPoolExecutor(max_workers=len(comms)) as pool:
        futures = [pool.submit(fn, c) for c in comms]
        return [f.result(timeout=120) for f in futures]


def message_files(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_symlink() or p.is_file())


def total(comms, field: str) -> int:
    return sum(getattr(c.metrics, field) for c in comms)


@pytest.fixture
def two_node_map(tmp_path):
    # ranks 0,1 on node 1; ranks 2,3 on node 2
    return build_map(tmp_path, [1, 1, 2, 2])
