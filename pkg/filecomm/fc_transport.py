from __future__ import annotations

import enum
import logging
import os
import shlex
import shutil
import subprocess
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .FileComm_Base import CopyFailed, RankOutOfRange, StaleMessage, TransportIoError
from .fc_msgcore import TEMP_PREFIX, MessageEnvelope, MessageFilePair, encode_message, message_file_names
from .fc_topology import HostRankMap

logger = logging.getLogger(__name__)

STAGING_DIR = "outgoing"
COPY_CHUNK = 1024 * 1024


class TransportMode(str, enum.Enum):
    SHARED_FS = "shared"
    LOCAL_FS = "local"


class CopierKind(str, enum.Enum):
    SCP = "scp"
    LOOPBACK = "loopback"


@dataclass(frozen=True)
class CopierConfig:
    kind: CopierKind = CopierKind.LOOPBACK
    latency_ms: float = 0.0
    bandwidth_bytes_per_s: float | None = None
    stall_ms: float = 0.0
    scp_options: tuple[str, ...] = ()
    connect_timeout_s: int = 10


@dataclass
class CopyCounter:
    remote_copies: int = 0
    bytes_copied: int = 0
    messages_published: int = 0
    symlink_fallbacks: int = 0

    def snapshot(self) -> CopyCounter:
        return CopyCounter(**asdict(self))

    def delta(self, since: CopyCounter) -> CopyCounter:
        return CopyCounter(**{k: v - getattr(since, k) for k, v in asdict(self).items()})

    def as_dict(self) -> dict:
        return asdict(self)


class Copier:
    """
    Moves one file to another node. Returns only once the file is complete at
    the destination.
    """

    kind: CopierKind

    def copy(self, local: Path, node: str, remote: Path) -> None:
        raise NotImplementedError


class ScpCopier(Copier):
    kind = CopierKind.SCP

    def __init__(self, options: tuple[str, ...] = (), connect_timeout_s: int = 10, scp_binary: str = "scp"):
        self.options = tuple(options)
        self.connect_timeout_s = connect_timeout_s
        self.scp_binary = scp_binary

    def command(self, local: Path, node: str, remote: Path) -> list[str]:
        return [self.scp_binary, "-B", "-o", f"ConnectTimeout={self.connect_timeout_s}",
                *self.options, str(local), f"{node}:{remote}"]

    def copy(self, local: Path, node: str, remote: Path) -> None:
        cmd = self.command(local, node, remote)
        logger.debug("running %s", shlex.join(cmd))
        try:
            proc = subprocess.run(cmd, stdin=subprocess.DEVNULL, capture_output=True, text=True)
        except OSError as err:
            raise CopyFailed(f"cannot run {self.scp_binary}", str(err)) from err
        if proc.returncode != 0:
            raise CopyFailed(f"scp to {node}:{remote} exited {proc.returncode}", proc.stderr.strip())


class LoopbackCopier(Copier):
    """
    In-process copy between virtual-node directories on one machine.

    ``latency_ms`` is paid once per call, ``bandwidth_bytes_per_s`` caps the
    throughput and ``stall_ms`` pauses after every buffer file, before the
    caller gets to copy the lock.
    """

    kind = CopierKind.LOOPBACK

    def __init__(self, latency_ms: float = 0.0, bandwidth_bytes_per_s: float | None = None, stall_ms: float = 0.0):
        self.latency_ms = latency_ms
        self.bandwidth_bytes_per_s = bandwidth_bytes_per_s
        self.stall_ms = stall_ms

    def copy(self, local: Path, node: str, remote: Path) -> None:
        if self.latency_ms > 0:
            time.sleep(self.latency_ms / 1000.0)
        try:
            size = local.stat().st_size
            # written in place, like scp: the destination is visible while incomplete
            with local.open("rb") as src, remote.open("wb") as dst:
                shutil.copyfileobj(src, dst, length=COPY_CHUNK)
        except OSError as err:
            raise CopyFailed(f"loopback copy {local} -> {node}:{remote} failed", str(err)) from err
        if self.bandwidth_bytes_per_s:
            time.sleep(size / self.bandwidth_bytes_per_s)
        if self.stall_ms > 0 and remote.suffix != ".lock":
            time.sleep(self.stall_ms / 1000.0)


def make_copier(config: CopierConfig) -> Copier:
    if config.kind == CopierKind.SCP:
        return ScpCopier(config.scp_options, config.connect_timeout_s)
    return LoopbackCopier(config.latency_ms, config.bandwidth_bytes_per_s, config.stall_ms)


def write_atomic(path: Path, data: bytes, fsync: bool = False) -> None:
    """
    Writes ``data`` under a temporary name and renames it into place.

    :param path: Final path.
    :param data: File content.
    :param fsync: Flush to stable storage before the rename.
    """
    tmp = path.with_name(f"{TEMP_PREFIX}{path.name}-{uuid.uuid4().hex}")
    try:
        with tmp.open("wb") as f:
            f.write(data)
            if fsync:
                f.flush()
                os.fsync(f.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def create_lock(path: Path) -> None:
    fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    os.close(fd)


@dataclass
class Transport:
    """
    Decides where message files are written and how they reach a receiver.

    Shared mode writes every pair into the one shared directory. Local mode
    writes into the receiver's node inbox when both ranks share a node, and
    otherwise stages the pair next to the sender and hands it to the copier.
    """

    mode: TransportMode
    map: HostRankMap
    rank: int
    copier: Copier | None = None
    metrics: CopyCounter = field(default_factory=CopyCounter)
    fsync: bool = False

    def __post_init__(self):
        self.mode = TransportMode(self.mode)
        if self.mode == TransportMode.SHARED_FS:
            dirs = {e.msg_dir for e in self.map.entries}
            if len(dirs) != 1:
                raise ValueError(f"shared transport needs one message directory, map has {len(dirs)}")
        elif self.copier is None:
            raise ValueError("local transport needs a copier")

    @property
    def shared_dir(self) -> Path:
        return self.map.entries[0].msg_dir

    def inbox_of(self, r: int) -> Path:
        """
        Directory where rank ``r`` polls for its lock files.

        :param r: Rank.
        :return: Inbox path.
        """
        if self.mode == TransportMode.SHARED_FS:
            if not 0 <= r < self.map.np:
                raise RankOutOfRange(f"rank {r} outside [0, {self.map.np})")
            return self.shared_dir
        return self.map.msg_dir_of(r)

    def staging_dir(self) -> Path:
        return self.map.msg_dir_of(self.rank) / STAGING_DIR

    def is_remote(self, dest: int) -> bool:
        return self.mode == TransportMode.LOCAL_FS and not self.map.colocated(self.rank, dest)

    def publish_site(self, dest: int) -> Path:
        if self.is_remote(dest):
            return self.staging_dir()
        return self.inbox_of(dest)

    def publish(self, env: MessageEnvelope) -> MessageFilePair:
        """
        Writes buffer then lock at the publish site for ``env.dest``.

        :param env: Message to publish.
        :return: Published pair.
        """
        if not 0 <= env.source < self.map.np:
            raise RankOutOfRange(f"source rank {env.source} outside [0, {self.map.np})")
        site = self.publish_site(env.dest)
        pair = message_file_names(env.dest, env.source, env.tag, site)
        if pair.lock_path.exists():
            raise StaleMessage(f"unconsumed message already at {pair.lock_path}")
        try:
            site.mkdir(parents=True, exist_ok=True)
            write_atomic(pair.buffer_path, encode_message(env), self.fsync)
            create_lock(pair.lock_path)
        except FileExistsError:
            raise StaleMessage(f"unconsumed message already at {pair.lock_path}") from None
        except OSError as err:
            raise TransportIoError(f"cannot publish {pair.buffer_path}: {err}") from err
        self.metrics.messages_published += 1
        logger.debug("published %s (%d payload bytes)", pair.buffer_path.name, len(env.payload))
        return pair

    def transfer(self, pair: MessageFilePair, dest: int) -> MessageFilePair:
        """
        Copies a staged pair into ``dest``'s inbox: buffer first, then lock.

        :param pair: Pair returned by :meth:`publish`.
        :param dest: Receiving rank.
        :return: Pair as it now exists in the destination inbox.
        """
        if self.mode != TransportMode.LOCAL_FS:
            raise ValueError("transfer is only meaningful for local-filesystem transport")
        node = self.map.node_of(dest)
        inbox = self.inbox_of(dest)
        remote = MessageFilePair(inbox / pair.buffer_path.name, inbox / pair.lock_path.name)
        # best effort: on real hosts the receiver inbox is not visible from here
        if os.path.lexists(remote.lock_path):
            raise StaleMessage(f"unconsumed message already at {node}:{remote.lock_path}")
        size = pair.buffer_path.stat().st_size
        self.copier.copy(pair.buffer_path, node, remote.buffer_path)
        self.metrics.remote_copies += 1
        self.metrics.bytes_copied += size
        self.copier.copy(pair.lock_path, node, remote.lock_path)
        self.metrics.remote_copies += 1
        logger.debug("transferred %s to %s:%s", pair.buffer_path.name, node, inbox)
        return remote

    def discard(self, pair: MessageFilePair) -> None:
        pair.buffer_path.unlink(missing_ok=True)
        pair.lock_path.unlink(missing_ok=True)
