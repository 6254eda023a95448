from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .fc_transport import Transport

logger = logging.getLogger(__name__)


class FileCommError(Exception):
    """Root of every error raised by the file-based messaging kernel."""


class FrameError(FileCommError):
    pass


class BadMagic(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


class ChecksumMismatch(FrameError):
    pass


class Truncated(FrameError):
    pass


class TopologyError(FileCommError):
    pass


class ParseError(TopologyError):
    pass


class GapInRanks(TopologyError):
    pass


class DuplicateRank(TopologyError):
    pass


class RankOutOfRange(TopologyError):
    pass


class UnknownNode(TopologyError):
    pass


class TransportError(FileCommError):
    pass


class StaleMessage(TransportError):
    pass


class TransportIoError(TransportError):
    pass


class WrongTransport(TransportError):
    pass


class SymlinkUnsupported(TransportError):
    pass


class CopyFailed(TransportError):
    def __init__(self, message: str, diagnostic: str = ""):
        super().__init__(message if not diagnostic else f"{message}: {diagnostic}")
        self.diagnostic = diagnostic


class CommError(FileCommError):
    pass


class Timeout(CommError):
    pass


class HeaderMismatch(CommError):
    pass


class ShapeMismatch(CommError):
    pass


@dataclass(frozen=True)
class PollPolicy:
    """
    How a receiver polls for its lock file.

    The wait between two existence checks starts at ``initial_interval`` and
    grows by ``backoff_factor`` up to ``max_interval``. ``timeout`` of ``None``
    waits forever.
    """

    initial_interval: float = 0.001
    max_interval: float = 0.1
    backoff_factor: float = 2.0
    timeout: float | None = None

    def __post_init__(self):
        if self.initial_interval <= 0:
            raise ValueError("initial_interval must be positive")
        if self.initial_interval > self.max_interval:
            raise ValueError("initial_interval must not exceed max_interval")
        if self.backoff_factor <= 1:
            raise ValueError("backoff_factor must be > 1")
        if self.timeout is not None and self.timeout < self.initial_interval:
            raise ValueError("timeout must be >= initial_interval")

    def intervals(self):
        """
        Yields successive sleep intervals, forever.
        """
        interval = self.initial_interval
        while True:
            yield interval
            interval = min(interval * self.backoff_factor, self.max_interval)

    def max_checks(self, waited: float) -> int:
        """
        Upper bound on existence checks made while waiting ``waited`` seconds.

        :param waited: Wait duration in seconds.
        :return: Number of checks.
        """
        ramp = math.ceil(math.log(self.max_interval / self.initial_interval, self.backoff_factor)) + 1
        return ramp + math.ceil(waited / self.max_interval) + 1


LIBRARY_POLL = PollPolicy()


@dataclass
class CommContext:
    """
    Per-rank communication state: who we are and how messages move.
    """

    rank: int
    np: int
    transport: Transport
    poll: PollPolicy = LIBRARY_POLL
    keep_files: bool = False

    def __post_init__(self):
        if self.np < 1:
            raise ValueError("np must be >= 1")
        if not 0 <= self.rank < self.np:
            raise RankOutOfRange(f"rank {self.rank} outside [0, {self.np})")
        if self.np != self.transport.map.np:
            raise ValueError(f"np={self.np} disagrees with host map np={self.transport.map.np}")


class Base:
    def __init__(self, ctx: CommContext):
        self.ctx = ctx

    @property
    def rank(self) -> int:
        return self.ctx.rank

    @property
    def np(self) -> int:
        return self.ctx.np

    @property
    def transport(self) -> Transport:
        return self.ctx.transport

    @property
    def map(self):
        return self.ctx.transport.map

    def check_rank(self, r: int) -> int:
        """
        Validates a peer rank against the job size.

        :param r: Rank to check.
        :return: The same rank.
        """
        if not 0 <= r < self.np:
            raise RankOutOfRange(f"rank {r} outside [0, {self.np})")
        return r
