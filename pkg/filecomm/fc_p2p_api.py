from __future__ import annotations

import logging
import os
import time
from pathlib import Path

from .FileComm_Base import Base, CommContext, HeaderMismatch, Timeout, Truncated
from .fc_msgcore import (MessageEnvelope, MessageFilePair, decode_message, message_file_names,
                         parse_message_file_name)

logger = logging.getLogger(__name__)


class P2P(Base):
    def __init__(self, ctx: CommContext):
        super().__init__(ctx)
        self.last_poll_checks = 0

    def send(self, dest: int, tag: int, payload: bytes) -> None:
        """
        Publishes a message for ``dest`` and, when ``dest`` lives on another
        node of a local-filesystem job, copies it over.

        On return the message is visible in the receiver's inbox. Sending to
        self is allowed.

        :param dest: Receiving rank.
        :param tag: Message tag.
        :param payload: Message bytes.
        """
        self.check_rank(dest)
        env = MessageEnvelope(source=self.rank, dest=dest, tag=tag, payload=bytes(payload))
        pair = self.transport.publish(env)
        if self.transport.is_remote(dest):
            try:
                self.transport.transfer(pair, dest)
            finally:
                self.transport.discard(pair)

    def recv(self, source: int, tag: int) -> bytes:
        """
        Blocks until the lock file for ``(source, tag)`` shows up in our inbox,
        then reads, verifies and consumes the message.

        :param source: Sending rank.
        :param tag: Message tag.
        :return: Payload bytes.
        """
        self.check_rank(source)
        pair = self.pair_from(source, tag)
        self.wait_for(pair, source, tag)
        return self.consume(pair, source, tag)

    def probe(self, source: int, tag: int) -> bool:
        """
        Non-blocking check for a pending message. Never consumes.

        :param source: Sending rank.
        :param tag: Message tag.
        :return: True if the lock file exists.
        """
        self.check_rank(source)
        return self.pair_from(source, tag).lock_path.exists()

    def pair_from(self, source: int, tag: int) -> MessageFilePair:
        return message_file_names(self.rank, source, tag, self.transport.inbox_of(self.rank))

    def wait_for(self, pair: MessageFilePair, source: int, tag: int) -> None:
        timeout = self.ctx.poll.timeout
        start = time.monotonic()
        self.last_poll_checks = 0
        for interval in self.ctx.poll.intervals():
            self.last_poll_checks += 1
            if pair.lock_path.exists():
                return
            if timeout is not None:
                remaining = timeout - (time.monotonic() - start)
                if remaining <= 0:
                    raise Timeout(f"rank {self.rank}: no message from rank {source} tag {tag} after {timeout:.3f}s")
                interval = min(interval, remaining)
            time.sleep(interval)

    def consume(self, pair: MessageFilePair, source: int, tag: int) -> bytes:
        shared = pair.lock_path.is_symlink()
        try:
            data = pair.buffer_path.read_bytes()
        except FileNotFoundError:
            raise Truncated(f"lock {pair.lock_path.name} present without its buffer") from None
        env = decode_message(data)
        # shared multicast buffers are addressed to the group, not to one member
        if env.source != source or env.tag != tag or (not shared and env.dest != self.rank):
            raise HeaderMismatch(
                f"{pair.buffer_path.name} holds source={env.source} dest={env.dest} tag={env.tag}"
            )
        if not self.ctx.keep_files:
            if shared:
                release_shared(pair, self.np)
            else:
                pair.buffer_path.unlink(missing_ok=True)
                pair.lock_path.unlink(missing_ok=True)
        logger.debug("rank %d received %d bytes from rank %d tag %d", self.rank, len(env.payload), source, tag)
        return env.payload


def release_shared(pair: MessageFilePair, np_: int) -> None:
    """
    Drops one member's links to a shared multicast buffer. The member that
    removes the last lock link also removes the real buffer and lock.

    :param pair: This member's link pair.
    :param np_: Ranks in the job; only their link names are checked.
    """
    inbox = pair.lock_path.parent
    real_lock = inbox / os.readlink(pair.lock_path)
    real_buffer = inbox / os.readlink(pair.buffer_path)
    pair.buffer_path.unlink(missing_ok=True)
    pair.lock_path.unlink(missing_ok=True)
    _dest, source, tag, _kind = parse_message_file_name(pair.lock_path.name)
    if not remaining_links(inbox, real_lock.name, source, tag, np_):
        real_buffer.unlink(missing_ok=True)
        real_lock.unlink(missing_ok=True)


def remaining_links(inbox: Path, target: str, source: int, tag: int, np_: int) -> bool:
    for m in range(np_):
        lock = message_file_names(m, source, tag, inbox).lock_path
        try:
            if os.readlink(lock) == target:
                return True
        except OSError:
            continue
    return False
