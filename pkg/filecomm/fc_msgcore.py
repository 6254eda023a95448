"""
Message framing, file naming and integrity checks shared by every transport.

Buffer file layout (little-endian)::

    b"FMSG" | version u16 | source u32 | dest u32 | tag u32 | payload_len u64 | payload_crc32 u32 | payload

Lock files are empty.
"""
from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

from .FileComm_Base import BadMagic, ChecksumMismatch, Truncated, UnsupportedVersion

MAGIC = b"FMSG"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIIIQI")
HEADER_SIZE = HEADER.size

MAX_TAG = 2**32 - 1
MAX_RANK = 2**32 - 1

BUFFER_SUFFIX = ".buf"
LOCK_SUFFIX = ".lock"

_NAME_RE = re.compile(r"^msg_d(\d+)_s(\d+)_t(\d+)\.(buf|lock)$")
_SHARED_RE = re.compile(r"^mcast_s(\d+)_t(\d+)\.(buf|lock)$")
TEMP_PREFIX = ".tmp-"


@dataclass(frozen=True)
class MessageEnvelope:
    source: int
    dest: int
    tag: int
    payload: bytes = b""

    def __post_init__(self):
        for name, value, limit in (("source", self.source, MAX_RANK),
                                   ("dest", self.dest, MAX_RANK),
                                   ("tag", self.tag, MAX_TAG)):
            if not 0 <= value <= limit:
                raise ValueError(f"{name}={value} outside [0, {limit}]")


@dataclass(frozen=True)
class MessageFilePair:
    buffer_path: Path
    lock_path: Path


def message_file_names(dest: int, source: int, tag: int, dir: Path | str) -> MessageFilePair:
    """
    Builds the buffer/lock path pair for a message.

    :param dest: Receiving rank.
    :param source: Sending rank.
    :param tag: Message tag.
    :param dir: Absolute directory holding the pair.
    :return: The pair of paths.
    """
    dir = Path(dir)
    if not dir.is_absolute():
        raise ValueError(f"message directory must be absolute: {dir}")
    stem = f"msg_d{dest}_s{source}_t{tag}"
    return MessageFilePair(dir / f"{stem}{BUFFER_SUFFIX}", dir / f"{stem}{LOCK_SUFFIX}")


def shared_file_names(source: int, tag: int, dir: Path | str) -> MessageFilePair:
    """Real buffer and lock of a multicast whose members reach them through links."""
    stem = f"mcast_s{source}_t{tag}"
    return MessageFilePair(Path(dir) / f"{stem}{BUFFER_SUFFIX}", Path(dir) / f"{stem}{LOCK_SUFFIX}")


def parse_message_file_name(name: str) -> tuple[int, int, int, str] | None:
    """
    Inverse of :func:`message_file_names` for a single file name.

    :param name: Base name of a buffer or lock file.
    :return: ``(dest, source, tag, kind)`` with kind ``"buf"`` or ``"lock"``,
        or ``None`` when the name is not a message file.
    """
    m = _NAME_RE.match(name)
    if m is None:
        return None
    dest, source, tag, kind = m.groups()
    return int(dest), int(source), int(tag), kind


def is_message_file(name: str) -> bool:
    """True for point-to-point pairs, shared multicast files and unfinished temporaries."""
    return (parse_message_file_name(name) is not None or _SHARED_RE.match(name) is not None
            or name.startswith(TEMP_PREFIX))


def encode_message(env: MessageEnvelope) -> bytes:
    header = HEADER.pack(MAGIC, FORMAT_VERSION, env.source, env.dest, env.tag,
                         len(env.payload), zlib.crc32(env.payload))
    return header + env.payload


def decode_message(data: bytes) -> MessageEnvelope:
    """
    Parses and verifies one buffer frame.

    :param data: Complete frame bytes.
    :return: The envelope.
    """
    if len(data) < HEADER_SIZE:
        raise Truncated(f"frame of {len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, source, dest, tag, length, crc = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"frame version {version}, expected {FORMAT_VERSION}")
    if len(data) - HEADER_SIZE != length:
        raise Truncated(f"header announces {length} payload bytes, frame holds {len(data) - HEADER_SIZE}")
    payload = bytes(data[HEADER_SIZE:])
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch(f"payload crc {zlib.crc32(payload):08x} != header crc {crc:08x}")
    return MessageEnvelope(source=source, dest=dest, tag=tag, payload=payload)
