import random
from pathlib import Path

import pytest

from filecomm.FileComm_Base import BadMagic, ChecksumMismatch, Truncated, UnsupportedVersion
from filecomm.fc_msgcore import (HEADER_SIZE, MessageEnvelope, decode_message, encode_message,
                                 is_message_file, message_file_names, parse_message_file_name,
                                 shared_file_names)


def test_file_names_follow_template():
    pair = message_file_names(dest=2, source=1, tag=0, dir="/tmp/j1")
    assert pair.buffer_path == Path("/tmp/j1/msg_d2_s1_t0.buf")
    assert pair.lock_path == Path("/tmp/j1/msg_d2_s1_t0.lock")


def test_self_send_names():
    pair = message_file_names(0, 0, 7, "/x")
    assert str(pair.buffer_path) == "/x/msg_d0_s0_t7.buf"
    assert str(pair.lock_path) == "/x/msg_d0_s0_t7.lock"


def test_lock_is_buffer_with_lock_suffix():
    pair = message_file_names(5, 3, 11, "/x")
    assert pair.lock_path == pair.buffer_path.with_suffix(".lock")
    assert pair.lock_path.parent == pair.buffer_path.parent


def test_names_deterministic():
    assert message_file_names(4, 9, 2, "/d") == message_file_names(4, 9, 2, "/d")


def test_relative_dir_rejected():
    with pytest.raises(ValueError):
        message_file_names(0, 1, 0, "relative/dir")


def test_names_injective():
    assert message_file_names(2, 1, 0, "/x") != message_file_names(2, 10, 0, "/x")
    seen = set()
    for dest in range(100):
        for source in range(100):
            for tag in range(10):
                seen.add(message_file_names(dest, source, tag, "/x").buffer_path.name)
    assert len(seen) == 100 * 100 * 10


def test_parse_name_inverts_template():
    pair = message_file_names(12, 3, 40, "/x")
    assert parse_message_file_name(pair.buffer_path.name) == (12, 3, 40, "buf")
    assert parse_message_file_name(pair.lock_path.name) == (12, 3, 40, "lock")
    assert parse_message_file_name(".tmp-msg_d1_s0_t0.buf-abc") is None
    assert parse_message_file_name("mcast_s0_t0.buf") is None


def test_message_file_census_names():
    shared = shared_file_names(3, 7, "/x")
    assert (shared.buffer_path.name, shared.lock_path.name) == ("mcast_s3_t7.buf", "mcast_s3_t7.lock")
    assert is_message_file(shared.lock_path.name)
    assert is_message_file("msg_d1_s0_t0.buf")
    assert is_message_file(".tmp-msg_d1_s0_t0.buf-abc")
    assert not is_message_file("hostmap.txt")
    assert not is_message_file("msg_d1_s0_t0.bak")


def test_empty_payload_is_header_only():
    frame = encode_message(MessageEnvelope(1, 2, 3, b""))
    assert len(frame) == HEADER_SIZE
    assert decode_message(frame).payload == b""


def test_header_layout_is_fixed():
    frame = encode_message(MessageEnvelope(source=1, dest=2, tag=3, payload=b"abcd"))
    assert HEADER_SIZE == 30
    assert frame[:4] == b"FMSG"
    assert frame[4:6] == (1).to_bytes(2, "little")
    assert frame[6:10] == (1).to_bytes(4, "little")
    assert frame[10:14] == (2).to_bytes(4, "little")
    assert frame[14:18] == (3).to_bytes(4, "little")
    assert frame[18:26] == (4).to_bytes(8, "little")
    assert frame[HEADER_SIZE:] == b"abcd"


def test_round_trip_random_envelopes():
    rng = random.Random(1234)
    for _ in range(1000):
        env = MessageEnvelope(source=rng.randrange(2**32), dest=rng.randrange(2**32),
                              tag=rng.randrange(2**32), payload=rng.randbytes(rng.randrange(0, 64)))
        frame = encode_message(env)
        assert len(frame) == HEADER_SIZE + len(env.payload)
        assert decode_message(frame) == env


def test_single_bit_flips_detected():
    rng = random.Random(99)
    payload = rng.randbytes(256)
    frame = bytearray(encode_message(MessageEnvelope(0, 1, 0, payload)))
    for _ in range(10_000):
        corrupt = bytearray(frame)
        bit = rng.randrange(len(payload) * 8)
        corrupt[HEADER_SIZE + bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(ChecksumMismatch):
            decode_message(bytes(corrupt))


def test_truncated_frame():
    frame = encode_message(MessageEnvelope(0, 1, 0, b"0123456789abcdef"))
    with pytest.raises(Truncated):
        decode_message(frame[:-1])
    with pytest.raises(Truncated):
        decode_message(frame[:10])


def test_bad_magic():
    frame = bytearray(encode_message(MessageEnvelope(0, 1, 0, b"x")))
    frame[:4] = b"XMSG"
    with pytest.raises(BadMagic):
        decode_message(bytes(frame))


def test_unsupported_version():
    frame = bytearray(encode_message(MessageEnvelope(0, 1, 0, b"x")))
    frame[4:6] = (9).to_bytes(2, "little")
    with pytest.raises(UnsupportedVersion):
        decode_message(bytes(frame))


def test_envelope_rejects_out_of_range_tag():
    with pytest.raises(ValueError):
        MessageEnvelope(0, 1, 2**32, b"")
