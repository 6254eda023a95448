import subprocess
import time
from pathlib import Path

import pytest

from filecomm.FileComm_Base import CopyFailed, StaleMessage
from filecomm.fc_msgcore import MessageEnvelope, decode_message
from filecomm.fc_transport import LoopbackCopier, ScpCopier, Transport, TransportMode

from conftest import build_map


def local_transport(hmap, rank, **copier):
    return Transport(TransportMode.LOCAL_FS, hmap, rank, copier=LoopbackCopier(**copier))


def test_shared_publish_writes_buffer_then_lock(tmp_path):
    hmap = build_map(tmp_path, [0, 0, 1, 1], TransportMode.SHARED_FS)
    t = Transport(TransportMode.SHARED_FS, hmap, rank=1)
    pair = t.publish(MessageEnvelope(1, 2, 0, b"hello"))
    assert pair.buffer_path.parent == tmp_path / "shared"
    assert decode_message(pair.buffer_path.read_bytes()).payload == b"hello"
    assert pair.lock_path.stat().st_size == 0
    assert pair.lock_path.stat().st_mtime >= pair.buffer_path.stat().st_mtime
    assert not list((tmp_path / "shared").glob(".tmp-*"))
    assert t.metrics.remote_copies == 0


def test_shared_inbox_is_common(tmp_path):
    hmap = build_map(tmp_path, [0, 1, 2], TransportMode.SHARED_FS)
    t = Transport(TransportMode.SHARED_FS, hmap, rank=0)
    assert t.inbox_of(0) == t.inbox_of(2)


def test_shared_mode_requires_one_directory(two_node_map):
    with pytest.raises(ValueError):
        Transport(TransportMode.SHARED_FS, two_node_map, rank=0)


def test_local_inboxes_follow_nodes(two_node_map):
    t = local_transport(two_node_map, 0)
    assert t.inbox_of(2) == t.inbox_of(3)
    assert t.inbox_of(2) != t.inbox_of(0)


def test_colocated_publish_lands_in_node_inbox(two_node_map):
    t = local_transport(two_node_map, 3)
    pair = t.publish(MessageEnvelope(3, 2, 0, b"Mc"))
    assert pair.lock_path.parent == two_node_map.msg_dir_of(2)
    assert t.metrics.remote_copies == 0


def test_remote_publish_is_staged_then_transferred(two_node_map):
    t = local_transport(two_node_map, 2)
    pair = t.publish(MessageEnvelope(2, 0, 0, b"Mb"))
    assert pair.lock_path.parent == two_node_map.msg_dir_of(2) / "outgoing"
    remote = t.transfer(pair, 0)
    assert remote.lock_path.parent == two_node_map.msg_dir_of(0)
    assert remote.buffer_path.read_bytes() == pair.buffer_path.read_bytes()
    assert t.metrics.remote_copies == 2
    assert t.metrics.bytes_copied == pair.buffer_path.stat().st_size


def test_republish_without_consumption_is_stale(two_node_map):
    t = local_transport(two_node_map, 1)
    t.publish(MessageEnvelope(1, 0, 4, b"a"))
    with pytest.raises(StaleMessage):
        t.publish(MessageEnvelope(1, 0, 4, b"b"))


def test_transfer_pays_latency_per_copy(two_node_map):
    t = local_transport(two_node_map, 2, latency_ms=5)
    pair = t.publish(MessageEnvelope(2, 0, 1, b"x" * 100))
    start = time.monotonic()
    t.transfer(pair, 0)
    assert time.monotonic() - start >= 0.010


def test_transfer_to_missing_directory_fails(two_node_map, tmp_path):
    t = local_transport(two_node_map, 2)
    pair = t.publish(MessageEnvelope(2, 0, 0, b"x"))
    two_node_map.msg_dir_of(0).rmdir()
    with pytest.raises(CopyFailed):
        t.transfer(pair, 0)


def test_lock_copied_after_buffer(two_node_map):
    seen = []

    class Recording(LoopbackCopier):
        def copy(self, local, node, remote):
            seen.append(remote.suffix)
            super().copy(local, node, remote)

    t = Transport(TransportMode.LOCAL_FS, two_node_map, 0, copier=Recording())
    t.transfer(t.publish(MessageEnvelope(0, 3, 0, b"x")), 3)
    assert seen == [".buf", ".lock"]


def test_scp_command_shape(monkeypatch):
    calls = []

    def fake_run(cmd, **kwargs):
        calls.append(cmd)
        return subprocess.CompletedProcess(cmd, 0, "", "")

    monkeypatch.setattr(subprocess, "run", fake_run)
    ScpCopier(connect_timeout_s=7).copy(Path("/a/msg.buf"), "node2", Path("/tmp/in/msg.buf"))
    assert calls == [["scp", "-B", "-o", "ConnectTimeout=7", "/a/msg.buf", "node2:/tmp/in/msg.buf"]]


def test_scp_failure_carries_diagnostic(monkeypatch):
    monkeypatch.setattr(subprocess, "run",
                        lambda cmd, **kw: subprocess.CompletedProcess(cmd, 1, "", "ssh: connect to host node2: No route"))
    with pytest.raises(CopyFailed) as err:
        ScpCopier().copy(Path("/a"), "node2", Path("/b"))
    assert "No route" in err.value.diagnostic


def test_transfer_over_unconsumed_message_is_stale(two_node_map):
    t = local_transport(two_node_map, 2)
    staged = t.publish(MessageEnvelope(2, 0, 9, b"first"))
    first = t.transfer(staged, 0)
    t.discard(staged)
    with pytest.raises(StaleMessage):
        t.transfer(t.publish(MessageEnvelope(2, 0, 9, b"second")), 0)
    assert decode_message(first.buffer_path.read_bytes()).payload == b"first"
    assert t.metrics.remote_copies == 2
