"""
Programs the launcher runs once per rank: an environment echo and the
benchmark kernels. Every kernel checks the data it moved; a mismatch exits
non-zero so the benchmark never reports a time for wrong data.

    python -m filecomm.fc_rankprog echo OUT_DIR
    python -m filecomm.fc_rankprog p2p --sizes 16,1024 --reps 4 --out res.json
    python -m filecomm.fc_rankprog bcast --scheme node_aware --reps 4 --out res.json
    python -m filecomm.fc_rankprog agg --sizes 131072 --reps 4 --out res.json
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from .FileComm_Base import FileCommError
from .fc_collectives_api import TAG_STRIDE, DistVector
from .filecomm import ENV_LOG_LEVEL, ENV_WORKDIR, FileComm

logger = logging.getLogger(__name__)

ACK = struct.Struct("<IIQ")
SCHEMES = ("central", "node_aware", "naive_localfs")
WARMUP_TAG = 7


class BenchCheckFailed(FileCommError):
    pass


def payload_for(seed: int, key: int, size: int) -> bytes:
    return np.random.default_rng([seed, key]).integers(0, 256, size, dtype=np.uint8).tobytes()


def write_json(path: Path | str, record: dict) -> None:
    Path(path).write_text(json.dumps(record, sort_keys=True), encoding="utf-8")


def stats_path(comm: FileComm, stats_dir: str | None = None) -> Path:
    base = Path(stats_dir) if stats_dir else Path(os.environ[ENV_WORKDIR]) / "stats"
    return base / f"rank{comm.rank}.json"


def naive_mcast(comm: FileComm, root: int, tag: int, payload: bytes | None = None) -> bytes:
    """
    Broadcast by one point-to-point send per receiver. Every remote receiver
    costs its own buffer and lock copy.
    """
    p2p = comm.p2p
    if comm.rank == root:
        for r in range(comm.np):
            if r != root:
                p2p.send(r, tag, payload)
        return bytes(payload)
    return p2p.recv(root, tag)


def run_echo(comm_env: dict, out_dir: str) -> int:
    keys = ("FCOMM_RANK", "FCOMM_NP", "FCOMM_MAP_FILE", "FCOMM_MSG_DIR")
    record = {k: comm_env.get(k) for k in keys}
    write_json(Path(out_dir) / f"rank{record['FCOMM_RANK']}.json", record)
    return 0


def run_p2p(comm: FileComm, args) -> int:
    if comm.np != 2:
        raise BenchCheckFailed(f"p2p benchmark needs exactly 2 ranks, got {comm.np}")
    p2p = comm.p2p
    peer = 1 - comm.rank
    # untimed exchange so both ranks are up before the clock starts
    if comm.rank == 0:
        p2p.send(peer, WARMUP_TAG, b"w")
        p2p.recv(peer, WARMUP_TAG)
    else:
        p2p.recv(peer, WARMUP_TAG)
        p2p.send(peer, WARMUP_TAG, b"w")

    times: dict[str, list[float]] = {}
    copies: dict[str, list[int]] = {}
    for i, size in enumerate(args.sizes):
        payload = payload_for(args.seed, i, size)
        for rep in range(args.reps):
            tag = TAG_STRIDE + 2 * (i * args.reps + rep)
            if comm.rank == 0:
                before = comm.metrics.snapshot()
                t0 = time.perf_counter()
                p2p.send(peer, tag, payload)
                sent = comm.metrics.delta(before)
                crc, ok, length = ACK.unpack(p2p.recv(peer, tag + 1))
                t1 = time.perf_counter()
                if not ok or crc != zlib.crc32(payload) or length != size:
                    raise BenchCheckFailed(f"{size}-byte message arrived damaged")
                times.setdefault(str(size), []).append((t1 - t0) / 2)
                copies.setdefault(str(size), []).append(sent.remote_copies)
            else:
                data = p2p.recv(peer, tag)
                p2p.send(peer, tag + 1, ACK.pack(zlib.crc32(data), int(data == payload), len(data)))
    if comm.rank == 0:
        write_json(args.out, {"times": times, "remote_copies": copies})
    return 0


def _calibrate_acks(comm: FileComm, args, tag_base: int) -> float:
    """
    Cost of gathering one ack from every rank: the slowest ack delivery plus
    the root's sequential reads. Ranks report the delivery time of round
    ``c`` inside their round ``c + 1`` ack.
    """
    p2p = comm.p2p
    root = 0
    others = [r for r in range(comm.np) if r != root]
    if not others:
        return 0.0
    rounds = args.reps + 1
    if comm.rank != root:
        last = 0.0
        for c in range(rounds):
            t0 = time.perf_counter()
            p2p.send(root, tag_base + c, struct.pack("<d", last))
            last = time.perf_counter() - t0
        return 0.0
    reads, delivered = [], []
    for c in range(rounds):
        while not all(p2p.probe(r, tag_base + c) for r in others):
            time.sleep(0.0005)
        t0 = time.perf_counter()
        sends = [struct.unpack("<d", p2p.recv(r, tag_base + c))[0] for r in others]
        reads.append(time.perf_counter() - t0)
        if c > 0:
            delivered.append(max(sends))
    return float(np.median(reads[1:]) + np.median(delivered))


def run_bcast(comm: FileComm, args) -> int:
    coll = comm.collectives
    p2p = comm.p2p
    root = 0
    stride = 4 * TAG_STRIDE
    ack_cost = _calibrate_acks(comm, args, TAG_STRIDE)
    raw, copies = [], []
    for rep in range(args.reps):
        base = (rep + 1) * stride
        expected = payload_for(args.seed, rep, args.payload_bytes)
        before = comm.metrics.snapshot()
        t0 = time.perf_counter()
        outgoing = expected if comm.rank == root else None
        if args.scheme == "central":
            data = coll.bcast_central(root, base, outgoing)
        elif args.scheme == "node_aware":
            data = coll.bcast_node_aware(root, base, outgoing)
        else:
            data = naive_mcast(comm, root, base, outgoing)
        copies.append(comm.metrics.delta(before).remote_copies)
        if comm.rank == root:
            acks = [p2p.recv(r, base + TAG_STRIDE) for r in range(comm.np) if r != root]
            raw.append(time.perf_counter() - t0)
            if any(a != b"\x01" for a in acks):
                raise BenchCheckFailed(f"broadcast rep {rep}: a rank received different bytes")
        else:
            p2p.send(root, base + TAG_STRIDE, b"\x01" if data == expected else b"\x00")
    comm.dump_stats(stats_path(comm, args.stats_dir), bcast_copies=copies)
    if comm.rank == root:
        write_json(args.out, {"raw_times": raw, "ack_cost": ack_cost})
    return 0


def run_agg(comm: FileComm, args) -> int:
    coll = comm.collectives
    stride = 2 * TAG_STRIDE
    times: dict[str, list[float]] = {}
    copies: dict[str, list[int]] = {}
    messages: dict[str, list[int]] = {}
    key = 0
    for i, size in enumerate(args.sizes):
        values = np.random.default_rng([args.seed, i]).standard_normal(size // 8)
        checksum = zlib.crc32(values.astype("<f8").tobytes())
        v = DistVector.from_global(values, comm.np, comm.rank)
        for rep in range(args.reps):
            key += 1
            base = key * stride
            # release every rank at once, untimed
            coll.bcast_node_aware(0, base, b"g" if comm.rank == 0 else None)
            before = comm.metrics.snapshot()
            t0 = time.perf_counter()
            result = coll.agg(v, base + TAG_STRIDE)
            elapsed = time.perf_counter() - t0
            d = comm.metrics.delta(before)
            copies.setdefault(str(size), []).append(d.remote_copies)
            messages.setdefault(str(size), []).append(d.messages_published)
            if comm.rank == 0:
                if zlib.crc32(result.astype("<f8").tobytes()) != checksum:
                    raise BenchCheckFailed(f"aggregated {size}-byte array differs from the distributed one")
                times.setdefault(str(size), []).append(elapsed)
    comm.dump_stats(stats_path(comm, args.stats_dir), agg_copies=copies, agg_messages=messages)
    if comm.rank == 0:
        write_json(args.out, {"times": times})
    return 0


def _sizes(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fc_rankprog")
    sub = parser.add_subparsers(dest="program", required=True)

    echo = sub.add_parser("echo")
    echo.add_argument("out_dir")

    for name in ("p2p", "bcast", "agg"):
        p = sub.add_parser(name)
        p.add_argument("--reps", type=int, default=4)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--stats-dir", help="where to write per-rank counters (default: the job's stats directory)")
        if name != "bcast":
            p.add_argument("--sizes", type=_sizes, required=True)
    bcast = sub.choices["bcast"]
    bcast.add_argument("--scheme", choices=SCHEMES, default="node_aware")
    bcast.add_argument("--payload-bytes", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get(ENV_LOG_LEVEL, "WARNING"),
                        format="%(asctime)s pid%(process)d %(name)s %(levelname)s %(message)s")
    if args.program == "echo":
        return run_echo(dict(os.environ), args.out_dir)
    comm = FileComm.from_env()
    runners = {"p2p": run_p2p, "bcast": run_bcast, "agg": run_agg}
    try:
        return runners[args.program](comm, args)
    except FileCommError:
        logger.exception("rank %d: %s benchmark failed", comm.rank, args.program)
        return 1


if __name__ == "__main__":
    sys.exit(main())
