from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from .FileComm_Base import FileCommError, PollPolicy
from .fc_bench import AGG_SIZES, BCAST_NPS, BENCH_POLL, P2P_SIZES, SweepSpec, bench_agg, bench_bcast, bench_p2p, write_csv
from .fc_config import Placement, load_job_config
from .fc_launcher import build_layout, run_job
from .fc_topology import format_map
from .fc_transport import CopierConfig, CopierKind, TransportMode

logger = logging.getLogger(__name__)

_SIZE_RE = re.compile(r"^(\d+)\s*(|k|ki|kib|m|mi|mib|g|gi|gib)$", re.IGNORECASE)
_UNITS = {"": 1, "k": 1024, "m": 1024**2, "g": 1024**3}

TRANSPORT_ALIASES = {
    "shared": TransportMode.SHARED_FS, "sharedfs": TransportMode.SHARED_FS,
    "local": TransportMode.LOCAL_FS, "localfs": TransportMode.LOCAL_FS,
}


def parse_size(text: str) -> int:
    """
    Parses ``16``, ``64K``, ``1Mi``, ``16MiB`` (binary units).

    :param text: Size text.
    :return: Bytes.
    """
    m = _SIZE_RE.match(text.strip())
    if m is None:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    return int(m.group(1)) * _UNITS[m.group(2)[:1].lower()]


def size_list(text: str) -> tuple[int, ...]:
    return tuple(parse_size(s) for s in text.split(",") if s.strip())


def int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from None


def transport_list(text: str) -> tuple[TransportMode, ...]:
    try:
        return tuple(TRANSPORT_ALIASES[s.strip().lower()] for s in text.split(",") if s.strip())
    except KeyError as err:
        raise argparse.ArgumentTypeError(f"unknown transport {err.args[0]!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fcomm", description="File-based message passing toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="launch a job from a config file")
    run.add_argument("config", type=Path)

    validate = sub.add_parser("validate", help="plan a job's layout and print it without running")
    validate.add_argument("config", type=Path)

    bench = sub.add_parser("bench", help="run a benchmark sweep")
    bench.add_argument("benchmark", choices=("p2p", "bcast", "agg"))
    bench.add_argument("--sizes", type=size_list, help="message or global array sizes, e.g. 16,1K,1Mi")
    bench.add_argument("--np", type=int_list, help="rank counts")
    bench.add_argument("--nodes", type=int_list, help="virtual node counts")
    bench.add_argument("--transport", type=transport_list, default=(TransportMode.SHARED_FS, TransportMode.LOCAL_FS))
    bench.add_argument("--scheme", default="central,node_aware,naive_localfs", help="broadcast schemes")
    bench.add_argument("--placement", choices=[p.value for p in Placement], default=Placement.CONTIGUOUS.value)
    bench.add_argument("--copier-latency-ms", type=float, default=0.0)
    bench.add_argument("--copier-bandwidth", type=float, default=None, help="bytes per second")
    bench.add_argument("--reps", type=int, default=4)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--payload-bytes", type=int, default=32)
    bench.add_argument("--workdir", type=Path, default=Path("/tmp/fcomm-bench"))
    bench.add_argument("--timeout", type=float, default=600.0)
    bench.add_argument("--poll-initial-ms", type=float, default=BENCH_POLL.initial_interval * 1000)
    bench.add_argument("--poll-max-ms", type=float, default=BENCH_POLL.max_interval * 1000,
                       help="longest wait between checks for an incoming lock")
    bench.add_argument("--out", type=Path, default=Path("fcomm-bench.csv"))
    bench.add_argument("--extras", action="store_true", help="add raw median and ack cost columns")
    return parser


def cmd_run(args) -> int:
    spec = load_job_config(args.config)
    result = run_job(spec)
    if result.killed:
        logger.error("ranks %s killed at the %ss timeout", list(result.killed), spec.timeout_s)
    elif not result.success:
        logger.error("ranks %s failed", result.failed_ranks)
    print(f"wall_time_s={result.wall_time_s:.3f} exit_codes={result.exit_codes} "
          f"residual_files={result.residual_files}")
    return 0 if result.success else 1


def cmd_validate(args) -> int:
    hmap = build_layout(load_job_config(args.config)).hmap
    print(format_map(hmap), end="")
    for node in hmap.nodes():
        leader = hmap.leader_of(node)
        print(f"# {node}: leader {leader}, ranks {hmap.node_peers(leader)}")
    return 0


def cmd_bench(args) -> int:
    defaults = {
        "p2p": (P2P_SIZES, (2,), (1,)),
        "bcast": ((args.payload_bytes,), BCAST_NPS, (8,)),
        "agg": (AGG_SIZES, (1, 2, 4, 8), (2,)),
    }[args.benchmark]
    spec = SweepSpec(
        sizes=args.sizes or defaults[0],
        nps=args.np or defaults[1],
        nodes=args.nodes or defaults[2],
        repetitions=args.reps,
        transports=args.transport,
        schemes=tuple(s.strip() for s in args.scheme.split(",") if s.strip()),
        copier=CopierConfig(kind=CopierKind.LOOPBACK, latency_ms=args.copier_latency_ms,
                            bandwidth_bytes_per_s=args.copier_bandwidth),
        placement=Placement(args.placement),
        workdir=args.workdir,
        seed=args.seed,
        payload_bytes=args.payload_bytes,
        timeout_s=args.timeout,
        poll=PollPolicy(initial_interval=args.poll_initial_ms / 1000, max_interval=args.poll_max_ms / 1000,
                        timeout=BENCH_POLL.timeout),
    )
    runner = {"p2p": bench_p2p, "bcast": bench_bcast, "agg": bench_agg}[args.benchmark]
    records = runner(spec)
    if not records:
        logger.error("no configuration selected, nothing was run")
        return 1
    write_csv(records, args.out, extras=args.extras)
    logger.info("wrote %d records to %s", len(records), args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    commands = {"run": cmd_run, "validate": cmd_validate, "bench": cmd_bench}
    try:
        return commands[args.command](args)
    except (FileCommError, ValueError, OSError) as err:
        logger.error("%s", err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
