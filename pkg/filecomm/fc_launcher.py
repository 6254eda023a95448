from __future__ import annotations

import logging
import os
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .fc_config import JobSpec, JobSpecError, LaunchError, Placement, format_job_config
from .fc_msgcore import is_message_file
from .fc_topology import HostRankMap, RankEntry, write_map
from .fc_transport import TransportMode
from .filecomm import ENV_CONFIG, ENV_LOG_LEVEL, ENV_MAP_FILE, ENV_MSG_DIR, ENV_NP, ENV_RANK, ENV_WORKDIR

logger = logging.getLogger(__name__)

SHARED_DIR = "shared"
MAP_FILE = "hostmap.txt"
CONFIG_FILE = "job.conf"
STATS_DIR = "stats"
KILL_GRACE_S = 0.4
REAP_INTERVAL_S = 0.01


class SpawnFailed(LaunchError):
    pass


class TimeoutKilled(LaunchError):
    pass


class JobFailed(LaunchError):
    pass


class LayoutIoError(LaunchError):
    pass


@dataclass(frozen=True)
class NodeLayout:
    workdir: Path
    hmap: HostRankMap
    map_file: Path
    config_file: Path
    inbox_dirs: tuple[Path, ...]
    stats_dir: Path


@dataclass
class JobHandle:
    spec: JobSpec
    layout: NodeLayout
    procs: list[subprocess.Popen]
    started: float

    @property
    def pids(self) -> list[int]:
        return [p.pid for p in self.procs]


@dataclass
class JobResult:
    exit_codes: list[int]
    wall_time_s: float
    killed: tuple[int, ...] = ()
    residual_files: int = 0

    @property
    def success(self) -> bool:
        return all(code == 0 for code in self.exit_codes)

    @property
    def failed_ranks(self) -> list[int]:
        return [r for r, code in enumerate(self.exit_codes) if code != 0]

    def raise_for_status(self) -> None:
        if self.killed:
            raise TimeoutKilled(f"ranks {list(self.killed)} killed after {self.wall_time_s:.2f}s")
        if not self.success:
            codes = {r: self.exit_codes[r] for r in self.failed_ranks}
            raise JobFailed(f"ranks failed with exit codes {codes}")


@dataclass(frozen=True)
class TeardownReport:
    residual_files: int
    removed: bool
    leftovers: tuple[Path, ...] = field(default=())


def assign_nodes(np_: int, nodes: int, placement: Placement) -> list[int]:
    """
    Node index of every rank.

    Contiguous placement gives node ``i`` a block of ``ceil(np/nodes)`` ranks
    for the first ``np % nodes`` nodes and ``floor(np/nodes)`` after that.
    Round-robin puts rank ``r`` on node ``r % nodes``.

    :param np_: Number of ranks.
    :param nodes: Number of nodes.
    :param placement: Placement policy.
    :return: List indexed by rank.
    """
    if placement == Placement.ROUND_ROBIN:
        return [r % nodes for r in range(np_)]
    base, extra = divmod(np_, nodes)
    assignment = []
    for node in range(nodes):
        assignment.extend([node] * (base + (1 if node < extra else 0)))
    return assignment


def build_layout(spec: JobSpec) -> NodeLayout:
    """
    Computes the job's host map and paths without touching the filesystem.

    :param spec: Job description.
    :return: The layout :func:`plan_layout` would prepare.
    """
    spec.validate()
    names = list(spec.hosts) or [f"vnode{i}" for i in range(spec.nodes)]
    assignment = assign_nodes(spec.np, spec.nodes, spec.placement)
    workdir = spec.workdir
    if spec.transport == TransportMode.SHARED_FS:
        dirs = [workdir / SHARED_DIR] * spec.np
    else:
        dirs = [workdir / names[assignment[r]] for r in range(spec.np)]
    hmap = HostRankMap(tuple(RankEntry(names[assignment[r]], dirs[r]) for r in range(spec.np)))
    return NodeLayout(workdir=workdir, hmap=hmap, map_file=workdir / MAP_FILE,
                      config_file=workdir / CONFIG_FILE, inbox_dirs=tuple(dict.fromkeys(dirs)),
                      stats_dir=workdir / STATS_DIR)


def plan_layout(spec: JobSpec) -> NodeLayout:
    """
    Creates the job's directories and writes its host map and config.

    :param spec: Job description.
    :return: The prepared layout.
    """
    layout = build_layout(spec)
    try:
        for d in layout.inbox_dirs:
            d.mkdir(parents=True, exist_ok=True)
        layout.stats_dir.mkdir(parents=True, exist_ok=True)
        write_map(layout.hmap, layout.map_file)
        layout.config_file.write_text(format_job_config(spec), encoding="utf-8")
    except OSError as err:
        raise LayoutIoError(f"cannot prepare {layout.workdir}: {err}") from err
    logger.info("planned %d ranks on %d nodes (%s, %s) in %s", spec.np, len(layout.hmap.nodes()),
                spec.placement.value, spec.transport.value, layout.workdir)
    return layout


def rank_env(spec: JobSpec, layout: NodeLayout, r: int, base=None) -> dict[str, str]:
    env = dict(os.environ if base is None else base)
    env.update({
        ENV_RANK: str(r),
        ENV_NP: str(spec.np),
        ENV_MAP_FILE: str(layout.map_file),
        ENV_MSG_DIR: str(layout.hmap.msg_dir_of(r)),
        ENV_CONFIG: str(layout.config_file),
        ENV_WORKDIR: str(layout.workdir),
        ENV_LOG_LEVEL: spec.log_level,
    })
    return env


def _stop(procs: list[subprocess.Popen]) -> list[int]:
    live = [i for i, p in enumerate(procs) if p.poll() is None]
    for i in live:
        procs[i].terminate()
    deadline = time.monotonic() + KILL_GRACE_S
    for i in live:
        try:
            procs[i].wait(timeout=max(0.0, deadline - time.monotonic()))
        except subprocess.TimeoutExpired:
            procs[i].kill()
            procs[i].wait()
    return live


def launch(spec: JobSpec, layout: NodeLayout, stdout=None, stderr=None) -> JobHandle:
    """
    Starts one process per rank.

    :param spec: Job description; ``program`` is run for every rank.
    :param layout: Layout from :func:`plan_layout`.
    :param stdout: Passed to every child (default: inherit).
    :param stderr: Passed to every child (default: inherit).
    :return: Handle on the running job.
    """
    spec.validate()
    if not spec.program:
        raise JobSpecError("no program to run")
    executable = shutil.which(spec.program[0])
    if executable is None:
        teardown(layout)
        raise SpawnFailed(f"program {spec.program[0]!r} not found")
    procs: list[subprocess.Popen] = []
    started = time.monotonic()
    for r in range(spec.np):
        try:
            procs.append(subprocess.Popen([executable, *spec.program[1:]], env=rank_env(spec, layout, r),
                                          stdout=stdout, stderr=stderr, stdin=subprocess.DEVNULL))
        except OSError as err:
            _stop(procs)
            teardown(layout)
            raise SpawnFailed(f"rank {r}: {err}") from err
    logger.info("launched %d ranks: pids %s", spec.np, [p.pid for p in procs])
    return JobHandle(spec=spec, layout=layout, procs=procs, started=started)


def wait(handle: JobHandle, timeout: float | None = None) -> JobResult:
    """
    Reaps every rank, killing the stragglers once ``timeout`` has passed.

    :param handle: Running job.
    :param timeout: Seconds since launch; defaults to the job timeout.
    :return: Per-rank exit codes and wall time.
    """
    timeout = handle.spec.timeout_s if timeout is None else timeout
    deadline = None if timeout is None else handle.started + timeout
    killed: list[int] = []
    while any(p.poll() is None for p in handle.procs):
        if deadline is not None and time.monotonic() >= deadline:
            killed = _stop(handle.procs)
            logger.warning("killed ranks %s after %.2fs timeout", killed, timeout)
            break
        time.sleep(REAP_INTERVAL_S)
    result = JobResult(exit_codes=[p.returncode for p in handle.procs],
                       wall_time_s=time.monotonic() - handle.started, killed=tuple(killed))
    logger.info("job finished in %.3fs, exit codes %s", result.wall_time_s, result.exit_codes)
    return result


def residual_files(layout: NodeLayout) -> list[Path]:
    """Message files still present in the job's inboxes, staging directories included."""
    found = []
    for d in layout.inbox_dirs:
        for root, _dirs, files in os.walk(d):
            found.extend(Path(root) / f for f in files if is_message_file(f))
    return sorted(found)


def teardown(layout: NodeLayout, keep_files: bool = False) -> TeardownReport:
    """
    Counts leftover message files, then removes everything the layout created.

    :param layout: Layout of the finished job.
    :param keep_files: Leave the directories and generated files in place.
    :return: Residual-file report.
    """
    leftovers = residual_files(layout)
    if leftovers:
        logger.warning("%d residual message files in %s", len(leftovers), layout.workdir)
    if keep_files:
        return TeardownReport(len(leftovers), False, tuple(leftovers))
    try:
        for d in (*layout.inbox_dirs, layout.stats_dir):
            if d.exists():
                shutil.rmtree(d)
        layout.map_file.unlink(missing_ok=True)
        layout.config_file.unlink(missing_ok=True)
    except OSError as err:
        raise LayoutIoError(f"cannot clean up {layout.workdir}: {err}") from err
    return TeardownReport(len(leftovers), True, tuple(leftovers))


def run_job(spec: JobSpec, stdout=None, stderr=None) -> JobResult:
    """
    Plans, launches, waits for and tears down a job.

    :param spec: Job description.
    :return: Result, with the teardown's residual-file count.
    """
    layout = plan_layout(spec)
    handle = launch(spec, layout, stdout=stdout, stderr=stderr)
    try:
        result = wait(handle)
    finally:
        if any(p.poll() is None for p in handle.procs):
            _stop(handle.procs)
    result.residual_files = teardown(layout, spec.keep_files).residual_files
    return result
