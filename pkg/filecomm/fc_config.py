"""
Job description and its ``key=value`` config file.

Example::

    np = 8
    nodes = 4
    placement = contiguous
    transport = local
    copier.kind = loopback
    copier.latency_ms = 5
    workdir = /tmp/fcomm-job
    timeout_s = 60
    program = python3 -m filecomm.fc_rankprog echo
"""
from __future__ import annotations

import enum
import math
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path

from .FileComm_Base import FileCommError, PollPolicy
from .fc_transport import CopierConfig, CopierKind, TransportMode


class LaunchError(FileCommError):
    pass


class JobSpecError(LaunchError):
    pass


class Placement(str, enum.Enum):
    CONTIGUOUS = "contiguous"
    ROUND_ROBIN = "round_robin"


# library polls forever; a job has a wall-clock limit anyway
JOB_POLL = PollPolicy(timeout=60.0)


@dataclass(frozen=True)
class JobSpec:
    np: int
    nodes: int = 1
    placement: Placement = Placement.CONTIGUOUS
    transport: TransportMode = TransportMode.LOCAL_FS
    copier: CopierConfig = field(default_factory=CopierConfig)
    workdir: Path = Path("/tmp/fcomm")
    program: tuple[str, ...] = ()
    timeout_s: float | None = None
    keep_files: bool = False
    hosts: tuple[str, ...] = ()
    max_ranks_per_node: int | None = None
    poll: PollPolicy = JOB_POLL
    log_level: str = "WARNING"

    def __post_init__(self):
        object.__setattr__(self, "placement", Placement(self.placement))
        object.__setattr__(self, "transport", TransportMode(self.transport))
        object.__setattr__(self, "workdir", Path(self.workdir))
        object.__setattr__(self, "program", tuple(self.program))
        object.__setattr__(self, "hosts", tuple(self.hosts))

    def validate(self) -> JobSpec:
        """
        Checks the invariants a launch relies on.

        :return: The same spec.
        """
        if self.np < 1:
            raise JobSpecError(f"np must be >= 1, got {self.np}")
        if self.nodes < 1:
            raise JobSpecError(f"nodes must be >= 1, got {self.nodes}")
        if self.hosts and len(self.hosts) != self.nodes:
            raise JobSpecError(f"{len(self.hosts)} hosts listed for {self.nodes} nodes")
        if not self.workdir.is_absolute():
            raise JobSpecError(f"workdir must be absolute: {self.workdir}")
        if self.max_ranks_per_node is not None:
            busiest = math.ceil(self.np / self.nodes)
            if busiest > self.max_ranks_per_node:
                raise JobSpecError(
                    f"{self.np} ranks on {self.nodes} nodes puts {busiest} on one node, "
                    f"limit is {self.max_ranks_per_node}"
                )
        if self.timeout_s is not None and self.timeout_s <= 0:
            raise JobSpecError(f"timeout_s must be positive, got {self.timeout_s}")
        return self

    def with_program(self, *program: str) -> JobSpec:
        return replace(self, program=tuple(program))


def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise JobSpecError(f"not a boolean: {value!r}")


def _optional_float(value: str) -> float | None:
    return None if value.strip().lower() in ("", "none", "inf") else float(value)


def parse_job_config(text: str) -> JobSpec:
    """
    Parses ``key=value`` lines into a :class:`JobSpec`.

    :param text: Config file content.
    :return: Validated spec.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise JobSpecError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()

    try:
        copier = CopierConfig(
            kind=CopierKind(raw.pop("copier.kind", CopierKind.LOOPBACK.value)),
            latency_ms=float(raw.pop("copier.latency_ms", 0)),
            bandwidth_bytes_per_s=_optional_float(raw.pop("copier.bandwidth_bytes_per_s", "")),
            stall_ms=float(raw.pop("copier.stall_ms", 0)),
            scp_options=tuple(shlex.split(raw.pop("copier.scp_options", ""))),
            connect_timeout_s=int(raw.pop("copier.connect_timeout_s", 10)),
        )
        poll = PollPolicy(
            initial_interval=float(raw.pop("poll.initial_ms", JOB_POLL.initial_interval * 1000)) / 1000,
            max_interval=float(raw.pop("poll.max_ms", JOB_POLL.max_interval * 1000)) / 1000,
            backoff_factor=float(raw.pop("poll.backoff", JOB_POLL.backoff_factor)),
            timeout=_optional_float(raw.pop("poll.timeout_s", str(JOB_POLL.timeout))),
        )
        max_rpn = raw.pop("max_ranks_per_node", "")
        hosts = raw.pop("hosts", "")
        spec = JobSpec(
            np=int(raw.pop("np")),
            nodes=int(raw.pop("nodes", 1)),
            placement=Placement(raw.pop("placement", Placement.CONTIGUOUS.value)),
            transport=TransportMode(raw.pop("transport", TransportMode.LOCAL_FS.value)),
            copier=copier,
            workdir=Path(raw.pop("workdir", "/tmp/fcomm")),
            program=tuple(shlex.split(raw.pop("program", ""))),
            timeout_s=_optional_float(raw.pop("timeout_s", "")),
            keep_files=_bool(raw.pop("keep_files", "false")),
            hosts=tuple(h.strip() for h in hosts.split(",") if h.strip()),
            max_ranks_per_node=int(max_rpn) if max_rpn else None,
            poll=poll,
            log_level=raw.pop("log_level", "WARNING").upper(),
        )
    except KeyError as err:
        raise JobSpecError(f"missing required key {err.args[0]}") from None
    except ValueError as err:
        raise JobSpecError(str(err)) from err
    if raw:
        raise JobSpecError(f"unknown keys: {', '.join(sorted(raw))}")
    return spec.validate()


def load_job_config(path: Path | str) -> JobSpec:
    return parse_job_config(Path(path).read_text(encoding="utf-8"))


def format_job_config(spec: JobSpec) -> str:
    def opt(value):
        return "none" if value is None else value

    lines = [
        f"np = {spec.np}",
        f"nodes = {spec.nodes}",
        f"placement = {spec.placement.value}",
        f"transport = {spec.transport.value}",
        f"copier.kind = {spec.copier.kind.value}",
        f"copier.latency_ms = {spec.copier.latency_ms}",
        f"copier.bandwidth_bytes_per_s = {opt(spec.copier.bandwidth_bytes_per_s)}",
        f"copier.stall_ms = {spec.copier.stall_ms}",
        f"copier.scp_options = {shlex.join(spec.copier.scp_options)}",
        f"copier.connect_timeout_s = {spec.copier.connect_timeout_s}",
        f"workdir = {spec.workdir}",
        f"program = {shlex.join(spec.program)}",
        f"timeout_s = {opt(spec.timeout_s)}",
        f"keep_files = {str(spec.keep_files).lower()}",
        f"hosts = {','.join(spec.hosts)}",
        f"max_ranks_per_node = {spec.max_ranks_per_node or ''}",
        f"poll.initial_ms = {spec.poll.initial_interval * 1000}",
        f"poll.max_ms = {spec.poll.max_interval * 1000}",
        f"poll.backoff = {spec.poll.backoff_factor}",
        f"poll.timeout_s = {opt(spec.poll.timeout)}",
        f"log_level = {spec.log_level}",
    ]
    return "\n".join(lines) + "\n"
