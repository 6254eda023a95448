from __future__ import annotations

import json
import logging
import os
from pathlib import Path

from .FileComm_Base import CommContext, PollPolicy
from .fc_collectives_api import Collectives
from .fc_config import JobSpecError, load_job_config
from .fc_p2p_api import P2P
from .fc_topology import HostRankMap, load_map
from .fc_transport import CopierConfig, Transport, TransportMode, make_copier

logger = logging.getLogger(__name__)

ENV_RANK = "FCOMM_RANK"
ENV_NP = "FCOMM_NP"
ENV_MAP_FILE = "FCOMM_MAP_FILE"
ENV_MSG_DIR = "FCOMM_MSG_DIR"
ENV_CONFIG = "FCOMM_CONFIG"
ENV_WORKDIR = "FCOMM_WORKDIR"
ENV_LOG_LEVEL = "FCOMM_LOG_LEVEL"


class FileComm:
    def __init__(self, ctx: CommContext):
        self.ctx = ctx

    @classmethod
    def create(cls,
               rank: int,
               hmap: HostRankMap,
               mode: TransportMode | str = TransportMode.LOCAL_FS,
               copier: CopierConfig | None = None,
               poll: PollPolicy | None = None,
               keep_files: bool = False) -> FileComm:
        """
        Builds a rank's communicator from its parts.

        :param rank: This process's rank.
        :param hmap: Host-to-rank map of the job.
        :param mode: Shared or local filesystem transport.
        :param copier: Cross-node copier settings (local mode).
        :param poll: Receive polling policy.
        :param keep_files: Leave consumed message files in place.
        :return: Communicator.
        """
        mode = TransportMode(mode)
        transport = Transport(mode=mode, map=hmap, rank=rank,
                              copier=make_copier(copier or CopierConfig()) if mode == TransportMode.LOCAL_FS else None)
        ctx = CommContext(rank=rank, np=hmap.np, transport=transport, poll=poll or PollPolicy(),
                          keep_files=keep_files)
        return cls(ctx)

    @classmethod
    def from_env(cls, environ=None) -> FileComm:
        """
        Builds the communicator of a rank process started by the launcher.

        :param environ: Mapping to read instead of ``os.environ``.
        :return: Communicator.
        """
        env = os.environ if environ is None else environ
        try:
            rank = int(env[ENV_RANK])
            np_ = int(env[ENV_NP])
            hmap = load_map(env[ENV_MAP_FILE])
            msg_dir = Path(env[ENV_MSG_DIR])
        except KeyError as err:
            raise JobSpecError(f"rank environment lacks {err.args[0]}") from None
        if hmap.np != np_:
            raise JobSpecError(f"{ENV_NP}={np_} but host map lists {hmap.np} ranks")
        if env.get(ENV_CONFIG):
            spec = load_job_config(env[ENV_CONFIG])
            comm = cls.create(rank, hmap, spec.transport, spec.copier, spec.poll, spec.keep_files)
        else:
            comm = cls.create(rank, hmap)
        inbox = comm.ctx.transport.inbox_of(rank)
        if inbox != msg_dir:
            raise JobSpecError(f"{ENV_MSG_DIR}={msg_dir} but host map gives {inbox}")
        # on real hosts nobody else creates the node-local inbox
        inbox.mkdir(parents=True, exist_ok=True)
        return comm

    @property
    def rank(self) -> int:
        return self.ctx.rank

    @property
    def np(self) -> int:
        return self.ctx.np

    @property
    def metrics(self):
        return self.ctx.transport.metrics

    @property
    def p2p(self):
        return P2P(self.ctx)

    @property
    def collectives(self):
        return Collectives(self.ctx)

    def dump_stats(self, path: Path | str, **extra) -> None:
        """
        Writes this rank's transfer counters as JSON.

        :param path: Output file.
        :param extra: Additional fields to record.
        """
        record = {"rank": self.rank, **self.metrics.as_dict(), **extra}
        Path(path).write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
