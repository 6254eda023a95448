from . import FileComm_Base
from . import fc_msgcore
from . import fc_topology
from . import fc_transport
from . import fc_p2p_api
from . import fc_collectives_api
from . import fc_config
from . import filecomm
from . import fc_launcher
from . import fc_bench
from .filecomm import FileComm


__all__ = (
    'FileComm',
    'FileComm_Base',
    'fc_msgcore',
    'fc_topology',
    'fc_transport',
    'fc_p2p_api',
    'fc_collectives_api',
    'fc_config',
    'filecomm',
    'fc_launcher',
    'fc_bench',
)
