"""Page-granular software memory encryption simulator.

A hardware-independent model of page-fault-driven memory encryption: client
pages live encrypted in a server-side store, a bounded FIFO window of
plaintext pages serves the hot set, crypto workers confine the master key
outside dumpable RAM, and a cold-boot analyzer measures what an attacker
could recover from a memory dump at any instant.
"""

from .cipher import (
    BlockSeed,
    MasterKey,
    PAGE_SIZE,
    chacha20_block,
    crypt_page,
    page_keystream,
    parallel_crypt_page,
)
from .client import AccessEvent, ClientSpace, Region, parse_trace, replay
from .analyzer import (
    DumpSnapshot,
    ExposureReport,
    scan_key,
    scan_markers,
    take_snapshot,
)
from .bench import RunConfig, Simulation, WorkloadSpec, gen_trace, run_benchmark
from .errors import (
    AllocationError,
    ContractViolation,
    PageCryptError,
    PoolError,
    ProtocolError,
    SegmentationViolation,
    TraceError,
)
from .orchestrator import FaultEvent, Metrics, Orchestrator
from .ram import RamBuf, TaggedRam
from .store import ClientId, EncryptedPageStore
from .transport import ControlMsg, MsgType, TransferBuffer, decode_msg, encode_msg
from .window import SlidingWindow
from .workers import WorkerPool, WorkerRing

__version__ = "0.1.0"

__all__ = [
    "AccessEvent",
    "AllocationError",
    "BlockSeed",
    "ClientId",
    "ClientSpace",
    "ContractViolation",
    "ControlMsg",
    "DumpSnapshot",
    "EncryptedPageStore",
    "ExposureReport",
    "FaultEvent",
    "MasterKey",
    "Metrics",
    "MsgType",
    "Orchestrator",
    "PAGE_SIZE",
    "PageCryptError",
    "PoolError",
    "ProtocolError",
    "RamBuf",
    "Region",
    "RunConfig",
    "SegmentationViolation",
    "Simulation",
    "SlidingWindow",
    "TaggedRam",
    "TraceError",
    "TransferBuffer",
    "WorkerPool",
    "WorkerRing",
    "WorkloadSpec",
    "chacha20_block",
    "crypt_page",
    "decode_msg",
    "encode_msg",
    "gen_trace",
    "page_keystream",
    "parallel_crypt_page",
    "parse_trace",
    "replay",
    "run_benchmark",
    "scan_key",
    "scan_markers",
    "take_snapshot",
]
