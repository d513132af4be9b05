"""Miniature encrypted transport with a reversed wire format.

Two wire layouts share one engine. The baseline serializes frames the
conventional way and pays a reassembly copy on receive; the reversed
layout puts stream data first and control information after it, so an
in-order packet can be decrypted straight into application-owned stream
storage and committed without copying. The package bundles the codec,
the connection state machine, a deterministic pipe simulator, and a
benchmark harness that quantifies the difference.
"""

from .crypto import KeySchedule, derive_keys, expand_int, truncate_int
from .endpoint import Connection, Metrics, Role, connect
from .errors import (
    AuthenticationFailed,
    EncodingOverflow,
    FinalSizeError,
    MalformedFrame,
    MalformedHeader,
    ProtocolViolation,
    TransportError,
)
from .harness import (
    BatchResult,
    PipeConfig,
    TransferReport,
    bench_batch,
    bench_pair,
    run_transfer,
    sweep_buffered_lengths,
)
from .header import ShortHeader
from .mode import WireMode, parse_mode
from .stream_buf import AppRecvBufMap, OooStash, Plan, PlanKind, StreamRecvBuffer
from .wire import (
    AckFrame,
    ConnectionCloseFrame,
    Frame,
    MaxStreamDataFrame,
    PaddingFrame,
    PingFrame,
    StreamFrame,
)

__version__ = "0.1.0"

__all__ = [
    "AckFrame",
    "AppRecvBufMap",
    "AuthenticationFailed",
    "BatchResult",
    "Connection",
    "ConnectionCloseFrame",
    "EncodingOverflow",
    "FinalSizeError",
    "Frame",
    "KeySchedule",
    "MalformedFrame",
    "MalformedHeader",
    "MaxStreamDataFrame",
    "Metrics",
    "OooStash",
    "PaddingFrame",
    "PingFrame",
    "PipeConfig",
    "Plan",
    "PlanKind",
    "ProtocolViolation",
    "Role",
    "ShortHeader",
    "StreamFrame",
    "StreamRecvBuffer",
    "TransferReport",
    "TransportError",
    "WireMode",
    "bench_batch",
    "bench_pair",
    "connect",
    "derive_keys",
    "expand_int",
    "parse_mode",
    "run_transfer",
    "sweep_buffered_lengths",
    "truncate_int",
    "__version__",
]
