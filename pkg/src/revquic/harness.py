"""Deterministic in-process pipe simulator and benchmark driver.

The simulator runs a sender and receiver connection pair over a pipe
that can reorder, drop, and duplicate datagrams under a seeded RNG, on
a virtual clock, so every run with the same configuration produces the
same TransferReport (wall time aside). The benchmark driver isolates
the receiver: datagrams are built and sealed once, then each repetition
restores their pristine bytes and times only the receive loop plus the
application drain.

Timing on a shared machine is noisy, so mode comparisons interleave
repetitions (baseline, reversed, baseline, ...) and the reported p5/p95
are a seeded bootstrap confidence interval of the median rather than raw
sample quantiles.
"""

from __future__ import annotations

import hashlib
import random
import statistics
import time
from dataclasses import dataclass, field
from heapq import heappop, heappush

from .crypto import derive_keys
from .endpoint import MAX_DATAGRAM, Connection, Role
from .mode import WireMode
from .stream_buf import AppRecvBufMap

TICK = 0.001  # virtual seconds per simulator step
STALL_LIMIT = 600.0  # virtual seconds before a stuck transfer aborts

_HARNESS_SECRET = hashlib.sha256(b"in-process pipe harness").digest()
_BOOTSTRAP_SEED = 0x5EED
_BOOTSTRAP_ROUNDS = 2000


@dataclass
class PipeConfig:
    seed: int = 0
    reorder_prob: float = 0.0
    reorder_depth: int = 3
    loss_prob: float = 0.0
    duplicate_prob: float = 0.0

    def __post_init__(self) -> None:
        for name in ("reorder_prob", "loss_prob", "duplicate_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.reorder_depth < 1:
            raise ValueError("reorder_depth must be >= 1")


@dataclass
class TransferReport:
    mode: str
    bytes_transferred: int
    wall_time: float
    throughput: float  # bytes per second, wall clock
    payload_bytes_copied: int
    payload_bytes_zero_copy: int
    ordered_ratio: float
    decrypt_failures: int
    retransmissions: int


@dataclass
class BatchResult:
    mode: str
    scenario: str
    bytes_per_rep: int
    reps: int
    median_ns: float
    p5_ns: float
    p95_ns: float
    throughput_mbps: float
    copied_bytes: int
    zero_copy_bytes: int
    calibration_ns: float
    times_ns: list[int] = field(repr=False, default_factory=list)


class _Pipe:
    """Hold-and-release datagram pipe.

    Every datagram gets a sequence number; a reordered datagram's
    release is deferred past up to reorder_depth later sends, which maps
    displacement directly onto the receiver's ordered-packet ratio.
    """

    def __init__(self, cfg: PipeConfig, rng: random.Random) -> None:
        self.cfg = cfg
        self.rng = rng
        self.seq = 0
        self._tie = 0
        self._heap: list[tuple[int, int, bytes]] = []

    def send(self, datagram: bytes) -> None:
        self.seq += 1
        if self.rng.random() < self.cfg.loss_prob:
            return
        due = self.seq
        if self.rng.random() < self.cfg.reorder_prob:
            due += self.rng.randint(1, self.cfg.reorder_depth)
        self._push(due, datagram)
        if self.rng.random() < self.cfg.duplicate_prob:
            self._push(due + self.rng.randint(1, self.cfg.reorder_depth), datagram)

    def _push(self, due: int, datagram: bytes) -> None:
        self._tie += 1
        heappush(self._heap, (due, self._tie, datagram))

    def ready(self, flush: bool = False) -> list[bytes]:
        """Datagrams whose release point has passed; flush releases all
        held datagrams (used when the sender goes idle so nothing
        strands in the pipe)."""
        horizon = self.seq if not flush else 1 << 62
        out = []
        while self._heap and self._heap[0][0] <= horizon:
            out.append(heappop(self._heap)[2])
        return out

    def __len__(self) -> int:
        return len(self._heap)


def run_transfer(
    mode: WireMode,
    transfer_size: int,
    n_streams: int = 1,
    pipe: PipeConfig | None = None,
) -> TransferReport:
    """Drive a complete transfer through the simulated pipe.

    Deterministic given the pipe seed; verifies stream content against
    the sender's input with a running checksum before reporting.
    """
    if pipe is None:
        pipe = PipeConfig()
    if n_streams < 1:
        raise ValueError("need at least one stream")
    rng = random.Random(pipe.seed)
    content_rng = random.Random(pipe.seed ^ 0xC0FFEE)

    sender = Connection(mode, Role.CLIENT, _HARNESS_SECRET)
    receiver = Connection(mode, Role.SERVER, _HARNESS_SECRET)
    appbuf = AppRecvBufMap()
    sender_appbuf = AppRecvBufMap(default_capacity=4096)

    per_stream = transfer_size // n_streams
    sent_hash: dict[int, "hashlib._Hash"] = {}
    recv_hash: dict[int, "hashlib._Hash"] = {}
    sizes: dict[int, int] = {}
    for i in range(n_streams):
        sid = i + 1
        size = per_stream + (transfer_size - per_stream * n_streams if i == 0 else 0)
        data = content_rng.randbytes(size)
        sender.stream_send(sid, data, fin=True)
        sent_hash[sid] = hashlib.sha256(data)
        recv_hash[sid] = hashlib.sha256()
        sizes[sid] = size

    data_pipe = _Pipe(pipe, rng)
    ack_pipe = _Pipe(pipe, rng)
    out = bytearray(MAX_DATAGRAM)
    consumed: dict[int, int] = {sid: 0 for sid in sizes}
    start = time.perf_counter()
    t = 0.0

    def receiver_done() -> bool:
        return all(consumed[sid] == sizes[sid] for sid in sizes)

    while True:
        sender.on_timeout(t)
        receiver.on_timeout(t)
        active = False
        while (n := sender.build_packet(out, now=t)) is not None:
            data_pipe.send(bytes(out[:n]))
            active = True
        sender_idle = not active
        for dgram in data_pipe.ready(flush=sender_idle):
            receiver.recv(bytearray(dgram), appbuf)
            active = True
        while (n := receiver.build_packet(out, now=t)) is not None:
            ack_pipe.send(bytes(out[:n]))
            active = True
        for dgram in ack_pipe.ready(flush=True):
            sender.recv(bytearray(dgram), sender_appbuf)
            active = True
        for sid in receiver.readable():
            view, _fin = receiver.stream_recv(sid, appbuf)
            if len(view):
                recv_hash[sid].update(view)
                consumed[sid] += len(view)
                receiver.stream_consumed(sid, len(view), appbuf)
                active = True
        if receiver_done() and sender.send_done():
            break
        if active:
            t += TICK
        else:
            # idle: jump straight to the earliest retransmission deadline
            deadline = min(
                (sent + sender.rto for sent, _ in sender.unacked.values()),
                default=t + TICK,
            )
            t = max(deadline, t + TICK)
        if t > STALL_LIMIT:
            raise AssertionError(f"transfer stalled at virtual t={t:.3f}")

    for sid in sizes:
        if recv_hash[sid].digest() != sent_hash[sid].digest():
            raise AssertionError(f"stream {sid} content mismatch after transfer")

    wall = time.perf_counter() - start
    m = receiver.metrics()
    data_packets = m.packets_in_order + m.packets_out_of_order + m.packets_spurious
    return TransferReport(
        mode=mode.value,
        bytes_transferred=sum(sizes.values()),
        wall_time=wall,
        throughput=sum(sizes.values()) / wall if wall > 0 else 0.0,
        payload_bytes_copied=m.payload_bytes_copied,
        payload_bytes_zero_copy=m.payload_bytes_zero_copy,
        ordered_ratio=m.packets_in_order / data_packets if data_packets else 1.0,
        decrypt_failures=m.decrypt_failures,
        retransmissions=sender.metrics().retransmissions,
    )


# --- benchmark driver ---


class _PreparedBatch:
    """Sealed datagrams for one mode plus everything needed to replay
    them against a fresh receiver without re-deriving keys."""

    def __init__(self, mode: WireMode, n_packets: int, seed: int = 0) -> None:
        self.mode = mode
        self.n_packets = n_packets
        sender = Connection(mode, Role.CLIENT, _HARNESS_SECRET)
        rng = random.Random(seed ^ 0xBE7C)
        sender.stream_send(1, rng.randbytes(n_packets * MAX_DATAGRAM), fin=False)
        out = bytearray(MAX_DATAGRAM)
        self.pristine: list[bytes] = []
        for _ in range(n_packets):
            n = sender.build_packet(out, now=0.0)
            assert n is not None
            self.pristine.append(bytes(out[:n]))
            sender.unacked.clear()  # sidestep the in-flight window
        self.work = [bytearray(p) for p in self.pristine]
        self.bytes_per_rep = sum(len(p) for p in self.pristine)
        # both directions derived once; receivers are rebuilt per rep
        self.recv_keys = (
            derive_keys(_HARNESS_SECRET, "s2c"),
            derive_keys(_HARNESS_SECRET, "c2s"),
        )

    def fresh_receiver(self):
        conn = Connection(self.mode, Role.SERVER, _HARNESS_SECRET, keys=self.recv_keys)
        return conn, AppRecvBufMap()

    def restore(self) -> None:
        for w, p in zip(self.work, self.pristine):
            w[:] = p

    def run_once(self, conn, appbuf) -> int:
        """Times only the receive loop; draining the streams afterwards
        is application work and stays outside the clock."""
        t0 = time.perf_counter_ns()
        for w in self.work:
            conn.recv(w, appbuf)
        elapsed = time.perf_counter_ns() - t0
        for sid in conn.readable():
            view, _ = conn.stream_recv(sid, appbuf)
            conn.stream_consumed(sid, len(view), appbuf)
        return elapsed

    def calibrate(self) -> int:
        """The loop skeleton with no receiver work: proves the timed
        section's overhead is negligible next to the packets."""
        sink = 0
        t0 = time.perf_counter_ns()
        for w in self.work:
            sink += len(w)
        t1 = time.perf_counter_ns()
        assert sink >= 0
        return t1 - t0


def _bootstrap_median_ci(times: list[int], lo: float = 0.05, hi: float = 0.95):
    rng = random.Random(_BOOTSTRAP_SEED)
    n = len(times)
    meds = []
    for _ in range(_BOOTSTRAP_ROUNDS):
        sample = [times[rng.randrange(n)] for _ in range(n)]
        meds.append(statistics.median(sample))
    meds.sort()
    lo_i = min(len(meds) - 1, int(lo * len(meds)))
    hi_i = min(len(meds) - 1, int(hi * len(meds)))
    return meds[lo_i], meds[hi_i]


def _finish(prep: _PreparedBatch, scenario: str, times: list[int], cal: int) -> BatchResult:
    conn, appbuf = prep.fresh_receiver()
    prep.restore()
    prep.run_once(conn, appbuf)
    m = conn.metrics()
    med = statistics.median(times)
    p5, p95 = _bootstrap_median_ci(times)
    return BatchResult(
        mode=prep.mode.value,
        scenario=scenario,
        bytes_per_rep=prep.bytes_per_rep,
        reps=len(times),
        median_ns=med,
        p5_ns=p5,
        p95_ns=p95,
        throughput_mbps=prep.bytes_per_rep / (med / 1e9) / 1e6 if med else 0.0,
        copied_bytes=m.payload_bytes_copied,
        zero_copy_bytes=m.payload_bytes_zero_copy,
        calibration_ns=cal,
        times_ns=times,
    )


def bench_batch(
    mode: WireMode,
    n_packets: int,
    datagram_size: int = MAX_DATAGRAM,
    repetitions: int = 1000,
    scenario: str | None = None,
    seed: int = 0,
) -> BatchResult:
    """Time the receive loop over a pre-built batch of datagrams."""
    if datagram_size != MAX_DATAGRAM:
        raise ValueError(f"datagram size is fixed at {MAX_DATAGRAM}")
    prep = _PreparedBatch(mode, n_packets, seed)
    cal = prep.calibrate()
    times = []
    for _ in range(repetitions):
        conn, appbuf = prep.fresh_receiver()
        prep.restore()
        times.append(prep.run_once(conn, appbuf))
    return _finish(prep, scenario or f"batch-{n_packets}", times, cal)


def bench_pair(
    n_packets: int,
    repetitions: int = 1000,
    scenario: str | None = None,
    seed: int = 0,
) -> tuple[BatchResult, BatchResult]:
    """Benchmark both modes with interleaved repetitions.

    Alternating single repetitions keeps slow drifts of a busy machine
    from loading one mode's samples more than the other's.
    """
    scen = scenario or f"batch-{n_packets}"
    preps = [
        _PreparedBatch(WireMode.BASELINE, n_packets, seed),
        _PreparedBatch(WireMode.REVERSO, n_packets, seed),
    ]
    cals = [p.calibrate() for p in preps]
    times: list[list[int]] = [[], []]
    for _ in range(repetitions):
        for i, prep in enumerate(preps):
            conn, appbuf = prep.fresh_receiver()
            prep.restore()
            times[i].append(prep.run_once(conn, appbuf))
    return (
        _finish(preps[0], scen, times[0], cals[0]),
        _finish(preps[1], scen, times[1], cals[1]),
    )


SWEEP_LENGTHS = (1350, 13500, 67500, 135000, 212950)


def sweep_buffered_lengths(
    mode: WireMode,
    lengths: tuple[int, ...] = SWEEP_LENGTHS,
    repetitions: int = 300,
    seed: int = 0,
) -> list[BatchResult]:
    """Per-length receive timing; lengths are floored to whole packets."""
    out = []
    for length in lengths:
        n_packets = max(1, length // MAX_DATAGRAM)
        out.append(
            bench_batch(
                mode,
                n_packets,
                repetitions=repetitions,
                scenario=f"sweep-{length}",
                seed=seed,
            )
        )
    return out


def sweep_pair(
    lengths: tuple[int, ...] = SWEEP_LENGTHS,
    repetitions: int = 300,
    seed: int = 0,
) -> list[tuple[BatchResult, BatchResult]]:
    return [
        bench_pair(
            max(1, length // MAX_DATAGRAM),
            repetitions=repetitions,
            scenario=f"sweep-{length}",
            seed=seed,
        )
        for length in lengths
    ]
