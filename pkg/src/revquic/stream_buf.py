"""Application-owned contiguous receive buffers and destination planning.

The receive path's goal is that in-order stream data is written exactly
once: the AEAD open targets the stream's contiguous tail directly, and
the footer bytes that follow the data are treated as scratch to be
overwritten by the next packet. Everything here exists to make that
safe: planning happens before authentication, so a plan may only target
bytes past the committed region; commitment happens after.

Buffer recycling: the map keeps one spare buffer that is bound to a new
stream id before decryption and unbound again if authentication fails,
so a flood of forged first-packets costs zero allocations after the
first spare exists.
"""

from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass

from .crypto import TAG_LEN
from .errors import (
    ConsumeOutOfRange,
    FinalSizeError,
    ProtocolViolation,
)
from .header import MAX_STREAM_ID

DEFAULT_CAPACITY = 1 << 20
STASH_CAP = 16 << 20  # per stream; beyond this fragments are dropped


class PlanKind(enum.Enum):
    ZERO_COPY = "zero_copy"
    IN_PLACE_SUSPICIOUS = "in_place_suspicious"
    IN_PLACE_OUT_OF_ORDER = "in_place_out_of_order"
    CONTROL_ONLY = "control_only"


@dataclass(frozen=True)
class Plan:
    kind: PlanKind
    dest_position: int = 0  # storage index, ZERO_COPY only


_PLAN_CONTROL = Plan(PlanKind.CONTROL_ONLY)
_PLAN_SUSPICIOUS = Plan(PlanKind.IN_PLACE_SUSPICIOUS)
_PLAN_OUT_OF_ORDER = Plan(PlanKind.IN_PLACE_OUT_OF_ORDER)


class StreamRecvBuffer:
    """Contiguous storage for one stream plus its out-of-order stash.

    Offsets are stream offsets; storage position = offset - base_offset.
    Invariant: base_offset <= consumed_offset <= contiguous_offset, and
    storage between the consumed and contiguous watermarks is never
    rewritten until consumed.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY) -> None:
        self.storage = bytearray(capacity)
        self.base_offset = 0
        self.contiguous_offset = 0
        self.consumed_offset = 0
        self.scratch_end = 0  # storage index past the last decrypt footprint
        self.fin_offset: int | None = None
        self.stash = OooStash()

    @property
    def capacity(self) -> int:
        return len(self.storage)

    def ensure_room(self, end_index: int) -> int:
        """Grow storage (doubling) so end_index fits; returns allocations."""
        if end_index <= len(self.storage):
            return 0
        new_cap = len(self.storage)
        while new_cap < end_index:
            new_cap *= 2
        # a fresh bytearray sidesteps resize failures while views are
        # exported; only committed bytes move, and this is allocator
        # traffic, not payload copying
        fresh = bytearray(new_cap)
        live = self.contiguous_offset - self.base_offset
        fresh[:live] = self.storage[:live]
        self.storage = fresh
        return 1

    def set_fin(self, final_offset: int) -> None:
        if self.fin_offset is not None and self.fin_offset != final_offset:
            raise FinalSizeError(
                f"final size changed from {self.fin_offset} to {final_offset}"
            )
        if final_offset < self.contiguous_offset:
            raise FinalSizeError(
                f"final size {final_offset} below received {self.contiguous_offset}"
            )
        self.fin_offset = final_offset

    def commit_zero_copy(self, data_len: int, fin: bool, decrypted_len: int) -> int:
        """Advance past data decrypted at the contiguous tail.

        The data was written by the AEAD open itself; no copy happens
        for it. decrypted_len is the full plaintext footprint starting
        at the tail (data, footer, any trailing frames), all of which
        becomes scratch past the new watermark. Returns bytes copied by
        draining newly contiguous stash entries.
        """
        dest = self.contiguous_offset - self.base_offset
        if fin:
            self.set_fin(self.contiguous_offset + data_len)
        elif self.fin_offset is not None and self.contiguous_offset + data_len > self.fin_offset:
            raise FinalSizeError("data past final size")
        self.contiguous_offset += data_len
        if self.scratch_end < dest + decrypted_len:
            self.scratch_end = dest + decrypted_len
        if not self.stash._offsets:
            return 0
        return self._drain_stash()

    def append_in_order(self, data, fin: bool) -> int:
        """Copy data to the contiguous tail (reassembly path).

        Returns bytes copied, including any stash drains it unlocks.
        """
        n = len(data)
        if fin:
            self.set_fin(self.contiguous_offset + n)
        elif self.fin_offset is not None and self.contiguous_offset + n > self.fin_offset:
            raise FinalSizeError("data past final size")
        dest = self.contiguous_offset - self.base_offset
        self.ensure_room(dest + n)
        self.storage[dest : dest + n] = data
        self.contiguous_offset += n
        if self.scratch_end < dest + n:
            self.scratch_end = dest + n
        if not self.stash._offsets:
            return n
        return n + self._drain_stash()

    def stash_out_of_order(self, offset: int, data, fin: bool) -> int:
        """Hold a fragment that arrived past the contiguous tail.

        Overlap with committed data or existing entries is trimmed, so
        the stash stays disjoint. Returns bytes copied into the stash;
        sets stash_overflow when the cap forces a drop.
        """
        if fin:
            self.set_fin(offset + len(data))
        return self.stash.insert(offset, data, self.contiguous_offset)

    def _drain_stash(self) -> int:
        copied = 0
        while True:
            entry = self.stash.pop_contiguous(self.contiguous_offset)
            if entry is None:
                break
            offset, data = entry
            skip = self.contiguous_offset - offset
            chunk = memoryview(data)[skip:]
            dest = self.contiguous_offset - self.base_offset
            self.ensure_room(dest + len(chunk))
            self.storage[dest : dest + len(chunk)] = chunk
            self.contiguous_offset += len(chunk)
            if self.scratch_end < dest + len(chunk):
                self.scratch_end = dest + len(chunk)
            copied += len(chunk)
        return copied

    def readable_span(self):
        """The committed, unconsumed bytes as (view, length, fin_reached).

        The view aliases storage; it stays valid until the next call
        into the library for this stream.
        """
        start = self.consumed_offset - self.base_offset
        end = self.contiguous_offset - self.base_offset
        fin_reached = self.fin_offset is not None and self.contiguous_offset == self.fin_offset
        return memoryview(self.storage)[start:end], end - start, fin_reached

    def consume(self, n: int) -> None:
        if n < 0 or n > self.contiguous_offset - self.consumed_offset:
            raise ConsumeOutOfRange(
                f"consume {n} of {self.contiguous_offset - self.consumed_offset} readable"
            )
        self.consumed_offset += n
        # slide the window start only when nothing unconsumed remains;
        # unconsumed bytes are never relocated
        if self.consumed_offset == self.contiguous_offset:
            self.base_offset = self.consumed_offset
            self.scratch_end = 0


class OooStash:
    """Disjoint out-of-order fragments ordered by stream offset."""

    def __init__(self) -> None:
        self._offsets: list[int] = []
        self._chunks: list[bytearray] = []
        self.total_bytes = 0
        self.overflowed = False

    def __len__(self) -> int:
        return len(self._offsets)

    def insert(self, offset: int, data, contiguous: int) -> int:
        data = memoryview(data)
        # trim anything at or below the contiguous watermark
        if offset < contiguous:
            skip = contiguous - offset
            if skip >= len(data):
                return 0
            data = data[skip:]
            offset += skip
        copied = 0
        i = bisect_right(self._offsets, offset)
        # predecessor may swallow our head
        if i > 0:
            prev_end = self._offsets[i - 1] + len(self._chunks[i - 1])
            if prev_end > offset:
                if prev_end - offset >= len(data):
                    return 0
                data = data[prev_end - offset :]
                offset = prev_end
        # walk successors, storing only the uncovered pieces
        while len(data) > 0:
            if i < len(self._offsets):
                nxt_off = self._offsets[i]
                if nxt_off <= offset:
                    covered = nxt_off + len(self._chunks[i]) - offset
                    if covered >= len(data):
                        return copied
                    data = data[covered:]
                    offset += covered
                    i += 1
                    continue
                if nxt_off < offset + len(data):
                    piece = data[: nxt_off - offset]
                    copied += self._store(i, offset, piece)
                    i += 1
                    data = data[len(piece) :]
                    offset = nxt_off
                    continue
            copied += self._store(i, offset, data)
            break
        return copied

    def _store(self, index: int, offset: int, data) -> int:
        if self.total_bytes + len(data) > STASH_CAP:
            self.overflowed = True
            return 0
        self._offsets.insert(index, offset)
        self._chunks.insert(index, bytearray(data))
        self.total_bytes += len(data)
        return len(data)

    def pop_contiguous(self, contiguous: int):
        """Remove and return (offset, data) if the first entry touches
        the contiguous watermark, else None."""
        while self._offsets:
            offset = self._offsets[0]
            chunk = self._chunks[0]
            if offset > contiguous:
                return None
            self._offsets.pop(0)
            self._chunks.pop(0)
            self.total_bytes -= len(chunk)
            if offset + len(chunk) > contiguous:
                return offset, chunk
            # entirely stale; discard and keep looking
        return None

    def take_overflow(self) -> bool:
        flag = self.overflowed
        self.overflowed = False
        return flag


class AppRecvBufMap:
    """Per-stream receive buffers plus the recycling spare.

    The spare exists before any packet is examined and is rebound or
    rolled back around each decryption of a fresh stream's first packet,
    keeping the allocation count flat under forged-packet floods.
    """

    def __init__(self, default_capacity: int = DEFAULT_CAPACITY) -> None:
        self.default_capacity = default_capacity
        self.buffers: dict[int, StreamRecvBuffer] = {}
        self.spare: StreamRecvBuffer | None = StreamRecvBuffer(default_capacity)
        self.allocations = 1
        self._pending_fresh: int | None = None

    def _materialize_spare(self) -> StreamRecvBuffer:
        spare = self.spare
        if spare is None:
            spare = self.spare = StreamRecvBuffer(self.default_capacity)
            self.allocations += 1
        return spare

    def decryption_plan(self, stream_id: int, header_offset: int, ciphertext_len: int) -> Plan:
        """Choose the AEAD destination before authentication.

        Only the contiguous tail may be targeted directly; any other
        offset decrypts where the ciphertext sits and is sorted out
        after the tag verifies.
        """
        if stream_id > MAX_STREAM_ID:
            raise ProtocolViolation(f"stream id {stream_id} out of range")
        if stream_id == 0:
            return _PLAN_CONTROL
        buf = self.buffers.get(stream_id)
        if buf is None:
            buf = self._materialize_spare()
            self.buffers[stream_id] = buf
            self._pending_fresh = stream_id
        if header_offset == buf.contiguous_offset:
            dest = buf.contiguous_offset - buf.base_offset
            self.allocations += buf.ensure_room(dest + max(ciphertext_len - TAG_LEN, 0))
            return Plan(PlanKind.ZERO_COPY, dest_position=dest)
        if header_offset < buf.contiguous_offset:
            return _PLAN_SUSPICIOUS
        return _PLAN_OUT_OF_ORDER

    def take_or_recycle(self, stream_id: int, success: bool) -> None:
        """Confirm or roll back the spare binding made by the last plan.

        Failure keeps the very same spare for the next packet, so a
        flood of forged first-packets allocates nothing; success
        promotes it, and the next fresh stream materializes a new one.
        """
        if self._pending_fresh != stream_id:
            return
        self._pending_fresh = None
        if success:
            self.spare = None
        else:
            del self.buffers[stream_id]

    def adopt(self, stream_id: int) -> StreamRecvBuffer:
        """Buffer for a stream first seen after authentication (a parsed
        frame rather than a header), consuming the spare if one exists."""
        buf = self.buffers.get(stream_id)
        if buf is None:
            buf = self._materialize_spare()
            self.spare = None
            self.buffers[stream_id] = buf
        return buf

    def get(self, stream_id: int) -> StreamRecvBuffer | None:
        return self.buffers.get(stream_id)
