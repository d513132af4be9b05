"""Connection state machine: send and receive pipelines in both modes.

The receive pipeline is the measured artifact. Reversed mode plans an
AEAD destination from the unauthenticated header, opens directly into
stream storage when the packet continues the contiguous tail, and backs
out cleanly when authentication fails. Baseline mode opens in place in
the datagram buffer, parses forward, and copies validated stream data
into storage; that reassembly copy is the cost the reversed layout
removes.

Reliability is deliberately minimal: fixed retransmission timeout, a
fixed in-flight window, ack-every-data-packet. Fragment boundaries are
chosen so a retransmission always fits a full-size datagram even with
worst-case header growth, which keeps offsets dense and makes spurious
retransmissions exactly identifiable (entirely below the contiguous
watermark).
"""

from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field, replace

from cryptography.exceptions import InvalidTag

from . import crypto, header, wire
from .errors import (
    BufferTooSmall,
    FinalSizeError,
    MalformedFrame,
    MalformedHeader,
    PacketTooShortForSampling,
    ProtocolViolation,
    SendAfterFin,
    StreamIdOverflow,
    StreamNotFound,
)
from .mode import WireMode
from .stream_buf import AppRecvBufMap, PlanKind
from .varint import _CLASS_LEN as _VLEN, _CLASS_MAX as _VMAX

# field-window masks by encoded length in bytes
_WMASK = (0, 0xFF, 0xFFFF, 0xFFFFFF, 0xFFFFFFFF)

# offset-field geometry keyed by the length bits of the wire stream id:
# byte length, bit width, value mask
_OFF_GEOM = tuple((n, n << 3, _WMASK[n]) for n in (1, 2, 3, 4))


def _hdr_geometry(reverso: bool):
    """Field arithmetic for each value of the protected flag bits.

    Binding the per-length shifts and masks to one tuple load keeps the
    receive path free of recomputing them packet by packet.
    """
    rows = []
    for fl in range(32):
        pn_len = (fl & 0x03) + 1
        sid_len = ((fl >> 3) & 0x03) + 1
        lead = pn_len + sid_len
        win = 1 << (pn_len << 3)
        if reverso:
            rows.append((
                (12 - lead) << 3,  # shift placing the wire stream id at bit 0
                _WMASK[sid_len],
                sid_len << 3,
                9 + lead,  # header length minus the offset field
                win, win >> 1, ~(win - 1),
            ))
        else:
            rows.append((pn_len, 9 + pn_len, 1 + pn_len, win, win >> 1, ~(win - 1)))
    return tuple(rows)


_RV_HDR = _hdr_geometry(True)
_BL_HDR = _hdr_geometry(False)

MAX_DATAGRAM = 1350
SEND_WINDOW = 64  # packets in flight
DEFAULT_RTO = 0.25

# reserve worst-case header growth (pn and offset truncations can widen
# between original send and retransmission); budgeting fragments against
# this keeps boundaries stable across retransmits
_PN_RESERVE = 4
_OFF_RESERVE = 4

_MAX62 = 1 << 62


class Role(enum.Enum):
    CLIENT = "client"
    SERVER = "server"


@dataclass
class Metrics:
    payload_bytes_copied: int = 0
    payload_bytes_zero_copy: int = 0
    payload_bytes_stashed: int = 0
    packets_in_order: int = 0
    packets_out_of_order: int = 0
    packets_spurious: int = 0
    packets_control_only: int = 0
    decrypt_failures: int = 0
    retransmissions: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0


@dataclass
class _SendStream:
    stream_id: int
    queue: bytearray = field(default_factory=bytearray)
    next_offset: int = 0  # stream offset of queue[0]
    fin_queued: bool = False
    fin_sent: bool = False


@dataclass
class _Fragment:
    stream_id: int
    offset: int
    data: bytes
    fin: bool


class Connection:
    def __init__(
        self,
        mode: WireMode,
        role: Role,
        shared_secret: bytes,
        keys: tuple[crypto.KeySchedule, crypto.KeySchedule] | None = None,
    ) -> None:
        self.mode = mode
        self.role = role
        if keys is not None:
            # precomputed (send, recv) schedules; benchmark repetitions
            # rebuild connections without paying key derivation again
            self.send_keys, self.recv_keys = keys
        else:
            c2s = crypto.derive_keys(shared_secret, "c2s")
            s2c = crypto.derive_keys(shared_secret, "s2c")
            if role is Role.CLIENT:
                self.send_keys, self.recv_keys = c2s, s2c
            else:
                self.send_keys, self.recv_keys = s2c, c2s
        self.next_pn = 0
        self.largest_received_pn = 0
        self.largest_peer_acked = 0
        self.send_streams: dict[int, _SendStream] = {}
        self.unacked: dict[int, tuple[float, list[_Fragment]]] = {}
        self.ack_pending: set[int] = set()
        self.rto = DEFAULT_RTO
        self.closed = False
        self.close_error: tuple[int, bytes] | None = None
        self._metrics = Metrics()
        self._retransmit: deque[_Fragment] = deque()
        self._close_queued: tuple[int, bytes] | None = None
        self._rr: deque[int] = deque()  # round-robin stream order
        self._appbuf: AppRecvBufMap | None = None

    # --- sending ---

    def stream_send(self, stream_id: int, data, fin: bool = False) -> int:
        if not 1 <= stream_id <= header.MAX_STREAM_ID:
            raise StreamIdOverflow(f"stream id {stream_id} outside [1, 2^30)")
        ss = self.send_streams.get(stream_id)
        if ss is None:
            ss = _SendStream(stream_id)
            self.send_streams[stream_id] = ss
            self._rr.append(stream_id)
        if ss.fin_queued:
            raise SendAfterFin(f"stream {stream_id} already finished")
        ss.queue += data
        if fin:
            ss.fin_queued = True
        return len(data)

    def queue_close(self, error_code: int = 0, reason: bytes = b"") -> None:
        self._close_queued = (error_code, reason)

    def _next_fragment(self, overhead: int) -> _Fragment | None:
        """Pick a fresh data fragment round-robin across streams,
        budgeted against worst-case header growth so a later
        retransmission of it can never overflow a datagram."""
        if len(self.unacked) >= SEND_WINDOW:
            return None
        for _ in range(len(self._rr)):
            sid = self._rr[0]
            self._rr.rotate(-1)
            ss = self.send_streams[sid]
            if not ss.queue and not (ss.fin_queued and not ss.fin_sent):
                continue
            budget = (
                MAX_DATAGRAM
                - (1 + header.DCID_LEN + _PN_RESERVE)
                - crypto.TAG_LEN
                - overhead
            )
            if self.mode is WireMode.REVERSO:
                budget -= (
                    _OFF_RESERVE
                    + header.wire_sid_length(sid)
                    + 1  # frame type byte
                    + wire.reversed_length(ss.next_offset)
                    + wire.reversed_length(sid)
                )
            else:
                budget -= (
                    1
                    + wire.forward_length(sid)
                    + wire.forward_length(ss.next_offset)
                )
            if budget <= 0:
                continue
            n = min(len(ss.queue), budget)
            if n == 0 and not (ss.fin_queued and not ss.fin_sent):
                continue
            data = bytes(ss.queue[:n])
            del ss.queue[:n]
            fin = ss.fin_queued and not ss.queue
            offset = ss.next_offset
            ss.next_offset += n
            if fin:
                ss.fin_sent = True
            return _Fragment(sid, offset, data, fin)
        return None

    def _build_ack(self) -> wire.AckFrame | None:
        if not self.ack_pending:
            return None
        pns = sorted(self.ack_pending, reverse=True)
        ranges: list[tuple[int, int]] = []
        cursor = pns[0]
        largest = pns[0]
        i = 0
        while i < len(pns) and len(ranges) < wire.MAX_ACK_RANGES:
            top = pns[i]
            bottom = top
            while i + 1 < len(pns) and pns[i + 1] == bottom - 1:
                bottom = pns[i + 1]
                i += 1
            i += 1
            gap = cursor - top
            ranges.append((gap, top - bottom + 1))
            cursor = bottom - 1
        self.ack_pending.clear()
        return wire.AckFrame(largest_acked=largest, ack_delay=0, ranges=ranges)

    def build_packet(self, out, now: float | None = None) -> int | None:
        """Assemble, seal and protect one datagram into out.

        Returns the datagram length, or None when there is nothing to
        send. At most one stream frame per packet; pending acks and a
        queued close ride along.
        """
        if len(out) < MAX_DATAGRAM:
            raise BufferTooSmall(f"need {MAX_DATAGRAM}, got {len(out)}")
        if now is None:
            now = time.monotonic()

        ack = close = None
        if self._retransmit:
            # a retransmitted fragment was budgeted without companions;
            # acks and close wait for the next packet so it always fits
            frag = self._retransmit.popleft()
        else:
            ack = self._build_ack()
            if self._close_queued is not None:
                code, reason = self._close_queued
                close = wire.ConnectionCloseFrame(error_code=code, reason=reason)
                self._close_queued = None
            overhead = 0
            if ack is not None:
                overhead += wire.frame_wire_size(ack, self.mode)
            if close is not None:
                overhead += wire.frame_wire_size(close, self.mode)
            frag = self._next_fragment(overhead)
        if frag is None and ack is None and close is None:
            return None

        frames: list[wire.Frame] = []
        stream_frame = None
        if frag is not None:
            stream_frame = wire.StreamFrame(
                stream_id=frag.stream_id,
                offset=frag.offset,
                data=frag.data,
                fin=frag.fin,
                explicit_len=False,
            )
        if self.mode is WireMode.REVERSO:
            if stream_frame is not None:
                frames.append(stream_frame)
            if ack is not None:
                frames.append(ack)
            if close is not None:
                frames.append(close)
        else:
            if ack is not None:
                frames.append(ack)
            if close is not None:
                frames.append(close)
        pt_len = sum(wire.frame_wire_size(f, self.mode) for f in frames)
        if self.mode is not WireMode.REVERSO and stream_frame is not None:
            pt_len += wire.frame_wire_size(stream_frame, self.mode)
        if pt_len < header.MIN_PLAINTEXT:
            pad = header.MIN_PLAINTEXT - pt_len
            frames.extend(wire.PaddingFrame() for _ in range(pad))
            pt_len += pad
        if self.mode is not WireMode.REVERSO and stream_frame is not None:
            frames.append(stream_frame)  # owns the remainder, so last

        pn = self.next_pn
        self.next_pn += 1
        hdr = header.ShortHeader(packet_number=pn)
        hdr.pn_length = crypto.truncated_len(
            max(pn - self.largest_peer_acked, 0) + 1, 0
        )
        if self.mode is WireMode.REVERSO:
            if frag is not None:
                ss = self.send_streams.get(frag.stream_id)
                ahead = (ss.next_offset - frag.offset) if ss else len(frag.data)
                hdr.stream_id = frag.stream_id
                hdr.offset = frag.offset
                hdr.off_length = crypto.truncated_len(
                    max(frag.offset, ahead) + 1, 0
                )
            else:
                hdr.stream_id = 0
                hdr.offset = 0
                hdr.off_length = 1
        hdr_bytes = header.encode_header(self.mode, hdr)
        hdr_len = len(hdr_bytes)

        view = memoryview(out)
        view[:hdr_len] = hdr_bytes
        pt = view[hdr_len : hdr_len + pt_len]
        if self.mode is WireMode.REVERSO:
            n = wire.serialize_reversed(frames, pt)
        else:
            n = wire.serialize_forward(frames, pt)
        assert n == pt_len
        ct_len = crypto.seal(self.send_keys, pn, view[:hdr_len], pt, view[hdr_len:])
        total = hdr_len + ct_len
        assert total <= MAX_DATAGRAM
        header.protect_header(self.mode, view[:total], self.send_keys)

        if frag is not None:
            self.unacked[pn] = (now, [frag])
        self._metrics.bytes_sent += total
        return total

    def on_timeout(self, now: float) -> None:
        """Re-queue fragments of packets unacked past the timeout."""
        expired = [pn for pn, (sent, _) in self.unacked.items() if now - sent >= self.rto]
        for pn in sorted(expired):
            _, frags = self.unacked.pop(pn)
            self._retransmit.extend(frags)
            self._metrics.retransmissions += 1

    # --- receiving ---
    #
    # Two code paths share the receive semantics. The modular one
    # (decryption_plan, crypto.open, the wire parsers, _deliver) handles
    # every packet shape; the flat per-mode paths below decode the
    # common shape, a single stream frame continuing a known stream,
    # with no intermediate objects, because per-object interpreter cost
    # dominates the per-packet budget. Anything the flat code does not
    # recognize falls through to the modular code with identical
    # observable effects.

    def recv(self, datagram, appbuf: AppRecvBufMap) -> int:
        """Process one datagram; returns bytes consumed from it.

        Authentication failures are silent: the packet is dropped, a
        counter ticks, and no state visible to the peer changes.
        """
        self._appbuf = appbuf
        buf = memoryview(datagram) if not isinstance(datagram, memoryview) else datagram
        blen = len(buf)
        self._metrics.bytes_received += blen
        if blen < header.SAMPLE_OFFSET + header.SAMPLE_LEN:
            raise PacketTooShortForSampling(
                f"packet of {blen} bytes cannot reach the sample window"
            )
        if self.mode is WireMode.REVERSO:
            return self._recv_reverso(buf, blen, appbuf)
        return self._recv_baseline(buf, blen, appbuf)

    def _recv_reverso(self, buf, blen: int, appbuf: AppRecvBufMap) -> int:
        ks = self.recv_keys
        mask = ks._hp.update(buf[21:37])
        flags = buf[0] ^ (mask[0] & 0x7F)
        if flags & 0x80 or not flags & 0x40:
            raise MalformedHeader(f"bad form/fixed bits in flags 0x{flags:02x}")
        sh_sid, wm_sid, sid_bits, lead9, win, hwin, pnmask = _RV_HDR[flags & 0x1F]
        # unmask the maximal field window in one pass; the header fields
        # are its top lead+off_len bytes, the rest is ciphertext short of
        # the sample and stays untouched
        w = int.from_bytes(buf[9:21], "big") ^ int.from_bytes(mask[1:13], "big")
        wire_sid = (w >> sh_sid) & wm_sid
        off_len, off_bits, wm_off = _OFF_GEOM[wire_sid & 0x03]
        hdr_len = lead9 + off_len
        fields = w >> (sh_sid - off_bits)
        off_t = fields & wm_off
        # the unprotected header is the AEAD's associated data
        buf[0] = flags
        buf[9:hdr_len] = fields.to_bytes(hdr_len - 9, "big")
        # packet number: the candidate congruent to the truncated bytes
        # nearest one past the largest seen (crypto.expand_int, inlined)
        expected = self.largest_received_pn + 1
        pn = (expected & pnmask) | (fields >> (sid_bits + off_bits))
        if pn <= expected - hwin and pn < _MAX62 - win:
            pn += win
        elif pn > expected + hwin and pn >= win:
            pn -= win
        if pn >= _MAX62:
            pn -= win

        sid = wire_sid >> 2
        sbuf = appbuf.buffers.get(sid) if sid else None
        bind = False
        if sbuf is None:
            # off_t == 0 expands to offset 0 against a zero reference,
            # so this is first contact at the stream start; stage the
            # spare and bind only if the packet authenticates (mirrors
            # decryption_plan + take_or_recycle)
            if sid == 0 or off_t:
                return self._recv_reverso_slow(buf, blen, appbuf, pn, sid, lead9, hdr_len)
            sbuf = appbuf._materialize_spare()
            oref = 0
            bind = True
        else:
            oref = sbuf.contiguous_offset
            # truncation match decides continuation exactly: expanding
            # off_t against oref yields oref iff off_t is its truncation
            if off_t != oref & wm_off:
                return self._recv_reverso_slow(buf, blen, appbuf, pn, sid, lead9, hdr_len)

        # zero-copy: open straight onto the stream's contiguous tail
        m = self._metrics
        pt_len = blen - hdr_len - 16
        dest = oref - sbuf.base_offset
        storage = sbuf.storage
        if dest + pt_len > len(storage):
            appbuf.allocations += sbuf.ensure_room(dest + pt_len)
            storage = sbuf.storage
        try:
            pt = ks._aead.decrypt(
                (ks._iv_int ^ pn).to_bytes(12, "big"), buf[hdr_len:], buf[:hdr_len]
            )
        except InvalidTag:
            m.decrypt_failures += 1
            return blen
        storage[dest : dest + pt_len] = pt  # stands in for AEAD-into-dest
        if bind:
            appbuf.spare = None
            appbuf.buffers[sid] = sbuf
        if pn > self.largest_received_pn:
            self.largest_received_pn = pn

        t = pt[-1] if pt_len else 0
        if 0x08 <= t <= 0x0F and not t & 0x02:
            # the whole plaintext is one LEN-absent stream frame; its
            # footer must restate the header's routing fields (the walk
            # mirrors wire.parse_reversed: stream id, then offset)
            cur = pt_len - 1
            if cur <= 0:
                raise MalformedFrame("truncated reversed varint")
            n = _VLEN[pt[cur - 1] & 0x03]
            if n > cur:
                raise MalformedFrame("truncated reversed varint")
            f_sid = int.from_bytes(pt[cur - n : cur], "big") >> 2
            cur -= n
            if t & 0x04:
                if cur <= 0:
                    raise MalformedFrame("truncated reversed varint")
                n = _VLEN[pt[cur - 1] & 0x03]
                if n > cur:
                    raise MalformedFrame("truncated reversed varint")
                f_off = int.from_bytes(pt[cur - n : cur], "big") >> 2
                cur -= n
            else:
                f_off = 0
            if f_sid != sid or f_off != oref:
                raise ProtocolViolation(
                    f"footer ({f_sid}, {f_off}) disagrees with "
                    f"header ({sid}, {oref})"
                )
            # commit: advance the watermark over the data, leave the
            # footer past it as scratch (mirrors commit_zero_copy)
            if t & 0x01:
                sbuf.set_fin(oref + cur)
            elif sbuf.fin_offset is not None and oref + cur > sbuf.fin_offset:
                raise FinalSizeError("data past final size")
            sbuf.contiguous_offset = oref + cur
            se = dest + pt_len
            if sbuf.scratch_end < se:
                sbuf.scratch_end = se
            m.payload_bytes_zero_copy += cur
            if sbuf.stash._offsets:
                m.payload_bytes_copied += sbuf._drain_stash()
            m.packets_in_order += 1
            self.ack_pending.add(pn)
            return blen

        view = memoryview(storage)[dest : dest + pt_len]
        frames = wire.parse_reversed(view)
        return self._process_plaintext(
            appbuf, blen, pn, sid, oref, PlanKind.ZERO_COPY, frames, pt_len
        )

    def _recv_reverso_slow(
        self, buf, blen: int, appbuf: AppRecvBufMap, pn: int, sid: int, off_pos: int, hdr_len: int
    ) -> int:
        """Control packets, first contact on a stream, and offsets away
        from the contiguous tail: plan a destination against the stream
        map, open, then hand the frames to the shared delivery code."""
        m = self._metrics
        ks = self.recv_keys
        b = appbuf.buffers.get(sid)
        offset = crypto.expand_int(
            bytes(buf[off_pos:hdr_len]), b.contiguous_offset if b is not None else 0
        )
        pt_len = blen - hdr_len - crypto.TAG_LEN
        plan = appbuf.decryption_plan(sid, offset, blen - hdr_len)
        kind = plan.kind
        try:
            pt = ks._aead.decrypt(
                (ks._iv_int ^ pn).to_bytes(12, "big"), buf[hdr_len:], buf[:hdr_len]
            )
        except InvalidTag:
            if sid:
                appbuf.take_or_recycle(sid, False)
            m.decrypt_failures += 1
            return blen
        if kind is PlanKind.ZERO_COPY:
            sbuf = appbuf.buffers[sid]
            dest = plan.dest_position
            sbuf.storage[dest : dest + pt_len] = pt  # stands in for AEAD-into-dest
            plaintext = memoryview(sbuf.storage)[dest : dest + pt_len]
        else:
            buf[hdr_len : hdr_len + pt_len] = pt  # in-place open, stand-in copy
            plaintext = buf[hdr_len : hdr_len + pt_len]
        if sid:
            appbuf.take_or_recycle(sid, True)
        if pn > self.largest_received_pn:
            self.largest_received_pn = pn

        t = pt[-1] if pt_len else 0
        if 0x08 <= t <= 0x0F and not t & 0x02:
            # single LEN-absent stream frame owning the plaintext; read
            # its footer directly (mirrors wire.parse_reversed)
            cur = pt_len - 1
            if cur <= 0:
                raise MalformedFrame("truncated reversed varint")
            n = _VLEN[pt[cur - 1] & 0x03]
            if n > cur:
                raise MalformedFrame("truncated reversed varint")
            f_sid = int.from_bytes(pt[cur - n : cur], "big") >> 2
            cur -= n
            if t & 0x04:
                if cur <= 0:
                    raise MalformedFrame("truncated reversed varint")
                n = _VLEN[pt[cur - 1] & 0x03]
                if n > cur:
                    raise MalformedFrame("truncated reversed varint")
                f_off = int.from_bytes(pt[cur - n : cur], "big") >> 2
                cur -= n
            else:
                f_off = 0
            frame = wire.StreamFrame(
                stream_id=f_sid,
                offset=f_off,
                data=plaintext[:cur],
                fin=bool(t & 0x01),
                explicit_len=False,
            )
            return self._process_plaintext(
                appbuf, blen, pn, sid, offset, kind, [frame], pt_len
            )

        frames = wire.parse_reversed(plaintext)
        return self._process_plaintext(
            appbuf, blen, pn, sid, offset, kind, frames, pt_len
        )

    def _recv_baseline(self, buf, blen: int, appbuf: AppRecvBufMap) -> int:
        ks = self.recv_keys
        mask = ks._hp.update(buf[21:37])
        flags = buf[0] ^ (mask[0] & 0x1F)
        if flags & 0x80 or not flags & 0x40:
            raise MalformedHeader(f"bad form/fixed bits in flags 0x{flags:02x}")
        if (flags >> 3) & 0x03:
            raise MalformedHeader("reserved sid_length bits set in baseline mode")
        pn_len, hdr_len, mask_end, win, hwin, pnmask = _BL_HDR[flags & 0x03]
        pn_t = int.from_bytes(buf[9:hdr_len], "big") ^ int.from_bytes(
            mask[1:mask_end], "big"
        )
        buf[0] = flags
        buf[9:hdr_len] = pn_t.to_bytes(pn_len, "big")
        expected = self.largest_received_pn + 1
        pn = (expected & pnmask) | pn_t
        if pn <= expected - hwin and pn < _MAX62 - win:
            pn += win
        elif pn > expected + hwin and pn >= win:
            pn -= win
        if pn >= _MAX62:
            pn -= win

        m = self._metrics
        pt_len = blen - hdr_len - 16
        try:
            pt = ks._aead.decrypt(
                (ks._iv_int ^ pn).to_bytes(12, "big"), buf[hdr_len:], buf[:hdr_len]
            )
        except InvalidTag:
            m.decrypt_failures += 1
            return blen
        buf[hdr_len : hdr_len + pt_len] = pt  # in-place open, stand-in copy
        if pn > self.largest_received_pn:
            self.largest_received_pn = pn

        t = pt[0] if pt_len else 0
        if 0x08 <= t <= 0x0F and not t & 0x02:
            # single stream frame owning the whole plaintext (the walk
            # mirrors wire.parse_forward)
            pos = 1
            if pos >= pt_len:
                raise MalformedFrame("truncated varint")
            tag = pt[pos] >> 6
            n = _VLEN[tag]
            if pos + n > pt_len:
                raise MalformedFrame("truncated varint")
            sid = int.from_bytes(pt[pos : pos + n], "big") & (_VMAX[tag] - 1)
            pos += n
            if t & 0x04:
                if pos >= pt_len:
                    raise MalformedFrame("truncated varint")
                tag = pt[pos] >> 6
                n = _VLEN[tag]
                if pos + n > pt_len:
                    raise MalformedFrame("truncated varint")
                offset = int.from_bytes(pt[pos : pos + n], "big") & (_VMAX[tag] - 1)
                pos += n
            else:
                offset = 0
            sbuf = appbuf.buffers.get(sid) if sid else None
            if sbuf is None and sid and offset == 0:
                # first contact at the stream start; delivery is already
                # authenticated, so bind unconditionally (mirrors adopt)
                sbuf = appbuf._materialize_spare()
                appbuf.spare = None
                appbuf.buffers[sid] = sbuf
            if sbuf is not None and offset == sbuf.contiguous_offset:
                # reassembly copy into stream storage (mirrors
                # append_in_order)
                data_len = pt_len - pos
                if t & 0x01:
                    sbuf.set_fin(offset + data_len)
                elif sbuf.fin_offset is not None and offset + data_len > sbuf.fin_offset:
                    raise FinalSizeError("data past final size")
                dest = offset - sbuf.base_offset
                storage = sbuf.storage
                if dest + data_len > len(storage):
                    sbuf.ensure_room(dest + data_len)
                    storage = sbuf.storage
                storage[dest : dest + data_len] = buf[hdr_len + pos : hdr_len + pt_len]
                sbuf.contiguous_offset = offset + data_len
                se = dest + data_len
                if sbuf.scratch_end < se:
                    sbuf.scratch_end = se
                m.payload_bytes_copied += data_len
                if sbuf.stash._offsets:
                    m.payload_bytes_copied += sbuf._drain_stash()
                m.packets_in_order += 1
                self.ack_pending.add(pn)
                return blen
            frame = wire.StreamFrame(
                stream_id=sid,
                offset=offset,
                data=buf[hdr_len + pos : hdr_len + pt_len],
                fin=bool(t & 0x01),
                explicit_len=False,
            )
            return self._process_plaintext(appbuf, blen, pn, 0, 0, None, [frame], pt_len)

        frames = wire.parse_forward(buf[hdr_len : hdr_len + pt_len])
        return self._process_plaintext(appbuf, blen, pn, 0, 0, None, frames, pt_len)

    def _process_plaintext(
        self, appbuf: AppRecvBufMap, blen: int, pn: int, hdr_sid: int,
        hdr_offset: int, plan_kind, frames: list[wire.Frame], pt_len: int,
    ) -> int:
        """Validate and apply a parsed frame list; shared packet tail."""
        if plan_kind is not None:
            self._check_footer(hdr_sid, hdr_offset, frames)
        ack_eliciting = False
        suppress_ack = False
        saw_stream = False
        for frame in frames:
            if isinstance(frame, wire.StreamFrame):
                ack_eliciting = True
                saw_stream = True
                if self._deliver(hdr_sid, plan_kind, frame, appbuf, pt_len):
                    suppress_ack = True
            elif isinstance(frame, wire.AckFrame):
                self._on_ack(frame)
            elif isinstance(frame, wire.PingFrame):
                ack_eliciting = True
            elif isinstance(frame, wire.MaxStreamDataFrame):
                ack_eliciting = True
            elif isinstance(frame, wire.ConnectionCloseFrame):
                self.closed = True
                self.close_error = (frame.error_code, bytes(frame.reason))
                ack_eliciting = True
        if not saw_stream:
            self._metrics.packets_control_only += 1
        if ack_eliciting and not suppress_ack:
            self.ack_pending.add(pn)
        return blen

    def _check_footer(self, hdr_sid: int, hdr_offset: int, frames: list[wire.Frame]) -> None:
        """The header's stream fields are copies of the anchor frame's
        footer; a mismatch means tampering the AEAD cannot see (both are
        authenticated, but they must agree with each other). Only the
        last parsed frame can be the anchor: a LEN-absent stream frame
        terminates the backward walk."""
        last = frames[-1] if frames else None
        anchor = (
            last
            if isinstance(last, wire.StreamFrame) and last.explicit_len is False
            else None
        )
        if hdr_sid == 0:
            if any(isinstance(f, wire.StreamFrame) for f in frames):
                raise ProtocolViolation("stream frame in a control-only packet")
            return
        if anchor is None:
            raise ProtocolViolation("header names a stream but no anchor frame found")
        if anchor.stream_id != hdr_sid or anchor.offset != hdr_offset:
            raise ProtocolViolation(
                f"footer ({anchor.stream_id}, {anchor.offset}) disagrees with "
                f"header ({hdr_sid}, {hdr_offset})"
            )

    def _deliver(
        self, hdr_sid: int, plan_kind, frame: wire.StreamFrame,
        appbuf: AppRecvBufMap, pt_len: int,
    ) -> bool:
        """Commit one validated stream fragment; returns True when the
        ack for this packet must be suppressed (stash overflow: the
        fragment was dropped and needs retransmission)."""
        m = self._metrics
        sid = frame.stream_id
        if sid == 0 or sid > header.MAX_STREAM_ID:
            raise ProtocolViolation(f"bad stream id {sid} in stream frame")
        if (
            plan_kind is PlanKind.ZERO_COPY
            and frame.explicit_len is False
            and sid == hdr_sid
        ):
            sbuf = appbuf.buffers[sid]
            data_len = len(frame.data)
            copied = sbuf.commit_zero_copy(data_len, frame.fin, pt_len)
            m.payload_bytes_zero_copy += data_len
            m.payload_bytes_copied += copied
            m.packets_in_order += 1
            return False

        sbuf = appbuf.adopt(sid)
        end = frame.offset + len(frame.data)
        if frame.offset == sbuf.contiguous_offset:
            copied = sbuf.append_in_order(frame.data, frame.fin)
            m.payload_bytes_copied += copied
            m.packets_in_order += 1
        elif frame.offset > sbuf.contiguous_offset:
            stashed = sbuf.stash_out_of_order(frame.offset, frame.data, frame.fin)
            m.payload_bytes_stashed += stashed
            m.packets_out_of_order += 1
            if sbuf.stash.take_overflow():
                return True
        else:
            m.packets_spurious += 1
            if end > sbuf.contiguous_offset:
                # partial overlap cannot occur while fragment boundaries
                # are preserved across retransmissions; commit the tail
                # anyway so integrity never depends on that invariant
                tail = memoryview(frame.data)[sbuf.contiguous_offset - frame.offset :]
                copied = sbuf.append_in_order(tail, frame.fin)
                m.payload_bytes_copied += copied
            # entirely old data: acknowledged and dropped
        return False

    def _on_ack(self, frame: wire.AckFrame) -> None:
        if frame.largest_acked > self.largest_peer_acked:
            self.largest_peer_acked = frame.largest_acked
        cursor = frame.largest_acked
        for gap, length in frame.ranges:
            cursor -= gap
            lo = cursor - length + 1
            if length > 2 * SEND_WINDOW:
                # absurdly wide range: intersect with what is in flight
                # instead of iterating the range
                for pn in [p for p in self.unacked if lo <= p <= cursor]:
                    del self.unacked[pn]
            else:
                for pn in range(lo, cursor + 1):
                    self.unacked.pop(pn, None)
            cursor -= length

    # --- application surface ---

    def readable(self) -> list[int]:
        if self._appbuf is None:
            return []
        return [
            sid
            for sid, sbuf in self._appbuf.buffers.items()
            if sbuf.contiguous_offset > sbuf.consumed_offset
        ]

    def stream_recv(self, stream_id: int, appbuf: AppRecvBufMap):
        sbuf = appbuf.get(stream_id)
        if sbuf is None:
            raise StreamNotFound(f"stream {stream_id}")
        view, _, fin = sbuf.readable_span()
        return view, fin

    def stream_consumed(self, stream_id: int, n: int, appbuf: AppRecvBufMap) -> None:
        sbuf = appbuf.get(stream_id)
        if sbuf is None:
            raise StreamNotFound(f"stream {stream_id}")
        sbuf.consume(n)

    def metrics(self) -> Metrics:
        return replace(self._metrics)

    def send_done(self) -> bool:
        """All queued data sent and acknowledged."""
        return (
            not self._retransmit
            and not self.unacked
            and all(not s.queue and (s.fin_sent or not s.fin_queued) for s in self.send_streams.values())
        )


def connect(mode: WireMode, role: Role, shared_secret: bytes) -> Connection:
    """Derive both directions' keys and start a connection at packet 0."""
    return Connection(mode, role, shared_secret)
