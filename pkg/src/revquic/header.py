"""Short packet header: encode, protect, unprotect, decode.

Layout (byte offsets):

    0        flags: form(0) | fixed(1) | spin(0) | sid_len(2) | key_phase(1) | pn_len(2)
    1..8     destination connection id, fixed 8 bytes
    9..      truncated packet number, 1..4 bytes
    then, reverso mode only:
             wire stream id, 1..4 bytes: (stream_id << 2) | off_len_tag
             truncated offset, 1..4 bytes

The sid_len bits are reserved (00) in baseline mode. Length tags store
length minus one. The wire stream id is the full (untruncated) id; its
low 2 bits give the offset field's length. The offset is truncated like
a packet number and the receiver expands it against the stream's highest
contiguous received offset.

Header protection XORs flags' low bits (5 in baseline, 7 in reverso) and
every byte of the variable fields with a mask derived from a fixed-offset
ciphertext sample. The sample starts at pn_offset + 12, past the largest
possible protected region (4+4+4), so both modes share one code path and
the mask never covers its own sample. Builders must pad plaintexts so
ciphertexts reach the sample window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import crypto
from .errors import MalformedHeader, PacketTooShortForSampling, StreamIdOverflow
from .mode import WireMode

DCID_LEN = 8
PN_OFFSET = 1 + DCID_LEN
SAMPLE_OFFSET = PN_OFFSET + 12
SAMPLE_LEN = 16
# minimum plaintext a builder must produce so every packet is samplable
MIN_PLAINTEXT = 28
MAX_STREAM_ID = (1 << 30) - 1

_FIXED_BIT = 0x40
_BASELINE_FLAG_MASK = 0x1F
_REVERSO_FLAG_MASK = 0x7F


@dataclass
class ShortHeader:
    packet_number: int
    dcid: bytes = b"\x00" * DCID_LEN
    key_phase: int = 0
    pn_length: int | None = None
    # reverso-only fields; stream_id 0 marks a control-only packet
    stream_id: int = 0
    offset: int = 0
    off_length: int | None = None

    @property
    def sid_length(self) -> int:
        return wire_sid_length(self.stream_id)


def wire_sid_length(stream_id: int) -> int:
    """Bytes needed for (stream_id << 2) | tag, always minimal."""
    if stream_id < 0 or stream_id > MAX_STREAM_ID:
        raise StreamIdOverflow(f"stream id {stream_id} outside [0, 2**30)")
    for n in (1, 2, 3, 4):
        if stream_id < 1 << (8 * n - 2):
            return n
    raise StreamIdOverflow(f"stream id {stream_id} outside [0, 2**30)")


def header_length(mode: WireMode, h: ShortHeader, reference_pn: int = 0, reference_offset: int = 0) -> int:
    """Encoded size, resolving any unset length fields to minimal."""
    pn_len = h.pn_length or crypto.truncated_len(h.packet_number, reference_pn)
    n = PN_OFFSET + pn_len
    if mode is WireMode.REVERSO:
        off_len = h.off_length or crypto.truncated_len(h.offset, reference_offset)
        n += wire_sid_length(h.stream_id) + off_len
    return n


def encode_header(mode: WireMode, h: ShortHeader, reference_pn: int = 0, reference_offset: int = 0) -> bytes:
    """Serialize the unprotected header.

    pn_length/off_length default to the minimal truncation against the
    given references; callers may force longer fields (senders do, to
    guarantee retransmissions never outgrow the original budget).
    """
    if len(h.dcid) != DCID_LEN:
        raise MalformedHeader(f"dcid must be {DCID_LEN} bytes")
    pn_len = h.pn_length or crypto.truncated_len(h.packet_number, reference_pn)
    out = bytearray(1)
    out += h.dcid
    out += crypto.encode_truncated(h.packet_number, pn_len)
    flags = _FIXED_BIT | ((h.key_phase & 1) << 2) | (pn_len - 1)
    if mode is WireMode.REVERSO:
        sid_len = wire_sid_length(h.stream_id)
        off_len = h.off_length or crypto.truncated_len(h.offset, reference_offset)
        flags |= (sid_len - 1) << 3
        out += ((h.stream_id << 2) | (off_len - 1)).to_bytes(sid_len, "big")
        out += crypto.encode_truncated(h.offset, off_len)
    out[0] = flags
    return bytes(out)


def _apply_mask(mode: WireMode, packet, ks: crypto.KeySchedule) -> None:
    if len(packet) < SAMPLE_OFFSET + SAMPLE_LEN:
        raise PacketTooShortForSampling(
            f"packet of {len(packet)} bytes cannot reach the sample window"
        )
    mask = crypto.hp_mask(ks, bytes(packet[SAMPLE_OFFSET : SAMPLE_OFFSET + SAMPLE_LEN]))
    if mode is WireMode.REVERSO:
        packet[0] ^= mask[0] & _REVERSO_FLAG_MASK
    else:
        packet[0] ^= mask[0] & _BASELINE_FLAG_MASK
    # field lengths are protected inside flags, so masking walks the
    # fields in order, reading each length after unmasking it
    flags = packet[0]
    pn_len = (flags & 0x03) + 1
    pos = PN_OFFSET
    m = 1
    for i in range(pn_len):
        packet[pos + i] ^= mask[m + i]
    pos += pn_len
    m += pn_len
    if mode is WireMode.REVERSO:
        sid_len = ((flags >> 3) & 0x03) + 1
        for i in range(sid_len):
            packet[pos + i] ^= mask[m + i]
        wire_sid = int.from_bytes(packet[pos : pos + sid_len], "big")
        off_len = (wire_sid & 0x03) + 1
        pos += sid_len
        m += sid_len
        for i in range(off_len):
            packet[pos + i] ^= mask[m + i]


def protect_header(mode: WireMode, packet, ks: crypto.KeySchedule) -> None:
    """Mask the protected header fields in place (sender side).

    The packet must already hold header plus sealed payload: the mask is
    sampled from the ciphertext. XOR makes this its own inverse, but the
    receive side must use unprotect_and_decode, which reads lengths in
    unmasked order.
    """
    # On an unprotected header the flags byte is readable before masking,
    # but _apply_mask reads lengths after the XOR, which only works in
    # the unprotect direction. Masking from cleartext walks fields first.
    if len(packet) < SAMPLE_OFFSET + SAMPLE_LEN:
        raise PacketTooShortForSampling(
            f"packet of {len(packet)} bytes cannot reach the sample window"
        )
    mask = crypto.hp_mask(ks, bytes(packet[SAMPLE_OFFSET : SAMPLE_OFFSET + SAMPLE_LEN]))
    flags = packet[0]
    pn_len = (flags & 0x03) + 1
    pos = PN_OFFSET
    m = 1
    for i in range(pn_len):
        packet[pos + i] ^= mask[m + i]
    pos += pn_len
    m += pn_len
    if mode is WireMode.REVERSO:
        sid_len = ((flags >> 3) & 0x03) + 1
        wire_sid = int.from_bytes(packet[pos : pos + sid_len], "big")
        off_len = (wire_sid & 0x03) + 1
        for i in range(sid_len):
            packet[pos + i] ^= mask[m + i]
        pos += sid_len
        m += sid_len
        for i in range(off_len):
            packet[pos + i] ^= mask[m + i]
        packet[0] ^= mask[0] & _REVERSO_FLAG_MASK
    else:
        packet[0] ^= mask[0] & _BASELINE_FLAG_MASK


def unprotect_and_decode(
    mode: WireMode,
    packet,
    ks: crypto.KeySchedule,
    reference_pn: int,
    reference_offset_lookup: Callable[[int], int],
) -> tuple[ShortHeader, int]:
    """Remove protection in place and decode the header.

    Returns (header, header_length). Nothing here is authenticated yet:
    the caller must treat every field as attacker-controlled until the
    AEAD open over the full unprotected header succeeds.
    """
    if len(packet) < SAMPLE_OFFSET + SAMPLE_LEN:
        raise PacketTooShortForSampling(
            f"packet of {len(packet)} bytes cannot reach the sample window"
        )
    _apply_mask(mode, packet, ks)
    flags = packet[0]
    if flags & 0x80 or not flags & _FIXED_BIT:
        raise MalformedHeader(f"bad form/fixed bits in flags 0x{flags:02x}")
    pn_len = (flags & 0x03) + 1
    pos = PN_OFFSET
    pn = crypto.expand_int(bytes(packet[pos : pos + pn_len]), reference_pn)
    pos += pn_len
    h = ShortHeader(
        packet_number=pn,
        dcid=bytes(packet[1:PN_OFFSET]),
        key_phase=(flags >> 2) & 1,
        pn_length=pn_len,
    )
    if mode is WireMode.REVERSO:
        sid_len = ((flags >> 3) & 0x03) + 1
        wire_sid = int.from_bytes(packet[pos : pos + sid_len], "big")
        pos += sid_len
        off_len = (wire_sid & 0x03) + 1
        h.stream_id = wire_sid >> 2
        h.off_length = off_len
        h.offset = crypto.expand_int(
            bytes(packet[pos : pos + off_len]),
            reference_offset_lookup(h.stream_id),
        )
        pos += off_len
    else:
        if (flags >> 3) & 0x03:
            raise MalformedHeader("reserved sid_length bits set in baseline mode")
    return h, pos
