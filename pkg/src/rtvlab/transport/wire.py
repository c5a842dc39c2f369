"""Bit-exact packet and control-message layouts (big-endian).

Packet::

    off  size  field
    0    1     magic 0xA7
    1    1     version (1)
    2    1     scheme: 0 grace, 1 fec, 2 svc, 3 skip
    3    4     frame_id
    7    1     frame_kind: 0 I, 1 P
    8    2     packet_index (within the frame)
    10   2     packet_count (whole frame)
    12   8     tensor descriptor: kind, channels, rows(2), cols(2), rung, aux
    20   8     map params: m(4), n(2), p(2)
    28   2     slot (packet number inside its tensor map / shard index)
    30   4     reference frame id (0xFFFFFFFF: none)
    34   1     model header length L
    35   L     model header
    35+L 2     payload length P
    37+L P     payload

Descriptor kinds: 0 motion, 1 residual, 2 intra, 3 I-patch intra, 4 FEC
shard (m = stream bytes, n = k, p = r), 5 SVC layer shard (aux = layer),
6 plain chunk of a monolithic stream (m = stream bytes, n = chunk count).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = 0xA7
VERSION = 1
MTU = 1200
NO_REF = 0xFFFFFFFF

SCHEMES = ("grace", "fec", "svc", "skip")
KINDS = ("mv", "residual", "intra", "patch", "fec", "svc", "chunk")

_FIXED = struct.Struct(">BBBIBHHBBHHBBIHHHIB")
FIXED_HEADER = _FIXED.size + 2  # plus the payload length field


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class Packet:
    scheme: str
    frame_id: int
    frame_kind: str
    packet_index: int
    packet_count: int
    kind: str
    channels: int = 0
    rows: int = 0
    cols: int = 0
    rung: int = 0
    aux: int = 0
    m: int = 0
    n: int = 0
    p: int = 0
    slot: int = 0
    ref_id: int = NO_REF
    model: bytes = b""
    payload: bytes = b""
    retransmit: bool = field(default=False, compare=False)

    @property
    def size(self) -> int:
        return FIXED_HEADER + len(self.model) + len(self.payload)

    @property
    def header_size(self) -> int:
        return FIXED_HEADER + len(self.model)

    def to_bytes(self) -> bytes:
        if len(self.model) > 255:
            raise WireError("model header longer than 255 bytes")
        if len(self.payload) > 0xFFFF:
            raise WireError("payload longer than 65535 bytes")
        head = _FIXED.pack(
            MAGIC, VERSION, SCHEMES.index(self.scheme), self.frame_id,
            0 if self.frame_kind == "I" else 1, self.packet_index, self.packet_count,
            KINDS.index(self.kind), self.channels, self.rows, self.cols, self.rung, self.aux,
            self.m, self.n, self.p, self.slot, self.ref_id, len(self.model),
        )
        return head + self.model + struct.pack(">H", len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Packet":
        if len(buf) < FIXED_HEADER:
            raise WireError(f"packet of {len(buf)} bytes is shorter than the fixed header")
        (magic, version, scheme, fid, fkind, pidx, pcount, kind, ch, rows, cols, rung, aux,
         m, n, p, slot, ref, mlen) = _FIXED.unpack_from(buf, 0)
        if magic != MAGIC:
            raise WireError(f"bad magic 0x{magic:02x}")
        if version != VERSION:
            raise WireError(f"unsupported version {version}")
        if scheme >= len(SCHEMES):
            raise WireError(f"unknown scheme id {scheme}")
        if fkind > 1:
            raise WireError(f"unknown frame kind {fkind}")
        if kind >= len(KINDS):
            raise WireError(f"unknown tensor kind {kind}")
        if pcount == 0 or pidx >= pcount:
            raise WireError(f"packet index {pidx} outside count {pcount}")
        pos = _FIXED.size
        if pos + mlen + 2 > len(buf):
            raise WireError("truncated model header")
        model = bytes(buf[pos:pos + mlen])
        pos += mlen
        (plen,) = struct.unpack_from(">H", buf, pos)
        pos += 2
        if pos + plen != len(buf):
            raise WireError(f"payload length {plen} disagrees with packet size {len(buf)}")
        return cls(
            SCHEMES[scheme], fid, "IP"[fkind], pidx, pcount, KINDS[kind], ch, rows, cols, rung, aux,
            m, n, p, slot, ref, model, bytes(buf[pos:]),
        )


@dataclass(frozen=True)
class Feedback:
    """Receiver report for one frame: ``frame_id(4) count(2) bitmap timestamp_us(8)``."""

    frame_id: int
    received: tuple  # bool per packet of the frame
    decode_time_us: int = 0

    @property
    def complete(self) -> bool:
        return all(self.received)

    @property
    def loss_rate(self) -> float:
        return 1.0 - sum(self.received) / len(self.received) if self.received else 1.0

    def to_bytes(self) -> bytes:
        n = len(self.received)
        bits = bytearray((n + 7) // 8)
        for i, ok in enumerate(self.received):
            if ok:
                bits[i // 8] |= 0x80 >> (i % 8)
        return struct.pack(">IH", self.frame_id, n) + bytes(bits) + struct.pack(">Q", self.decode_time_us)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Feedback":
        if len(buf) < 6:
            raise WireError("truncated feedback")
        fid, n = struct.unpack_from(">IH", buf, 0)
        nb = (n + 7) // 8
        if len(buf) != 6 + nb + 8:
            raise WireError("feedback length disagrees with its packet count")
        bits = buf[6:6 + nb]
        if n % 8 and bits[-1] & (0xFF >> (n % 8)):
            raise WireError("non-zero bitmap padding")
        recv = tuple(bool(bits[i // 8] & (0x80 >> (i % 8))) for i in range(n))
        (ts,) = struct.unpack_from(">Q", buf, 6 + nb)
        return cls(fid, recv, ts)


@dataclass(frozen=True)
class ResendRequest:
    frame_id: int

    def to_bytes(self) -> bytes:
        return struct.pack(">I", self.frame_id)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ResendRequest":
        if len(buf) != 4:
            raise WireError("resend request is exactly 4 bytes")
        return cls(struct.unpack(">I", buf)[0])


_CONTROL_TAGS = {b"F": Feedback, b"R": ResendRequest}


def encode_control(msg) -> bytes:
    tag = b"F" if isinstance(msg, Feedback) else b"R"
    return tag + msg.to_bytes()


def decode_control(buf: bytes):
    if not buf:
        raise WireError("empty control message")
    cls = _CONTROL_TAGS.get(bytes(buf[:1]))
    if cls is None:
        raise WireError(f"unknown control tag {bytes(buf[:1])!r}")
    return cls.from_bytes(buf[1:])
