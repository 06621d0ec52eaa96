"""Length-prefixed TLV frames.

    frame = length(u32 BE, counts every byte after itself)
            | version(0x01) | msg_type(u8) | TLV*
    TLV   = tag(u8) | length(u32 BE) | value

Decoding is strict: unknown message types or tags, duplicate tags, tags not
allowed for the message type, wrong fixed-width values and trailing bytes
are all DecodeError.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable

from ..errors import DecodeError
from .messages import PayloadType, Reason, SignedEnvelope, Verdict

PROTOCOL_VERSION = 0x01
MAX_FRAME_LEN = 4 * 1024 * 1024
_LEN = struct.Struct(">I")


class MsgType(IntEnum):
    ChallengeService = 0x01
    ResponseService = 0x02
    ChallengeBitstream = 0x03
    ResponseBitstream = 0x04
    KemPublicKey = 0x05
    KeyRelease = 0x06
    Verdict = 0x07
    EvidenceSubmit = 0x08
    EvidenceAck = 0x09
    Error = 0x0A
    # ledger service extensions
    LedgerQuery = 0x10
    LedgerQueryResult = 0x11
    RegisterSigner = 0x12
    RegisterAck = 0x13


class Tag(IntEnum):
    SESSION_ID = 0x01
    NONCE = 0x02
    DEVICE_ID = 0x03
    PROFILE = 0x04
    PAYLOAD_TYPE = 0x05
    PAYLOAD = 0x06
    SIGNATURE = 0x07
    SIGNER_ID = 0x08
    SERVICE_VERDICT = 0x09
    BITSTREAM_VERDICT = 0x0A
    REASON = 0x0B
    BLOCK_INDEX = 0x0C
    RECORD_INDEX = 0x0D
    DETAIL = 0x0E
    DSA_ALG = 0x0F
    PUBLIC_KEY = 0x10
    BLOCK_FROM = 0x11
    BLOCK_TO = 0x12
    VERDICT_FILTER = 0x13
    RECORDS = 0x14


FIXED_WIDTH = {
    Tag.SESSION_ID: 16,
    Tag.NONCE: 32,
    Tag.PROFILE: 1,
    Tag.PAYLOAD_TYPE: 1,
    Tag.SERVICE_VERDICT: 1,
    Tag.BITSTREAM_VERDICT: 1,
    Tag.REASON: 1,
    Tag.BLOCK_INDEX: 8,
    Tag.RECORD_INDEX: 4,
    Tag.DSA_ALG: 1,
    Tag.BLOCK_FROM: 8,
    Tag.BLOCK_TO: 8,
    Tag.VERDICT_FILTER: 1,
}

_ENVELOPE = {Tag.SESSION_ID, Tag.PAYLOAD_TYPE, Tag.PAYLOAD, Tag.SIGNATURE, Tag.SIGNER_ID}

ALLOWED_TAGS: dict[MsgType, frozenset[Tag]] = {
    # attester -> verifier: DEVICE_ID + PROFILE (session request)
    # verifier -> attester: SESSION_ID + NONCE (the challenge itself)
    MsgType.ChallengeService: frozenset({Tag.SESSION_ID, Tag.NONCE, Tag.DEVICE_ID, Tag.PROFILE}),
    MsgType.ResponseService: frozenset(_ENVELOPE),
    MsgType.ChallengeBitstream: frozenset({Tag.SESSION_ID, Tag.NONCE}),
    MsgType.ResponseBitstream: frozenset(_ENVELOPE),
    MsgType.KemPublicKey: frozenset(_ENVELOPE),
    MsgType.KeyRelease: frozenset(_ENVELOPE),
    MsgType.Verdict: frozenset({Tag.SESSION_ID, Tag.SERVICE_VERDICT, Tag.BITSTREAM_VERDICT,
                                Tag.REASON, Tag.DETAIL}),
    MsgType.EvidenceSubmit: frozenset(_ENVELOPE),
    MsgType.EvidenceAck: frozenset({Tag.SESSION_ID, Tag.BLOCK_INDEX, Tag.RECORD_INDEX}),
    MsgType.Error: frozenset({Tag.SESSION_ID, Tag.REASON, Tag.DETAIL}),
    MsgType.LedgerQuery: frozenset({Tag.DEVICE_ID, Tag.SESSION_ID, Tag.VERDICT_FILTER,
                                    Tag.BLOCK_FROM, Tag.BLOCK_TO}),
    MsgType.LedgerQueryResult: frozenset({Tag.RECORDS}),
    MsgType.RegisterSigner: frozenset({Tag.SIGNER_ID, Tag.DSA_ALG, Tag.PUBLIC_KEY}),
    MsgType.RegisterAck: frozenset({Tag.SIGNER_ID, Tag.BLOCK_INDEX}),
}


@dataclass
class Frame:
    msg_type: MsgType
    fields: dict[Tag, bytes] = field(default_factory=dict)

    def get(self, tag: Tag, default: bytes | None = None) -> bytes | None:
        return self.fields.get(tag, default)

    def require(self, tag: Tag) -> bytes:
        try:
            return self.fields[tag]
        except KeyError:
            raise DecodeError(f"{self.msg_type.name} frame lacks {tag.name}") from None

    def text(self, tag: Tag) -> str:
        try:
            return self.require(tag).decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError(f"{tag.name} is not UTF-8") from None

    def encode(self) -> bytes:
        body = bytearray([PROTOCOL_VERSION, int(self.msg_type)])
        for tag, value in self.fields.items():
            body += bytes([int(tag)]) + _LEN.pack(len(value)) + value
        if len(body) > MAX_FRAME_LEN:
            raise ValueError(f"frame of {len(body)} bytes exceeds {MAX_FRAME_LEN}")
        return _LEN.pack(len(body)) + bytes(body)


def decode_body(body: bytes) -> Frame:
    """Decode everything after the length prefix."""
    if len(body) < 2:
        raise DecodeError("frame shorter than its header", expected_len=2, got_len=len(body))
    if body[0] != PROTOCOL_VERSION:
        raise DecodeError(f"unsupported protocol version {body[0]}")
    try:
        msg_type = MsgType(body[1])
    except ValueError:
        raise DecodeError(f"unknown message type 0x{body[1]:02x}") from None
    allowed = ALLOWED_TAGS[msg_type]
    fields: dict[Tag, bytes] = {}
    pos = 2
    while pos < len(body):
        if pos + 5 > len(body):
            raise DecodeError("truncated TLV header", got_len=len(body) - pos)
        raw_tag = body[pos]
        (vlen,) = _LEN.unpack_from(body, pos + 1)
        pos += 5
        try:
            tag = Tag(raw_tag)
        except ValueError:
            raise DecodeError(f"unknown tag 0x{raw_tag:02x}") from None
        if tag not in allowed:
            raise DecodeError(f"tag {tag.name} not allowed in {msg_type.name}")
        if tag in fields:
            raise DecodeError(f"duplicate tag {tag.name}")
        if pos + vlen > len(body):
            raise DecodeError(f"{tag.name} value truncated", expected_len=vlen,
                              got_len=len(body) - pos)
        width = FIXED_WIDTH.get(tag)
        if width is not None and vlen != width:
            raise DecodeError(f"{tag.name} must be {width} bytes", expected_len=width, got_len=vlen)
        fields[tag] = bytes(body[pos:pos + vlen])
        pos += vlen
    return Frame(msg_type, fields)


def decode_frame(data: bytes) -> Frame:
    """Decode one complete frame, length prefix included."""
    if len(data) < 4:
        raise DecodeError("missing length prefix", expected_len=4, got_len=len(data))
    (length,) = _LEN.unpack_from(data)
    if length > MAX_FRAME_LEN:
        raise DecodeError(f"declared length {length} exceeds limit")
    if len(data) != 4 + length:
        raise DecodeError("length prefix does not match frame size",
                          expected_len=4 + length, got_len=len(data))
    return decode_body(data[4:])


def split_frames(stream: bytes) -> list[Frame]:
    frames = []
    pos = 0
    while pos < len(stream):
        if pos + 4 > len(stream):
            raise DecodeError("truncated length prefix")
        (length,) = _LEN.unpack_from(stream, pos)
        frames.append(decode_frame(stream[pos:pos + 4 + length]))
        pos += 4 + length
    return frames


# ---------------------------------------------------------------------------
# socket helpers

def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError("connection closed")
        buf += chunk
    return bytes(buf)


def read_raw_frame(sock: socket.socket) -> bytes | None:
    """Read one frame's bytes, or None on a clean EOF at a frame boundary."""
    try:
        header = recv_exact(sock, 4)
    except EOFError:
        return None
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME_LEN:
        raise DecodeError(f"declared length {length} exceeds limit")
    return header + recv_exact(sock, length)


def read_frame(sock: socket.socket) -> Frame | None:
    raw = read_raw_frame(sock)
    return None if raw is None else decode_frame(raw)


def write_frame(sock: socket.socket, frame: Frame) -> bytes:
    data = frame.encode()
    sock.sendall(data)
    return data


# ---------------------------------------------------------------------------
# message builders

def _u8(v: int) -> bytes:
    return bytes([int(v)])


def challenge_request(device_id: str, profile_code: int) -> Frame:
    return Frame(MsgType.ChallengeService,
                 {Tag.DEVICE_ID: device_id.encode("utf-8"), Tag.PROFILE: _u8(profile_code)})


def challenge(msg_type: MsgType, session_id: bytes, nonce: bytes) -> Frame:
    return Frame(msg_type, {Tag.SESSION_ID: session_id, Tag.NONCE: nonce})


def envelope_frame(msg_type: MsgType, env: SignedEnvelope, session_id: bytes | None = None) -> Frame:
    fields: dict[Tag, bytes] = {}
    if session_id is not None:
        fields[Tag.SESSION_ID] = session_id
    fields[Tag.PAYLOAD_TYPE] = _u8(env.payload_type)
    fields[Tag.PAYLOAD] = env.payload
    fields[Tag.SIGNATURE] = env.signature
    fields[Tag.SIGNER_ID] = env.signer_id.encode("utf-8")
    return Frame(msg_type, fields)


def envelope_from_frame(frame: Frame) -> SignedEnvelope:
    raw_type = frame.require(Tag.PAYLOAD_TYPE)[0]
    try:
        ptype = PayloadType(raw_type)
    except ValueError:
        raise DecodeError(f"unknown payload type 0x{raw_type:02x}") from None
    return SignedEnvelope(ptype, frame.require(Tag.PAYLOAD), frame.require(Tag.SIGNATURE),
                          frame.text(Tag.SIGNER_ID))


def verdict_frame(session_id: bytes, service: Verdict, bitstream: Verdict,
                  reason: Reason = Reason.OK, detail: str = "") -> Frame:
    fields = {
        Tag.SESSION_ID: session_id,
        Tag.SERVICE_VERDICT: _u8(service),
        Tag.BITSTREAM_VERDICT: _u8(bitstream),
        Tag.REASON: _u8(reason),
    }
    if detail:
        fields[Tag.DETAIL] = detail.encode("utf-8")
    return Frame(MsgType.Verdict, fields)


def error_frame(reason: Reason, detail: str = "", session_id: bytes | None = None) -> Frame:
    fields: dict[Tag, bytes] = {}
    if session_id is not None:
        fields[Tag.SESSION_ID] = session_id
    fields[Tag.REASON] = _u8(reason)
    if detail:
        fields[Tag.DETAIL] = detail.encode("utf-8", "replace")
    return Frame(MsgType.Error, fields)


def frame_reason(frame: Frame) -> Reason:
    raw = frame.get(Tag.REASON)
    return Reason.InternalError if raw is None else Reason.parse(raw[0])


def frame_detail(frame: Frame) -> str:
    raw = frame.get(Tag.DETAIL)
    return "" if raw is None else raw.decode("utf-8", "replace")


# ---------------------------------------------------------------------------
# transcripts

class Transcript:
    """Every frame that crossed a wire, in order, with its direction."""

    def __init__(self) -> None:
        self.entries: list[tuple[str, bytes]] = []

    def record(self, direction: str, data: bytes) -> None:
        self.entries.append((direction, bytes(data)))

    def frames(self) -> Iterable[bytes]:
        return (data for _, data in self.entries)

    def contains(self, needle: bytes) -> bool:
        return any(needle in data for data in self.frames())

    def hex_lines(self) -> list[str]:
        return [data.hex() for data in self.frames()]

    def dump(self, path: Path | str) -> None:
        """One frame per line, hex encoded."""
        Path(path).write_text("".join(line + "\n" for line in self.hex_lines()))

    @staticmethod
    def load(path: Path | str) -> list[Frame]:
        return [decode_frame(bytes.fromhex(line)) for line in Path(path).read_text().split()]
