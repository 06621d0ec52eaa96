"""Attestation reports, signed envelopes and the reason codes carried on Reject.

Byte layouts are fixed so independent implementations interoperate:

    A1  = nonce(32) | c1(64) | c2(64)                                 160 bytes
    A2  = nonce(32) | c3(64)                                            96 bytes
    A3  = nonce(32) | session_id(16) | profile(1)
          | service_verdict(1) | service_reason(1)
          | bitstream_verdict(1) | bitstream_reason(1)
          | timestamp(u64 BE, unix seconds) | len(device_id)(u16 BE) | device_id

Signatures always cover ``payload_type || payload``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .. import crypto_suite as cs
from ..errors import DecodeError, PqAttestError

NONCE_LEN = 32
SESSION_ID_LEN = 16
A1_LEN = NONCE_LEN + 2 * cs.DIGEST_LEN
A2_LEN = NONCE_LEN + cs.DIGEST_LEN
_A3_FIXED = struct.Struct(">32s16sBBBBBQH")


class Reason(IntEnum):
    OK = 0
    SignatureInvalid = 1
    NonceMismatch = 2
    StaleNonce = 3
    ChecksumMismatch = 4
    DecryptFailed = 5
    OutOfOrderMessage = 6
    UnknownSession = 7
    UnknownDevice = 8
    ProfileMismatch = 9
    DecodeError = 10
    SkippedPhase = 11
    KeyUnwrapFailed = 12
    ProgrammingFailed = 13
    DeviceError = 14
    ConnectionLost = 15
    DuplicateSession = 16
    UnknownSigner = 17
    DuplicateSigner = 18
    InternalError = 19

    @classmethod
    def parse(cls, code: int) -> "Reason":
        try:
            return cls(code)
        except ValueError:
            raise DecodeError(f"unknown reason code {code}") from None


class ProtocolError(PqAttestError):
    """A protocol check failed; ``reason`` is what goes on the wire."""

    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(f"{reason.name}: {detail}" if detail else reason.name)
        self.reason = reason
        self.detail = detail


class Verdict(IntEnum):
    Reject = 0
    Accept = 1

    @classmethod
    def parse(cls, code: int) -> "Verdict":
        if code not in (0, 1):
            raise DecodeError(f"verdict byte must be 0 or 1, got {code}")
        return cls(code)


class PayloadType(IntEnum):
    A1 = 0x01
    ENC_A2 = 0x02
    A3 = 0x03
    KEM_PUBLIC = 0x04
    KEY_RELEASE = 0x05


def _expect_len(kind: str, data: bytes, n: int) -> None:
    if len(data) != n:
        raise DecodeError(f"{kind}: expected {n} bytes, got {len(data)}",
                          expected_len=n, got_len=len(data))


@dataclass(frozen=True)
class ReportA1:
    nonce: bytes
    c1: bytes
    c2: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.c1 + self.c2

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReportA1":
        _expect_len("A1", data, A1_LEN)
        return cls(bytes(data[:32]), bytes(data[32:96]), bytes(data[96:160]))


@dataclass(frozen=True)
class ReportA2:
    nonce: bytes
    c3: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.c3

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReportA2":
        _expect_len("A2", data, A2_LEN)
        return cls(bytes(data[:32]), bytes(data[32:96]))


@dataclass(frozen=True)
class ReportA3:
    nonce: bytes
    device_id: str
    session_id: bytes
    service_verdict: Verdict
    bitstream_verdict: Verdict
    profile_id: cs.ProfileId
    timestamp: int
    service_reason: Reason = Reason.OK
    bitstream_reason: Reason = Reason.OK

    @property
    def accepted(self) -> bool:
        return self.service_verdict is Verdict.Accept and self.bitstream_verdict is Verdict.Accept

    def to_bytes(self) -> bytes:
        dev = self.device_id.encode("utf-8")
        return _A3_FIXED.pack(
            self.nonce, self.session_id, self.profile_id.code,
            self.service_verdict, self.service_reason,
            self.bitstream_verdict, self.bitstream_reason,
            self.timestamp, len(dev),
        ) + dev

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReportA3":
        if len(data) < _A3_FIXED.size:
            raise DecodeError(f"A3: expected at least {_A3_FIXED.size} bytes, got {len(data)}",
                              expected_len=_A3_FIXED.size, got_len=len(data))
        (nonce, sid, profile, sv, sr, bv, br, ts, dlen) = _A3_FIXED.unpack_from(data)
        _expect_len("A3", data, _A3_FIXED.size + dlen)
        try:
            device_id = bytes(data[_A3_FIXED.size:]).decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("A3: device_id is not UTF-8") from None
        return cls(nonce, device_id, sid, Verdict.parse(sv), Verdict.parse(bv),
                   cs.ProfileId.from_code(profile), ts, Reason.parse(sr), Reason.parse(br))


_REPORTS = {"A1": ReportA1, "A2": ReportA2, "A3": ReportA3}


def encode_report(report: ReportA1 | ReportA2 | ReportA3) -> bytes:
    return report.to_bytes()


def decode_report(kind: str, data: bytes):
    """Decode an ``"A1"``, ``"A2"`` or ``"A3"`` report; DecodeError on bad length."""
    try:
        cls = _REPORTS[kind]
    except KeyError:
        raise ValueError(f"unknown report kind {kind!r}") from None
    return cls.from_bytes(data)


# ---------------------------------------------------------------------------
# signed envelopes

def canonical_sign_bytes(payload_type: int, payload: bytes) -> bytes:
    return bytes([int(payload_type)]) + bytes(payload)


@dataclass(frozen=True)
class SignedEnvelope:
    payload_type: PayloadType
    payload: bytes
    signature: bytes = field(repr=False)
    signer_id: str

    def sign_bytes(self) -> bytes:
        return canonical_sign_bytes(self.payload_type, self.payload)


def seal(keypair: cs.SignKeyPair, payload_type: PayloadType, payload: bytes,
         signer_id: str) -> SignedEnvelope:
    sig = cs.dsa_sign(keypair, canonical_sign_bytes(payload_type, payload))
    return SignedEnvelope(PayloadType(payload_type), bytes(payload), sig, signer_id)


def envelope_valid(env: SignedEnvelope, alg: cs.DsaAlg, public: bytes) -> bool:
    """Signature check that maps malformed signatures to ``False``."""
    try:
        return cs.dsa_verify(alg, public, env.sign_bytes(), env.signature)
    except DecodeError:
        return False


# ---------------------------------------------------------------------------
# key-release payloads

def encode_kem_public(alg: cs.KemAlg, public: bytes) -> bytes:
    return bytes([alg.code]) + public


def decode_kem_public(data: bytes) -> tuple[cs.KemAlg, bytes]:
    if not data:
        raise DecodeError("empty KEM public key payload", got_len=0)
    alg = cs.KemAlg.from_code(data[0])
    public = bytes(data[1:])
    _expect_len(f"{alg.value} public key", public, cs.KEM_SIZES[alg].public)
    return alg, public


@dataclass(frozen=True)
class KeyReleasePayload:
    kem_alg: cs.KemAlg
    kem_ciphertext: bytes
    wrapped_key: cs.EncBlob

    def to_bytes(self) -> bytes:
        return (bytes([self.kem_alg.code]) + struct.pack(">I", len(self.kem_ciphertext))
                + self.kem_ciphertext + self.wrapped_key.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyReleasePayload":
        if len(data) < 5:
            raise DecodeError("key release payload truncated", got_len=len(data))
        alg = cs.KemAlg.from_code(data[0])
        (ct_len,) = struct.unpack_from(">I", data, 1)
        expected = cs.KEM_SIZES[alg].ciphertext
        if ct_len != expected or len(data) < 5 + ct_len:
            raise DecodeError(f"{alg.value} ciphertext: expected {expected} bytes",
                              expected_len=expected, got_len=ct_len)
        ct = bytes(data[5:5 + ct_len])
        return cls(alg, ct, cs.EncBlob.from_bytes(bytes(data[5 + ct_len:])))
