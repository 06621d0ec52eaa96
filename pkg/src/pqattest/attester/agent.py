"""Network side of the attester: device files and the TCP session driver."""

from __future__ import annotations

import contextlib
import json
import logging
import socket
from dataclasses import dataclass, replace
from pathlib import Path

from .. import crypto_suite as cs
from .. import device_model as dm
from ..errors import DecodeError
from ..protocol.messages import Reason, Verdict
from ..protocol.wire import Frame, Transcript, decode_frame, error_frame, read_raw_frame
from .session import (
    AttesterContext,
    AttesterIdentity,
    AttesterPhase,
    AttesterSession,
    attester_start,
    attester_step,
)

log = logging.getLogger(__name__)


def identity_to_json(identity: AttesterIdentity) -> dict:
    return {
        "device_id": identity.device_id,
        "profile": identity.profile_id.value,
        "dsa_alg": identity.sign_keypair.alg.value,
        "public": identity.sign_keypair.public.hex(),
        "secret": identity.sign_keypair.secret.hex(),
    }


def identity_from_json(doc: dict) -> AttesterIdentity:
    alg = cs.DsaAlg(doc["dsa_alg"])
    pair = cs.SignKeyPair(alg, bytes.fromhex(doc["public"]), bytes.fromhex(doc["secret"]))
    return AttesterIdentity(doc["device_id"], pair, cs.ProfileId.parse(doc["profile"]))


def load_attester_context(path: Path | str,
                          entropy_source: cs.EntropySource = cs.os_entropy) -> AttesterContext:
    """Read a device file written by ``pqattest provision``."""
    path = Path(path)
    doc = json.loads(path.read_text())
    device = dm.device_from_document(doc["device"], path.parent)
    identity = identity_from_json(doc["identity"])
    if identity.device_id != device.device_id:
        raise ValueError("identity and device sections name different devices")
    verifier = doc["verifier"]
    return AttesterContext(identity, device, verifier["signer_id"],
                           bytes.fromhex(verifier["public"]), entropy_source)


@dataclass
class AttestationOutcome:
    phase: AttesterPhase
    session_id: bytes | None
    service_verdict: Verdict | None
    bitstream_verdict: Verdict | None
    reason: Reason
    detail: str
    programmed_digest: bytes | None

    @property
    def completed(self) -> bool:
        return self.phase is AttesterPhase.Completed

    @classmethod
    def from_session(cls, s: AttesterSession) -> "AttestationOutcome":
        return cls(s.phase, s.session_id, s.service_verdict, s.bitstream_verdict,
                   s.reason, s.detail, s.programmed_digest)

    def to_json(self) -> dict:
        return {
            "outcome": self.phase.value,
            "session_id": self.session_id.hex() if self.session_id else None,
            "service_verdict": self.service_verdict.name if self.service_verdict is not None else None,
            "bitstream_verdict": (self.bitstream_verdict.name
                                  if self.bitstream_verdict is not None else None),
            "reason": self.reason.name,
            "detail": self.detail,
            "programmed_digest": self.programmed_digest.hex() if self.programmed_digest else None,
        }


def run_session(ctx: AttesterContext, address: tuple[str, int], timeout: float = 30.0,
                transcript: Transcript | None = None) -> AttestationOutcome:
    """Run one attestation session over a fresh TCP connection.

    Connection errors before the first frame propagate as OSError so callers
    can tell "verifier down" apart from a protocol failure.
    """
    sock = socket.create_connection(address, timeout=timeout)
    try:
        sock.settimeout(timeout)

        def send(frames: list[Frame]) -> None:
            for frame in frames:
                data = frame.encode()
                sock.sendall(data)
                if transcript is not None:
                    transcript.record("a->v", data)

        s, out = attester_start(ctx)
        send(out)
        while not s.done:
            try:
                raw = read_raw_frame(sock)
                if raw is None:
                    s = _failed(s, Reason.ConnectionLost, "verifier closed the connection")
                    break
                if transcript is not None:
                    transcript.record("v->a", raw)
                frame = decode_frame(raw)
            except DecodeError as exc:
                with contextlib.suppress(OSError):
                    send([error_frame(Reason.DecodeError, str(exc), s.session_id)])
                s = _failed(s, Reason.DecodeError, str(exc))
                break
            except (OSError, EOFError) as exc:
                s = _failed(s, Reason.ConnectionLost, str(exc) or type(exc).__name__)
                break
            s, out = attester_step(ctx, s, frame)
            with contextlib.suppress(OSError):
                send(out)
        log.info("session %s ended %s (%s)", s.session_id.hex() if s.session_id else "-",
                 s.phase.value, s.reason.name)
        return AttestationOutcome.from_session(s)
    finally:
        sock.close()


def _failed(s: AttesterSession, reason: Reason, detail: str) -> AttesterSession:
    if s.kem_secret is not None:
        s.kem_secret[:] = bytes(len(s.kem_secret))
    return replace(s, phase=AttesterPhase.Failed, reason=reason, detail=detail, kem_secret=None)
