"""Verifier-side session state machine.

``verifier_step`` maps (session, incoming frame) to (session', outgoing
frames) and never touches a socket.  Outgoing EvidenceSubmit frames are
meant for the ledger; everything else goes back to the attester.
Sessions are immutable; each step returns a fresh object.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .. import crypto_suite as cs
from ..errors import DecodeError, UnknownDevice
from ..protocol.messages import (
    ProtocolError,
    Reason,
    ReportA3,
    SignedEnvelope,
    Verdict,
)
from ..protocol.wire import (
    Frame,
    MsgType,
    Tag,
    challenge,
    envelope_frame,
    envelope_from_frame,
    error_frame,
    frame_detail,
    frame_reason,
    verdict_frame,
)
from . import appraisal
from .store import NonceRegistry, ReferenceStore, VerifierKeys

SESSION_ID_LEN = 16


class Phase(str, Enum):
    ServiceAttest = "ServiceAttest"
    BitstreamAttest = "BitstreamAttest"
    KeyRelease = "KeyRelease"
    Publish = "Publish"
    Completed = "Completed"
    Failed = "Failed"


@dataclass(frozen=True)
class VerifierSession:
    session_id: bytes
    device_id: str
    profile_id: cs.ProfileId
    phase: Phase
    n1: bytes
    started_at: float
    n2: bytes | None = None
    service_verdict: Verdict | None = None
    service_reason: Reason = Reason.OK
    bitstream_verdict: Verdict | None = None
    bitstream_reason: Reason = Reason.OK
    # Completed or Failed once the attestation part is over; phase then moves to Publish
    outcome: Phase | None = None
    failure: Reason | None = None
    detail: str = ""
    evidence: SignedEnvelope | None = field(default=None, repr=False)
    receipt: tuple[int, int] | None = None

    @property
    def verdicts(self) -> tuple[Verdict | None, Verdict | None]:
        return self.service_verdict, self.bitstream_verdict

    @property
    def accepted(self) -> bool:
        return self.verdicts == (Verdict.Accept, Verdict.Accept)


@dataclass
class VerifierContext:
    store: ReferenceStore
    nonces: NonceRegistry
    keys: VerifierKeys
    entropy_source: cs.EntropySource = cs.os_entropy
    clock: Callable[[], float] = time.time


def _session_id(frame: Frame) -> bytes | None:
    return frame.get(Tag.SESSION_ID)


def _open(ctx: VerifierContext, frame: Frame) -> tuple[VerifierSession | None, list[Frame]]:
    try:
        device_id = frame.text(Tag.DEVICE_ID)
        profile = cs.ProfileId.from_code(frame.require(Tag.PROFILE)[0])
    except DecodeError as exc:
        return None, [error_frame(Reason.DecodeError, str(exc))]
    try:
        record = ctx.store.get(device_id)
    except UnknownDevice:
        return None, [error_frame(Reason.UnknownDevice, device_id)]
    if profile is not record.profile_id:
        return None, [error_frame(Reason.ProfileMismatch,
                                  f"device provisioned for {record.profile_id.value}")]
    sid = ctx.entropy_source(SESSION_ID_LEN)
    n1 = ctx.nonces.issue(device_id, ctx.entropy_source)
    session = VerifierSession(sid, device_id, profile, Phase.ServiceAttest, n1, ctx.clock())
    return session, [challenge(MsgType.ChallengeService, sid, n1)]


def _evidence(ctx: VerifierContext, s: VerifierSession) -> SignedEnvelope:
    report = ReportA3(
        nonce=ctx.nonces.issue(s.device_id, ctx.entropy_source),
        device_id=s.device_id,
        session_id=s.session_id,
        service_verdict=s.service_verdict or Verdict.Reject,
        bitstream_verdict=s.bitstream_verdict or Verdict.Reject,
        profile_id=s.profile_id,
        timestamp=int(ctx.clock()),
        service_reason=s.service_reason,
        bitstream_reason=s.bitstream_reason,
    )
    return appraisal.build_evidence(report, ctx.keys, cs.suite_from_profile(s.profile_id).dsa_alg)


def _fail(ctx: VerifierContext, s: VerifierSession, reason: Reason, detail: str = "",
          notify: bool = True) -> tuple[VerifierSession, list[Frame]]:
    if s.phase is Phase.ServiceAttest:
        s = replace(s, service_verdict=Verdict.Reject, service_reason=reason,
                    bitstream_verdict=Verdict.Reject, bitstream_reason=Reason.SkippedPhase)
    elif s.phase is Phase.BitstreamAttest:
        s = replace(s, bitstream_verdict=Verdict.Reject, bitstream_reason=reason)
    s = replace(s, outcome=Phase.Failed, failure=reason, detail=detail)
    evidence = _evidence(ctx, s)
    s = replace(s, phase=Phase.Publish, evidence=evidence)
    out = []
    if notify:
        if s.accepted:
            out.append(error_frame(reason, detail, s.session_id))
        else:
            out.append(verdict_frame(s.session_id, s.service_verdict, s.bitstream_verdict,
                                     reason, detail))
    out.append(envelope_frame(MsgType.EvidenceSubmit, evidence, s.session_id))
    return s, out


def verifier_abort(ctx: VerifierContext, s: VerifierSession,
                   reason: Reason = Reason.ConnectionLost, detail: str = "",
                   notify: bool = False) -> tuple[VerifierSession, list[Frame]]:
    """Close a session outside the normal flow (lost connection, garbled frame).

    Evidence is still produced; ``notify`` also tells the attester.
    """
    if s.phase is Phase.Publish:
        return s, []
    return _fail(ctx, s, reason, detail, notify=notify)


def verifier_step(ctx: VerifierContext, s: VerifierSession | None,
                  frame: Frame) -> tuple[VerifierSession | None, list[Frame]]:
    if s is None:
        if frame.msg_type is MsgType.ChallengeService:
            return _open(ctx, frame)
        return None, [error_frame(Reason.UnknownSession, "no session open")]

    if frame.msg_type is MsgType.EvidenceAck:
        try:
            block = int.from_bytes(frame.require(Tag.BLOCK_INDEX), "big")
            record = int.from_bytes(frame.require(Tag.RECORD_INDEX), "big")
        except DecodeError:
            return s, []
        return replace(s, receipt=(block, record)), []

    if s.phase is Phase.Publish:
        # attestation is over; late attester frames (e.g. an unwrap Error) change nothing
        return s, []

    if frame.msg_type is MsgType.Error:
        try:
            reason = frame_reason(frame)
        except DecodeError:
            reason = Reason.DecodeError
        return _fail(ctx, s, reason, frame_detail(frame), notify=False)

    if _session_id(frame) != s.session_id:
        return _fail(ctx, s, Reason.UnknownSession, "session id mismatch")

    record = ctx.store.get(s.device_id)
    expected = {
        Phase.ServiceAttest: MsgType.ResponseService,
        Phase.BitstreamAttest: MsgType.ResponseBitstream,
        Phase.KeyRelease: MsgType.KemPublicKey,
    }[s.phase]
    if frame.msg_type is not expected:
        return _fail(ctx, s, Reason.OutOfOrderMessage,
                     f"got {frame.msg_type.name} during {s.phase.value}")
    try:
        env = envelope_from_frame(frame)
    except DecodeError as exc:
        return _fail(ctx, s, Reason.DecodeError, str(exc))

    if s.phase is Phase.ServiceAttest:
        verdict, reason = appraisal.appraise_service(record, env, s.n1, ctx.nonces)
        if verdict is Verdict.Reject:
            return _fail(ctx, s, reason)
        n2 = ctx.nonces.issue(s.device_id, ctx.entropy_source)
        s = replace(s, service_verdict=Verdict.Accept, phase=Phase.BitstreamAttest, n2=n2)
        return s, [challenge(MsgType.ChallengeBitstream, s.session_id, n2)]

    if s.phase is Phase.BitstreamAttest:
        verdict, reason = appraisal.appraise_bitstream(record, env, s.n2)
        if verdict is Verdict.Reject:
            return _fail(ctx, s, reason)
        s = replace(s, bitstream_verdict=Verdict.Accept, phase=Phase.KeyRelease)
        return s, [verdict_frame(s.session_id, Verdict.Accept, Verdict.Accept)]

    # Phase.KeyRelease
    try:
        release = appraisal.release_key(record, env, s.verdicts, ctx.keys, ctx.entropy_source)
    except ProtocolError as exc:
        return _fail(ctx, s, exc.reason, exc.detail)
    s = replace(s, outcome=Phase.Completed)
    evidence = _evidence(ctx, s)
    s = replace(s, phase=Phase.Publish, evidence=evidence)
    return s, [envelope_frame(MsgType.KeyRelease, release, s.session_id),
               envelope_frame(MsgType.EvidenceSubmit, evidence, s.session_id)]
