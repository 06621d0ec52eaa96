"""Attester-side session state machine.

Unlike the verifier, the attester drives a device, so steps have one side
effect: the DeviceState they hold (shell load, programming).  The session
record itself is still replaced, never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .. import crypto_suite as cs
from .. import device_model as dm
from ..errors import DecodeError, DeviceError, PaddingError
from ..protocol.messages import (
    KeyReleasePayload,
    PayloadType,
    ProtocolError,
    Reason,
    ReportA1,
    ReportA2,
    SignedEnvelope,
    Verdict,
    encode_kem_public,
    envelope_valid,
    seal,
)
from ..protocol.wire import (
    Frame,
    MsgType,
    Tag,
    challenge_request,
    envelope_frame,
    envelope_from_frame,
    error_frame,
    frame_detail,
    frame_reason,
)


@dataclass(frozen=True)
class AttesterIdentity:
    device_id: str
    sign_keypair: cs.SignKeyPair
    profile_id: cs.ProfileId

    def __post_init__(self):
        expected = cs.suite_from_profile(self.profile_id).dsa_alg
        if self.sign_keypair.alg is not expected:
            raise ValueError(f"{self.profile_id.value} signs with {expected.value}, "
                             f"identity holds {self.sign_keypair.alg.value}")


@dataclass
class AttesterContext:
    identity: AttesterIdentity
    device: dm.DeviceState
    verifier_signer_id: str
    verifier_public: bytes = field(repr=False)
    entropy_source: cs.EntropySource = cs.os_entropy
    # profile announced in the handshake; normally the identity's own
    profile_override: cs.ProfileId | None = None

    @property
    def profile_id(self) -> cs.ProfileId:
        return self.profile_override or self.identity.profile_id

    @property
    def suite(self) -> cs.SuiteProfile:
        return cs.suite_from_profile(self.identity.profile_id)


class AttesterPhase(str, Enum):
    AwaitServiceChallenge = "AwaitServiceChallenge"
    AwaitBitstreamChallenge = "AwaitBitstreamChallenge"
    AwaitVerdict = "AwaitVerdict"
    AwaitKeyRelease = "AwaitKeyRelease"
    Completed = "Completed"
    Failed = "Failed"


TERMINAL = (AttesterPhase.Completed, AttesterPhase.Failed)


@dataclass(frozen=True)
class AttesterSession:
    phase: AttesterPhase
    session_id: bytes | None = None
    service_verdict: Verdict | None = None
    bitstream_verdict: Verdict | None = None
    reason: Reason = Reason.OK
    detail: str = ""
    kem_public: bytes | None = field(default=None, repr=False)
    # bytearray so it can be wiped once the key release is processed
    kem_secret: bytearray | None = field(default=None, repr=False)
    programmed_digest: bytes | None = None

    @property
    def done(self) -> bool:
        return self.phase in TERMINAL


# ---------------------------------------------------------------------------
# evidence gathering

def respond_service_challenge(ctx: AttesterContext, n1: bytes) -> tuple[ReportA1, SignedEnvelope]:
    report = ReportA1(n1, dm.measure(ctx.device.sw_manifest), dm.measure(ctx.device.hw_manifest))
    env = seal(ctx.identity.sign_keypair, PayloadType.A1, report.to_bytes(), ctx.identity.device_id)
    return report, env


def respond_bitstream_challenge(ctx: AttesterContext, n2: bytes) -> tuple[cs.EncBlob, SignedEnvelope]:
    if not ctx.device.shell_loaded:
        dm.load_shell(ctx.device)
    report = ReportA2(n2, dm.measure_bitstream(ctx.device))
    blob = dm.kernel_encrypt(ctx.device, report.to_bytes(), ctx.entropy_source)
    env = seal(ctx.identity.sign_keypair, PayloadType.ENC_A2, blob.to_bytes(),
               ctx.identity.device_id)
    return blob, env


def _wipe(buf: bytearray | None) -> None:
    if buf is not None:
        buf[:] = bytes(len(buf))


def unwrap_key_release(ctx: AttesterContext, env: SignedEnvelope, kem_secret: bytes) -> bytes:
    """Check the verifier's signature, decapsulate and unwrap K_btstr."""
    if (env.payload_type is not PayloadType.KEY_RELEASE
            or env.signer_id != ctx.verifier_signer_id
            or not envelope_valid(env, ctx.suite.dsa_alg, ctx.verifier_public)):
        raise ProtocolError(Reason.SignatureInvalid, "key release not signed by the verifier")
    try:
        release = KeyReleasePayload.from_bytes(env.payload)
    except DecodeError as exc:
        raise ProtocolError(Reason.DecodeError, str(exc)) from None
    if release.kem_alg is not ctx.suite.kem_alg:
        raise ProtocolError(Reason.ProfileMismatch, f"unexpected KEM {release.kem_alg.value}")
    try:
        k = cs.kem_decapsulate(release.kem_alg, kem_secret, release.kem_ciphertext)
        return cs.sym_decrypt(k, release.wrapped_key)
    except (DecodeError, PaddingError) as exc:
        raise ProtocolError(Reason.KeyUnwrapFailed, str(exc)) from None


# ---------------------------------------------------------------------------
# state machine

def attester_start(ctx: AttesterContext) -> tuple[AttesterSession, list[Frame]]:
    s = AttesterSession(AttesterPhase.AwaitServiceChallenge)
    return s, [challenge_request(ctx.identity.device_id, ctx.profile_id.code)]


def _fail(s: AttesterSession, reason: Reason, detail: str = "",
          notify: bool = True) -> tuple[AttesterSession, list[Frame]]:
    _wipe(s.kem_secret)
    out = [error_frame(reason, detail, s.session_id)] if notify else []
    return replace(s, phase=AttesterPhase.Failed, reason=reason, detail=detail,
                   kem_secret=None), out


def _on_verdict(s: AttesterSession, frame: Frame) -> AttesterSession:
    service = Verdict.parse(frame.require(Tag.SERVICE_VERDICT)[0])
    bitstream = Verdict.parse(frame.require(Tag.BITSTREAM_VERDICT)[0])
    reason = frame_reason(frame)
    s = replace(s, service_verdict=service, bitstream_verdict=bitstream)
    if service is Verdict.Accept and bitstream is Verdict.Accept:
        return s
    return replace(s, phase=AttesterPhase.Failed, reason=reason, detail=frame_detail(frame))


def attester_step(ctx: AttesterContext, s: AttesterSession,
                  frame: Frame) -> tuple[AttesterSession, list[Frame]]:
    if s.done:
        return s, []
    try:
        return _step(ctx, s, frame)
    except DecodeError as exc:
        return _fail(s, Reason.DecodeError, str(exc))
    except DeviceError as exc:
        return _fail(s, Reason.DeviceError, f"{type(exc).__name__}: {exc}")


def _step(ctx: AttesterContext, s: AttesterSession,
          frame: Frame) -> tuple[AttesterSession, list[Frame]]:
    if frame.msg_type is MsgType.Error:
        return _fail(s, frame_reason(frame), frame_detail(frame), notify=False)

    sid = frame.get(Tag.SESSION_ID)
    if s.phase is AttesterPhase.AwaitServiceChallenge:
        if frame.msg_type is not MsgType.ChallengeService:
            return _fail(s, Reason.OutOfOrderMessage, f"expected a service challenge, "
                         f"got {frame.msg_type.name}")
        sid = frame.require(Tag.SESSION_ID)
        _, env = respond_service_challenge(ctx, frame.require(Tag.NONCE))
        s = replace(s, session_id=sid, phase=AttesterPhase.AwaitBitstreamChallenge)
        return s, [envelope_frame(MsgType.ResponseService, env, sid)]

    if sid != s.session_id:
        return _fail(s, Reason.UnknownSession, "session id mismatch")

    if frame.msg_type is MsgType.Verdict:
        s = _on_verdict(s, frame)
        if s.phase is AttesterPhase.Failed:
            return s, []
        if s.phase is not AttesterPhase.AwaitVerdict:
            return _fail(s, Reason.OutOfOrderMessage, "Accept verdict before Phase III")
        pair = cs.kem_keygen(ctx.suite.kem_alg, ctx.entropy_source)
        env = seal(ctx.identity.sign_keypair, PayloadType.KEM_PUBLIC,
                   encode_kem_public(pair.alg, pair.public), ctx.identity.device_id)
        s = replace(s, phase=AttesterPhase.AwaitKeyRelease, kem_public=pair.public,
                    kem_secret=bytearray(pair.secret))
        return s, [envelope_frame(MsgType.KemPublicKey, env, sid)]

    if s.phase is AttesterPhase.AwaitBitstreamChallenge:
        if frame.msg_type is not MsgType.ChallengeBitstream:
            return _fail(s, Reason.OutOfOrderMessage,
                         f"expected a bitstream challenge, got {frame.msg_type.name}")
        s = replace(s, service_verdict=Verdict.Accept)
        _, env = respond_bitstream_challenge(ctx, frame.require(Tag.NONCE))
        return replace(s, phase=AttesterPhase.AwaitVerdict), \
            [envelope_frame(MsgType.ResponseBitstream, env, sid)]

    if s.phase is AttesterPhase.AwaitKeyRelease and frame.msg_type is MsgType.KeyRelease:
        secret = s.kem_secret
        try:
            k_btstr = bytearray(unwrap_key_release(ctx, envelope_from_frame(frame), bytes(secret)))
        except ProtocolError as exc:
            return _fail(s, exc.reason, exc.detail)
        finally:
            _wipe(secret)
        try:
            digest = dm.program_bitstream(ctx.device, bytes(k_btstr))
        except (PaddingError, DecodeError) as exc:
            return _fail(replace(s, kem_secret=None), Reason.ProgrammingFailed, str(exc))
        finally:
            _wipe(k_btstr)
        return replace(s, phase=AttesterPhase.Completed, kem_secret=None,
                       programmed_digest=digest), []

    return _fail(s, Reason.OutOfOrderMessage,
                 f"got {frame.msg_type.name} during {s.phase.value}")
