import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqattest import crypto_suite as cs
from pqattest.attester.session import AttesterPhase, attester_start, attester_step
from pqattest.protocol.messages import Reason, Verdict
from pqattest.protocol.wire import (
    Frame,
    MsgType,
    Tag,
    challenge,
    challenge_request,
    decode_frame,
    envelope_from_frame,
    error_frame,
    frame_reason,
)
from pqattest.ledger.chain import EvidenceRecord
from pqattest.verifier.session import Phase, verifier_abort, verifier_step

from conftest import make_bench, run_in_memory


def _a3(run):
    assert len(run.evidence) == 1
    return EvidenceRecord.from_envelope(envelope_from_frame(run.evidence[0])).a3


@pytest.mark.parametrize("profile", [cs.ProfileId.NoPQ, cs.ProfileId.PQ_III])
def test_honest_run(profile):
    b = make_bench(profile)
    run = run_in_memory(b)
    assert run.attester.phase is AttesterPhase.Completed
    assert run.attester.programmed_digest == b.prov.bitstream_digest == b.device.programmed_digest
    assert run.attester.kem_secret is None
    v = run.verifier
    assert v.phase is Phase.Publish and v.outcome is Phase.Completed and v.accepted
    a3 = _a3(run)
    assert a3.accepted and a3.session_id == v.session_id and a3.device_id == "edge-0"
    kinds = [decode_frame(raw).msg_type for d, raw in run.transcript.entries if d != "v->l"]
    assert kinds == [MsgType.ChallengeService, MsgType.ChallengeService, MsgType.ResponseService,
                     MsgType.ChallengeBitstream, MsgType.ResponseBitstream, MsgType.Verdict,
                     MsgType.KemPublicKey, MsgType.KeyRelease]


def test_deterministic_with_seeded_entropy():
    def once():
        b = make_bench(cs.ProfileId.NoPQ, entropy=cs.SeededEntropy(42), bitstream=b"x" * 500)
        return run_in_memory(b).transcript.hex_lines()
    first, second = once(), once()
    assert first == second
    b = make_bench(cs.ProfileId.NoPQ, entropy=cs.SeededEntropy(43), bitstream=b"x" * 500)
    assert run_in_memory(b).transcript.hex_lines() != first


def test_a1_tamper_rejects_and_skips_bitstream():
    b = make_bench()

    def flip(direction, raw):
        if direction == "a->v" and raw[5] == MsgType.ResponseService:
            raw = bytearray(raw)
            raw[-70] ^= 0x01
            return bytes(raw)
        return raw
    run = run_in_memory(b, flip)
    a3 = _a3(run)
    assert (a3.service_verdict, a3.service_reason) == (Verdict.Reject, Reason.SignatureInvalid)
    assert (a3.bitstream_verdict, a3.bitstream_reason) == (Verdict.Reject, Reason.SkippedPhase)
    assert run.attester.phase is AttesterPhase.Failed
    assert b.device.programmed_digest is None and not b.device.shell_loaded


def test_bitstream_reject_never_releases_key():
    b = make_bench()
    b.device.enc_bitstream = cs.sym_encrypt(cs.sym_keygen(), b"evil").to_bytes()
    run = run_in_memory(b)
    a3 = _a3(run)
    assert a3.service_verdict is Verdict.Accept
    assert (a3.bitstream_verdict, a3.bitstream_reason) == (Verdict.Reject, Reason.ChecksumMismatch)
    kinds = {decode_frame(raw).msg_type for _, raw in run.transcript.entries}
    assert MsgType.KemPublicKey not in kinds and MsgType.KeyRelease not in kinds
    assert run.attester.reason is Reason.ChecksumMismatch


def test_unknown_device_and_profile_mismatch():
    b = make_bench(cs.ProfileId.NoPQ)
    s, out = verifier_step(b.vctx, None, challenge_request("ghost", cs.ProfileId.NoPQ.code))
    assert s is None and frame_reason(out[0]) is Reason.UnknownDevice
    s, out = verifier_step(b.vctx, None, challenge_request("edge-0", cs.ProfileId.PQ_III.code))
    assert s is None and frame_reason(out[0]) is Reason.ProfileMismatch


def _opened(b):
    s, out = verifier_step(b.vctx, None, challenge_request("edge-0", cs.ProfileId.NoPQ.code))
    assert out[0].msg_type is MsgType.ChallengeService
    return s


def test_out_of_order_message():
    b = make_bench()
    s = _opened(b)
    kem = Frame(MsgType.KemPublicKey, {Tag.SESSION_ID: s.session_id})
    s, out = verifier_step(b.vctx, s, kem)
    assert s.failure is Reason.OutOfOrderMessage and s.phase is Phase.Publish
    assert [f.msg_type for f in out] == [MsgType.Verdict, MsgType.EvidenceSubmit]
    # anything after Publish is ignored
    s2, out = verifier_step(b.vctx, s, kem)
    assert s2 == s and out == []


def test_unknown_session():
    b = make_bench()
    s = _opened(b)
    s, out = verifier_step(b.vctx, s, challenge(MsgType.ChallengeBitstream, os.urandom(16), bytes(32)))
    assert s.failure in (Reason.UnknownSession, Reason.OutOfOrderMessage)


def test_abort_publishes_once():
    b = make_bench()
    s = _opened(b)
    s, out = verifier_abort(b.vctx, s)
    assert s.failure is Reason.ConnectionLost
    assert [f.msg_type for f in out] == [MsgType.EvidenceSubmit]
    a3 = envelope_from_frame(out[0])
    assert a3.payload_type.name == "A3"


def test_attester_ignores_frames_after_done():
    b = make_bench()
    actx = b.prov.attester_context()
    a, _ = attester_start(actx)
    a, out = attester_step(actx, a, error_frame(Reason.UnknownDevice))
    assert a.phase is AttesterPhase.Failed and out == []
    a2, out = attester_step(actx, a, challenge(MsgType.ChallengeService, bytes(16), bytes(32)))
    assert a2 == a and out == []


def test_attester_rejects_unexpected_message():
    b = make_bench()
    actx = b.prov.attester_context()
    a, _ = attester_start(actx)
    a, out = attester_step(actx, a, challenge(MsgType.ChallengeBitstream, bytes(16), bytes(32)))
    assert a.reason is Reason.OutOfOrderMessage
    assert frame_reason(out[0]) is Reason.OutOfOrderMessage


@settings(max_examples=30, deadline=None)
@given(order=st.permutations(range(3)))
def test_replayed_attester_messages_never_release(order):
    """An old session's signed messages, replayed into a fresh session in any
    order, never get a key released."""
    b = make_bench()
    honest = run_in_memory(b)
    sent = [decode_frame(raw) for d, raw in honest.transcript.entries if d == "a->v"]
    opener, rest = sent[0], sent[1:]
    assert len(rest) == 3
    b.device.unload_shell()
    s, _ = verifier_step(b.vctx, None, opener)
    released = False
    for i in order:
        frame = Frame(rest[i].msg_type, {**rest[i].fields, Tag.SESSION_ID: s.session_id})
        s, out = verifier_step(b.vctx, s, frame)
        released |= any(f.msg_type is MsgType.KeyRelease for f in out)
    assert not released
    assert s.outcome is not Phase.Completed
