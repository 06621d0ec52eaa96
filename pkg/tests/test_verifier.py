import pytest

from pqattest import crypto_suite as cs
from pqattest import device_model as dm
from pqattest.attester.session import respond_bitstream_challenge, respond_service_challenge
from pqattest.errors import DuplicateDevice, UnknownDevice
from pqattest.protocol.messages import (
    PayloadType,
    ProtocolError,
    Reason,
    ReportA3,
    Verdict,
    encode_kem_public,
    envelope_valid,
    seal,
)
from pqattest.verifier.appraisal import (
    appraise_bitstream,
    appraise_service,
    build_evidence,
    release_key,
)
from pqattest.verifier.store import NonceRegistry, ReferenceRecord, ReferenceStore, VerifierKeys

from conftest import make_bench


@pytest.fixture
def b():
    return make_bench(cs.ProfileId.NoPQ)


def _actx(b):
    return b.prov.attester_context()


def test_service_accept_then_stale(b):
    n1 = b.vctx.nonces.issue("edge-0", cs.os_entropy)
    _, env = respond_service_challenge(_actx(b), n1)
    rec = b.prov.record
    assert appraise_service(rec, env, n1, b.vctx.nonces) == (Verdict.Accept, Reason.OK)
    # the same report again: nonce was consumed
    assert appraise_service(rec, env, n1, b.vctx.nonces) == (Verdict.Reject, Reason.StaleNonce)
    n1b = b.vctx.nonces.issue("edge-0", cs.os_entropy)
    assert appraise_service(rec, env, n1b, b.vctx.nonces) == (Verdict.Reject, Reason.StaleNonce)


def test_service_unknown_nonce(b):
    n1 = b.vctx.nonces.issue("edge-0", cs.os_entropy)
    _, env = respond_service_challenge(_actx(b), bytes(32))
    assert appraise_service(b.prov.record, env, n1, b.vctx.nonces) == \
        (Verdict.Reject, Reason.NonceMismatch)


def test_service_signature_checked_first(b):
    n1 = b.vctx.nonces.issue("edge-0", cs.os_entropy)
    _, env = respond_service_challenge(_actx(b), n1)
    forged = seal(cs.dsa_keygen(cs.DsaAlg.ECDSA_P256), PayloadType.A1, env.payload, "edge-0")
    assert appraise_service(b.prov.record, forged, n1, b.vctx.nonces) == \
        (Verdict.Reject, Reason.SignatureInvalid)
    wrong_signer = type(env)(env.payload_type, env.payload, env.signature, "edge-1")
    assert appraise_service(b.prov.record, wrong_signer, n1, b.vctx.nonces)[1] is Reason.SignatureInvalid
    # the failed attempts must not have consumed the nonce
    assert appraise_service(b.prov.record, env, n1, b.vctx.nonces) == (Verdict.Accept, Reason.OK)


def test_service_checksum(b):
    b.device.sw_manifest.entries["runtime"] = b"xrt 9.9"
    n1 = b.vctx.nonces.issue("edge-0", cs.os_entropy)
    _, env = respond_service_challenge(_actx(b), n1)
    assert appraise_service(b.prov.record, env, n1, b.vctx.nonces) == \
        (Verdict.Reject, Reason.ChecksumMismatch)


def test_bitstream_paths(b):
    ctx = _actx(b)
    dm.load_shell(b.device)
    n2 = bytes(range(32))
    _, env = respond_bitstream_challenge(ctx, n2)
    rec = b.prov.record
    assert appraise_bitstream(rec, env, n2) == (Verdict.Accept, Reason.OK)
    assert appraise_bitstream(rec, env, bytes(32)) == (Verdict.Reject, Reason.NonceMismatch)
    b.device.enc_bitstream += b"\x00" * 16
    _, env = respond_bitstream_challenge(ctx, n2)
    assert appraise_bitstream(rec, env, n2) == (Verdict.Reject, Reason.ChecksumMismatch)
    b.device.k_fpga = cs.sym_keygen()
    _, env = respond_bitstream_challenge(ctx, n2)
    assert appraise_bitstream(rec, env, n2) == (Verdict.Reject, Reason.DecryptFailed)


def test_bitstream_report_is_encrypted(b):
    dm.load_shell(b.device)
    n2 = bytes(range(32))
    blob, env = respond_bitstream_challenge(_actx(b), n2)
    assert env.payload == blob.to_bytes()
    assert n2 not in env.payload and b.prov.record.c3_ref not in env.payload


def test_release_key(b):
    rec = b.prov.record
    ok = (Verdict.Accept, Verdict.Accept)
    kem = cs.kem_keygen(cs.KemAlg.ECDH_P256)
    kem_env = seal(b.prov.identity.sign_keypair, PayloadType.KEM_PUBLIC,
                   encode_kem_public(kem.alg, kem.public), "edge-0")
    env = release_key(rec, kem_env, ok, b.vctx.keys)
    assert env.payload_type is PayloadType.KEY_RELEASE
    assert envelope_valid(env, cs.DsaAlg.ECDSA_P256, b.vctx.keys.public(cs.DsaAlg.ECDSA_P256))
    assert rec.k_btstr not in env.payload

    with pytest.raises(ProtocolError) as info:
        release_key(rec, kem_env, (Verdict.Accept, Verdict.Reject), b.vctx.keys)
    assert info.value.reason is Reason.OutOfOrderMessage

    other = cs.kem_keygen(cs.KemAlg.Kyber1024)
    wrong_alg = seal(b.prov.identity.sign_keypair, PayloadType.KEM_PUBLIC,
                     encode_kem_public(other.alg, other.public), "edge-0")
    with pytest.raises(ProtocolError) as info:
        release_key(rec, wrong_alg, ok, b.vctx.keys)
    assert info.value.reason is Reason.ProfileMismatch

    unsigned = seal(cs.dsa_keygen(cs.DsaAlg.ECDSA_P256), PayloadType.KEM_PUBLIC,
                    kem_env.payload, "edge-0")
    with pytest.raises(ProtocolError) as info:
        release_key(rec, unsigned, ok, b.vctx.keys)
    assert info.value.reason is Reason.SignatureInvalid


def test_build_evidence(b):
    a3 = ReportA3(bytes(32), "edge-0", bytes(16), Verdict.Reject, Verdict.Reject,
                  cs.ProfileId.NoPQ, 5, Reason.SignatureInvalid, Reason.SkippedPhase)
    env = build_evidence(a3, b.vctx.keys, cs.DsaAlg.ECDSA_P256)
    assert env.signer_id == "verifier/ECDSA_P256"
    assert envelope_valid(env, cs.DsaAlg.ECDSA_P256, b.vctx.keys.public(cs.DsaAlg.ECDSA_P256))
    assert ReportA3.from_bytes(env.payload) == a3


# -- persistence ----------------------------------------------------------------

def test_store_persistence(tmp_path, b):
    store = ReferenceStore(tmp_path / "s.json")
    store.provision(b.prov.record)
    with pytest.raises(DuplicateDevice):
        store.provision(b.prov.record)
    store.provision(b.prov.record, force=True)
    again = ReferenceStore(tmp_path / "s.json")
    assert again.get("edge-0") == b.prov.record
    with pytest.raises(UnknownDevice):
        again.get("nope")
    assert ReferenceRecord.from_json(b.prov.record.to_json()) == b.prov.record


def test_record_validates_lengths(b):
    doc = b.prov.record.to_json()
    doc["c1_ref"] = "00" * 10
    with pytest.raises(ValueError, match="c1_ref"):
        ReferenceRecord.from_json(doc)


def test_nonce_registry_survives_restart(tmp_path):
    reg = NonceRegistry(tmp_path / "n.log")
    n = reg.issue("d", cs.os_entropy)
    assert reg.check_and_consume("d", n, n) is Reason.OK
    reg2 = NonceRegistry(tmp_path / "n.log")
    assert reg2.check_and_consume("d", n, n) is Reason.StaleNonce
    assert reg2.check_and_consume("d", bytes(32), n) is Reason.NonceMismatch


def test_nonces_unique_even_with_repeating_entropy():
    reg = NonceRegistry()
    seq = iter([bytes(32), bytes(32), b"\x01" * 32])
    assert reg.issue("d", lambda n: next(seq)) == bytes(32)
    seq = iter([bytes(32), b"\x01" * 32])
    assert reg.issue("d", lambda n: next(seq)) == b"\x01" * 32


def test_verifier_keys_persist(tmp_path):
    keys = VerifierKeys("v", tmp_path / "k.json")
    pub = keys.public(cs.DsaAlg.Dilithium5)
    assert VerifierKeys("v", tmp_path / "k.json").public(cs.DsaAlg.Dilithium5) == pub
    assert oct((tmp_path / "k.json").stat().st_mode & 0o777) == "0o600"
