"""Evidence appraisal and key release on the verifier side.

Each appraisal returns ``(Verdict, Reason)``; the reason says which check
fired so harnesses can assert on it.
"""

from __future__ import annotations

import hmac

from .. import crypto_suite as cs
from ..errors import DecodeError, PaddingError
from ..protocol.messages import (
    KeyReleasePayload,
    PayloadType,
    ProtocolError,
    Reason,
    ReportA1,
    ReportA2,
    ReportA3,
    SignedEnvelope,
    Verdict,
    decode_kem_public,
    envelope_valid,
    seal,
)
from .store import NonceRegistry, ReferenceRecord, VerifierKeys

REJECT = Verdict.Reject
ACCEPT = Verdict.Accept


def _device_signed(record: ReferenceRecord, env: SignedEnvelope, ptype: PayloadType) -> bool:
    return (env.payload_type is ptype
            and env.signer_id == record.device_id
            and envelope_valid(env, record.suite.dsa_alg, record.k_s_pub))


def appraise_service(record: ReferenceRecord, env: SignedEnvelope, expected_nonce: bytes,
                     nonces: NonceRegistry) -> tuple[Verdict, Reason]:
    """Phase II: signature, then nonce freshness, then C1/C2 against references."""
    if not _device_signed(record, env, PayloadType.A1):
        return REJECT, Reason.SignatureInvalid
    try:
        report = ReportA1.from_bytes(env.payload)
    except DecodeError:
        return REJECT, Reason.DecodeError
    nonce_reason = nonces.check_and_consume(record.device_id, report.nonce, expected_nonce)
    if nonce_reason is not Reason.OK:
        return REJECT, nonce_reason
    if not (hmac.compare_digest(report.c1, record.c1_ref)
            and hmac.compare_digest(report.c2, record.c2_ref)):
        return REJECT, Reason.ChecksumMismatch
    return ACCEPT, Reason.OK


def appraise_bitstream(record: ReferenceRecord, env: SignedEnvelope,
                       expected_nonce: bytes) -> tuple[Verdict, Reason]:
    """Phase III: signature over the encrypted report first, decrypt only if it holds."""
    if not _device_signed(record, env, PayloadType.ENC_A2):
        return REJECT, Reason.SignatureInvalid
    try:
        plaintext = cs.sym_decrypt(record.k_fpga, cs.EncBlob.from_bytes(env.payload))
        report = ReportA2.from_bytes(plaintext)
    except (PaddingError, DecodeError):
        return REJECT, Reason.DecryptFailed
    if not hmac.compare_digest(report.nonce, expected_nonce):
        return REJECT, Reason.NonceMismatch
    if not hmac.compare_digest(report.c3, record.c3_ref):
        return REJECT, Reason.ChecksumMismatch
    return ACCEPT, Reason.OK


def release_key(record: ReferenceRecord, kem_env: SignedEnvelope, verdicts: tuple,
                keys: VerifierKeys,
                entropy_source: cs.EntropySource = cs.os_entropy) -> SignedEnvelope:
    """Phase IV: wrap K_btstr under a fresh KEM secret for the attester's ephemeral key.

    Raises ProtocolError when attestation did not fully pass or the KEM
    public key is not authentic.
    """
    if tuple(verdicts) != (ACCEPT, ACCEPT):
        raise ProtocolError(Reason.OutOfOrderMessage, "phase order violation: key release "
                            "requires two Accept verdicts")
    if not _device_signed(record, kem_env, PayloadType.KEM_PUBLIC):
        raise ProtocolError(Reason.SignatureInvalid, "KEM public key not signed by device")
    try:
        kem_alg, kem_public = decode_kem_public(kem_env.payload)
    except DecodeError as exc:
        raise ProtocolError(Reason.DecodeError, str(exc)) from None
    if kem_alg is not record.suite.kem_alg:
        raise ProtocolError(Reason.ProfileMismatch,
                            f"expected {record.suite.kem_alg.value}, got {kem_alg.value}")
    ct, k = cs.kem_encapsulate(kem_alg, kem_public, entropy_source)
    wrapped = cs.sym_encrypt(k, record.k_btstr, entropy_source)
    payload = KeyReleasePayload(kem_alg, ct.data, wrapped).to_bytes()
    dsa = record.suite.dsa_alg
    return seal(keys.keypair(dsa), PayloadType.KEY_RELEASE, payload, keys.signer_id(dsa))


def build_evidence(report: ReportA3, keys: VerifierKeys, dsa_alg: cs.DsaAlg) -> SignedEnvelope:
    """Phase V: sign A3 with the verifier's key for the session's DSA (S3)."""
    return seal(keys.keypair(dsa_alg), PayloadType.A3, report.to_bytes(), keys.signer_id(dsa_alg))
