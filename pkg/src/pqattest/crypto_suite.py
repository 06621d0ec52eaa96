"""Algorithm profiles and a uniform DSA / KEM / hash / cipher interface.

Every other module goes through the functions here, so swapping a profile
never touches protocol code.  Post-quantum primitives are the PQClean
implementations shipped in the ``pqcrypto`` package; the classical baseline
and AES come from ``cryptography``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, padding
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from pqcrypto.kem import mceliece348864, ml_kem_1024
from pqcrypto.sign import falcon_1024, ml_dsa_87

from .errors import DecodeError, PaddingError

DIGEST_LEN = 64
SYM_KEY_LEN = 32
IV_LEN = 16
BLOCK_LEN = 16
SHARED_SECRET_LEN = 32

EntropySource = Callable[[int], bytes]


def os_entropy(n: int) -> bytes:
    return os.urandom(n)


class SeededEntropy:
    """Deterministic entropy stream (SHAKE-256 over seed and a counter).

    Only for tests and reproducible runs; never use a fixed seed in a
    deployment.
    """

    def __init__(self, seed: bytes | int):
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=False)
        self._seed = bytes(seed)
        self._counter = 0

    def __call__(self, n: int) -> bytes:
        out = hashlib.shake_256(
            self._seed + self._counter.to_bytes(8, "big")
        ).digest(n)
        self._counter += 1
        return out


class ProfileId(str, Enum):
    NoPQ = "NoPQ"
    PQ_I = "PQ_I"
    PQ_II = "PQ_II"
    PQ_III = "PQ_III"
    PQ_IV = "PQ_IV"

    @property
    def code(self) -> int:
        return _PROFILE_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ProfileId":
        for pid, c in _PROFILE_CODES.items():
            if c == code:
                return pid
        raise DecodeError(f"unknown profile code {code}")

    @classmethod
    def parse(cls, text: str) -> "ProfileId":
        """Accept ``PQ_III``, ``PQ-III``, ``pq3`` style spellings."""
        key = text.strip().upper().replace("-", "").replace("_", "")
        try:
            return _PROFILE_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown profile {text!r}") from None


_PROFILE_CODES = {
    ProfileId.NoPQ: 0,
    ProfileId.PQ_I: 1,
    ProfileId.PQ_II: 2,
    ProfileId.PQ_III: 3,
    ProfileId.PQ_IV: 4,
}

_PROFILE_ALIASES = {
    "NOPQ": ProfileId.NoPQ,
    "PQI": ProfileId.PQ_I, "PQ1": ProfileId.PQ_I,
    "PQII": ProfileId.PQ_II, "PQ2": ProfileId.PQ_II,
    "PQIII": ProfileId.PQ_III, "PQ3": ProfileId.PQ_III,
    "PQIV": ProfileId.PQ_IV, "PQ4": ProfileId.PQ_IV,
}


class DsaAlg(str, Enum):
    ECDSA_P256 = "ECDSA_P256"
    Falcon1024 = "Falcon1024"
    Dilithium5 = "Dilithium5"

    @property
    def code(self) -> int:
        return list(DsaAlg).index(self) + 1

    @classmethod
    def from_code(cls, code: int) -> "DsaAlg":
        algs = list(DsaAlg)
        if not 1 <= code <= len(algs):
            raise DecodeError(f"unknown DSA code {code}")
        return algs[code - 1]


class KemAlg(str, Enum):
    ECDH_P256 = "ECDH_P256"
    Kyber1024 = "Kyber1024"
    McEliece348864 = "McEliece348864"

    @property
    def code(self) -> int:
        return list(KemAlg).index(self) + 1

    @classmethod
    def from_code(cls, code: int) -> "KemAlg":
        algs = list(KemAlg)
        if not 1 <= code <= len(algs):
            raise DecodeError(f"unknown KEM code {code}")
        return algs[code - 1]


@dataclass(frozen=True)
class SuiteProfile:
    profile_id: ProfileId
    dsa_alg: DsaAlg
    kem_alg: KemAlg
    hash_alg: str = "SHA3-512"
    sym_alg: str = "AES-256-CBC"


_TABLE = {
    ProfileId.NoPQ: (DsaAlg.ECDSA_P256, KemAlg.ECDH_P256),
    ProfileId.PQ_I: (DsaAlg.Falcon1024, KemAlg.Kyber1024),
    ProfileId.PQ_II: (DsaAlg.Falcon1024, KemAlg.McEliece348864),
    ProfileId.PQ_III: (DsaAlg.Dilithium5, KemAlg.Kyber1024),
    ProfileId.PQ_IV: (DsaAlg.Dilithium5, KemAlg.McEliece348864),
}


def suite_from_profile(profile_id: ProfileId | str) -> SuiteProfile:
    pid = ProfileId(profile_id) if not isinstance(profile_id, ProfileId) else profile_id
    dsa, kem = _TABLE[pid]
    return SuiteProfile(pid, dsa, kem)


# ---------------------------------------------------------------------------
# parameter sizes

@dataclass(frozen=True)
class DsaSizes:
    public: int
    secret: int
    sig_max: int
    sig_min: int


@dataclass(frozen=True)
class KemSizes:
    public: int
    secret: int
    ciphertext: int


_P256_POINT = 65  # uncompressed SEC1 point
_P256_SCALAR = 32

DSA_SIZES = {
    DsaAlg.ECDSA_P256: DsaSizes(_P256_POINT, _P256_SCALAR, 64, 64),
    # header byte + 40-byte nonce + compressed s2 (variable length)
    DsaAlg.Falcon1024: DsaSizes(falcon_1024.PUBLIC_KEY_SIZE, falcon_1024.SECRET_KEY_SIZE,
                                falcon_1024.SIGNATURE_SIZE, 41),
    DsaAlg.Dilithium5: DsaSizes(ml_dsa_87.PUBLIC_KEY_SIZE, ml_dsa_87.SECRET_KEY_SIZE,
                                ml_dsa_87.SIGNATURE_SIZE, ml_dsa_87.SIGNATURE_SIZE),
}

KEM_SIZES = {
    KemAlg.ECDH_P256: KemSizes(_P256_POINT, _P256_SCALAR, _P256_POINT),
    KemAlg.Kyber1024: KemSizes(ml_kem_1024.PUBLIC_KEY_SIZE, ml_kem_1024.SECRET_KEY_SIZE,
                               ml_kem_1024.CIPHERTEXT_SIZE),
    KemAlg.McEliece348864: KemSizes(mceliece348864.PUBLIC_KEY_SIZE,
                                    mceliece348864.SECRET_KEY_SIZE,
                                    mceliece348864.CIPHERTEXT_SIZE),
}


def _check_len(what: str, data: bytes, expected: int) -> None:
    if len(data) != expected:
        raise DecodeError(f"{what}: expected {expected} bytes, got {len(data)}",
                          expected_len=expected, got_len=len(data))


# ---------------------------------------------------------------------------
# P-256 helpers

_CURVE = ec.SECP256R1()
_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


def _p256_private_from_entropy(entropy: EntropySource) -> ec.EllipticCurvePrivateKey:
    # 64 bits of extra width keep the modular bias negligible
    scalar = int.from_bytes(entropy(40), "big") % (_P256_ORDER - 1) + 1
    return ec.derive_private_key(scalar, _CURVE)


def _p256_secret_bytes(key: ec.EllipticCurvePrivateKey) -> bytes:
    return key.private_numbers().private_value.to_bytes(_P256_SCALAR, "big")


def _p256_public_bytes(key: ec.EllipticCurvePublicKey) -> bytes:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return key.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


def _p256_load_secret(secret: bytes) -> ec.EllipticCurvePrivateKey:
    scalar = int.from_bytes(secret, "big")
    if not 1 <= scalar < _P256_ORDER:
        raise DecodeError("P-256 scalar out of range")
    return ec.derive_private_key(scalar, _CURVE)


def _p256_load_public(public: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, public)
    except ValueError as exc:
        raise DecodeError(f"invalid P-256 point: {exc}") from None


# ---------------------------------------------------------------------------
# signatures

@dataclass(frozen=True)
class SignKeyPair:
    alg: DsaAlg
    public: bytes
    secret: bytes = field(repr=False)


def dsa_keygen(alg: DsaAlg, entropy_source: EntropySource = os_entropy) -> SignKeyPair:
    """Generate a signing key pair.

    ``entropy_source`` drives the ECDSA scalar.  The PQClean Falcon and
    ML-DSA key generators draw from the OS RNG internally and cannot be
    seeded from Python.
    """
    alg = DsaAlg(alg)
    if alg is DsaAlg.ECDSA_P256:
        key = _p256_private_from_entropy(entropy_source)
        return SignKeyPair(alg, _p256_public_bytes(key.public_key()), _p256_secret_bytes(key))
    mod = falcon_1024 if alg is DsaAlg.Falcon1024 else ml_dsa_87
    pk, sk = mod.generate_keypair()
    return SignKeyPair(alg, pk, sk)


def dsa_sign(keypair: SignKeyPair, message: bytes) -> bytes:
    alg = keypair.alg
    _check_len(f"{alg.value} secret key", keypair.secret, DSA_SIZES[alg].secret)
    if alg is DsaAlg.ECDSA_P256:
        key = _p256_load_secret(keypair.secret)
        # RFC 6979 nonces: no dependence on RNG quality at signing time
        der = key.sign(message, ec.ECDSA(hashes.SHA3_512(), deterministic_signing=True))
        r, s = decode_dss_signature(der)
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")
    mod = falcon_1024 if alg is DsaAlg.Falcon1024 else ml_dsa_87
    return mod.sign(keypair.secret, bytes(message))


def dsa_verify(alg: DsaAlg, public: bytes, message: bytes, signature: bytes) -> bool:
    """Return whether ``signature`` is valid.

    Raises DecodeError when the key or signature length cannot belong to
    ``alg``; a well-formed but wrong signature is simply ``False``.
    """
    alg = DsaAlg(alg)
    sizes = DSA_SIZES[alg]
    _check_len(f"{alg.value} public key", public, sizes.public)
    if not sizes.sig_min <= len(signature) <= sizes.sig_max:
        raise DecodeError(
            f"{alg.value} signature: expected {sizes.sig_min}..{sizes.sig_max} bytes, "
            f"got {len(signature)}", expected_len=sizes.sig_max, got_len=len(signature))
    if alg is DsaAlg.ECDSA_P256:
        key = _p256_load_public(public)
        r = int.from_bytes(signature[:32], "big")
        s = int.from_bytes(signature[32:], "big")
        if not (0 < r < _P256_ORDER and 0 < s < _P256_ORDER):
            return False
        try:
            key.verify(encode_dss_signature(r, s), message, ec.ECDSA(hashes.SHA3_512()))
        except InvalidSignature:
            return False
        return True
    mod = falcon_1024 if alg is DsaAlg.Falcon1024 else ml_dsa_87
    try:
        return bool(mod.verify(bytes(public), bytes(message), bytes(signature)))
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# key encapsulation

@dataclass(frozen=True)
class KemKeyPair:
    alg: KemAlg
    public: bytes
    secret: bytes = field(repr=False)


@dataclass(frozen=True)
class KemCiphertext:
    alg: KemAlg
    data: bytes


def derive_sym_key(raw_secret: bytes) -> bytes:
    """Normalise any raw KEM output to an AES-256 key (SHA3-512, first 32 bytes)."""
    return hashlib.sha3_512(raw_secret).digest()[:SYM_KEY_LEN]


def kem_keygen(alg: KemAlg, entropy_source: EntropySource = os_entropy) -> KemKeyPair:
    alg = KemAlg(alg)
    if alg is KemAlg.ECDH_P256:
        key = _p256_private_from_entropy(entropy_source)
        return KemKeyPair(alg, _p256_public_bytes(key.public_key()), _p256_secret_bytes(key))
    mod = ml_kem_1024 if alg is KemAlg.Kyber1024 else mceliece348864
    pk, sk = mod.generate_keypair()
    return KemKeyPair(alg, pk, sk)


def kem_encapsulate_raw(alg: KemAlg, public: bytes,
                        entropy_source: EntropySource = os_entropy) -> tuple[KemCiphertext, bytes]:
    """Encapsulate and return the algorithm's raw shared secret."""
    alg = KemAlg(alg)
    _check_len(f"{alg.value} public key", public, KEM_SIZES[alg].public)
    if alg is KemAlg.ECDH_P256:
        peer = _p256_load_public(public)
        eph = _p256_private_from_entropy(entropy_source)
        raw = eph.exchange(ec.ECDH(), peer)
        return KemCiphertext(alg, _p256_public_bytes(eph.public_key())), raw
    mod = ml_kem_1024 if alg is KemAlg.Kyber1024 else mceliece348864
    ct, raw = mod.encrypt(bytes(public))
    return KemCiphertext(alg, ct), raw


def kem_decapsulate_raw(alg: KemAlg, secret: bytes, ciphertext: bytes) -> bytes:
    alg = KemAlg(alg)
    sizes = KEM_SIZES[alg]
    _check_len(f"{alg.value} secret key", secret, sizes.secret)
    _check_len(f"{alg.value} ciphertext", ciphertext, sizes.ciphertext)
    if alg is KemAlg.ECDH_P256:
        key = _p256_load_secret(bytes(secret))
        peer = _p256_load_public(ciphertext)
        return key.exchange(ec.ECDH(), peer)
    mod = ml_kem_1024 if alg is KemAlg.Kyber1024 else mceliece348864
    # ML-KEM and McEliece use implicit rejection: a tampered ciphertext
    # yields an unrelated secret rather than an error
    return mod.decrypt(bytes(secret), bytes(ciphertext))


def kem_encapsulate(alg: KemAlg, public: bytes,
                    entropy_source: EntropySource = os_entropy) -> tuple[KemCiphertext, bytes]:
    ct, raw = kem_encapsulate_raw(alg, public, entropy_source)
    return ct, derive_sym_key(raw)


def kem_decapsulate(alg: KemAlg, secret: bytes, ciphertext: bytes) -> bytes:
    return derive_sym_key(kem_decapsulate_raw(alg, secret, ciphertext))


# ---------------------------------------------------------------------------
# hash and symmetric cipher

def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol vocabulary
    return hashlib.sha3_512(data).digest()


@dataclass(frozen=True)
class EncBlob:
    iv: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return self.iv + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncBlob":
        if len(data) < IV_LEN + BLOCK_LEN or (len(data) - IV_LEN) % BLOCK_LEN:
            raise DecodeError("encrypted blob must be a 16-byte IV plus whole AES blocks",
                              got_len=len(data))
        return cls(bytes(data[:IV_LEN]), bytes(data[IV_LEN:]))


def sym_encrypt(key: bytes, plaintext: bytes,
                entropy_source: EntropySource = os_entropy) -> EncBlob:
    _check_len("AES-256 key", key, SYM_KEY_LEN)
    iv = entropy_source(IV_LEN)
    padder = padding.PKCS7(128).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(bytes(key)), modes.CBC(iv)).encryptor()
    return EncBlob(iv, enc.update(padded) + enc.finalize())


def sym_decrypt(key: bytes, blob: EncBlob) -> bytes:
    _check_len("AES-256 key", key, SYM_KEY_LEN)
    _check_len("IV", blob.iv, IV_LEN)
    if not blob.ciphertext or len(blob.ciphertext) % BLOCK_LEN:
        raise DecodeError("ciphertext must be a positive multiple of 16 bytes",
                          got_len=len(blob.ciphertext))
    dec = Cipher(algorithms.AES(bytes(key)), modes.CBC(blob.iv)).decryptor()
    padded = dec.update(blob.ciphertext) + dec.finalize()
    unpadder = padding.PKCS7(128).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError:
        raise PaddingError("invalid PKCS#7 padding") from None


def sym_keygen(entropy_source: EntropySource = os_entropy) -> bytes:
    return entropy_source(SYM_KEY_LEN)
