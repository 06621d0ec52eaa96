import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqattest import crypto_suite as cs
from pqattest.errors import DecodeError, PaddingError

from conftest import load_kat
from oracles import falcon_verify, mceliece_encap

H = bytes.fromhex


# -- known answers -----------------------------------------------------------

@pytest.mark.parametrize("row", load_kat("sha3_512.kat"), ids=lambda r: r[1][:16] or "empty")
def test_hash_kat(row):
    _, msg, expected = row
    assert cs.hash(H(msg)) == H(expected)


@pytest.mark.parametrize("row", load_kat("aes256cbc.kat"))
def test_aes_cbc_kat(row):
    _, key, iv, pt, ct = map(str, row)
    blob = cs.sym_encrypt(H(key), H(pt), lambda n: H(iv))
    assert blob.ciphertext == H(ct)
    assert cs.sym_decrypt(H(key), cs.EncBlob(H(iv), H(ct))) == H(pt)


@pytest.mark.parametrize("row", load_kat("kdf.kat"))
def test_kdf_kat(row):
    _, raw, expected = row
    assert cs.derive_sym_key(H(raw)) == H(expected)


@pytest.mark.parametrize("row", load_kat("dsa_verify.kat"), ids=lambda r: f"{r[0]}-{r[-1]}")
def test_dsa_verify_kat(row):
    alg, pk, msg, sig, ok = row
    assert cs.dsa_verify(cs.DsaAlg(alg), H(pk), H(msg), H(sig)) is (ok == "01")


@pytest.mark.parametrize("row", load_kat("dsa_sign.kat"))
def test_ecdsa_deterministic_sign_kat(row):
    alg, sk, msg, sig = row
    pair = cs.SignKeyPair(cs.DsaAlg(alg), b"", H(sk))
    assert cs.dsa_sign(pair, H(msg)) == H(sig)


@pytest.mark.parametrize("row", load_kat("kem_decaps.kat"), ids=lambda r: r[0])
def test_kem_decaps_kat(row):
    alg, sk, ct, shared = row
    assert cs.kem_decapsulate_raw(cs.KemAlg(alg), H(sk), H(ct)) == H(shared)


def test_every_algorithm_has_fixtures():
    verify_algs = {r[0] for r in load_kat("dsa_verify.kat")}
    kem_algs = {r[0] for r in load_kat("kem_decaps.kat")}
    assert verify_algs == {a.value for a in cs.DsaAlg}
    assert kem_algs == {a.value for a in cs.KemAlg}


# -- live cross-checks against the stand-alone oracles -----------------------

def test_falcon_signatures_accepted_by_oracle():
    pair = cs.dsa_keygen(cs.DsaAlg.Falcon1024)
    for i in range(5):
        msg = random.randbytes(20 + i)
        sig = cs.dsa_sign(pair, msg)
        assert falcon_verify.verify(pair.public, msg, sig)
        assert not falcon_verify.verify(pair.public, msg + b"x", sig)


def test_mceliece_decaps_matches_oracle_encaps():
    pair = cs.kem_keygen(cs.KemAlg.McEliece348864)
    rng = random.Random(7)
    for _ in range(3):
        c, k = mceliece_encap.encapsulate(pair.public, mceliece_encap.random_error_vector(rng))
        assert cs.kem_decapsulate_raw(cs.KemAlg.McEliece348864, pair.secret, c) == k


# -- round trips ---------------------------------------------------------------

_SIGNERS = {alg: cs.dsa_keygen(alg) for alg in cs.DsaAlg}
_KEMS: dict = {}


def _kem_pair(alg):
    if alg not in _KEMS:
        _KEMS[alg] = cs.kem_keygen(alg)
    return _KEMS[alg]


@pytest.mark.parametrize("alg", list(cs.DsaAlg))
@settings(max_examples=100, deadline=None)
@given(msg=st.binary(max_size=512))
def test_sign_verify_roundtrip(alg, msg):
    pair = _SIGNERS[alg]
    sig = cs.dsa_sign(pair, msg)
    assert cs.dsa_verify(alg, pair.public, msg, sig)
    assert not cs.dsa_verify(alg, pair.public, msg + b"\x01", sig)


@pytest.mark.parametrize("alg", list(cs.KemAlg))
def test_kem_roundtrip(alg):
    # encapsulation draws its own randomness, so there is nothing to shrink
    pair = _kem_pair(alg)
    keys = set()
    for _ in range(100):
        ct, k = cs.kem_encapsulate(alg, pair.public)
        assert len(k) == cs.SYM_KEY_LEN
        assert len(ct.data) == cs.KEM_SIZES[alg].ciphertext
        assert cs.kem_decapsulate(alg, pair.secret, ct.data) == k
        keys.add(k)
    assert len(keys) == 100


@settings(max_examples=100, deadline=None)
@given(key=st.binary(min_size=32, max_size=32), pt=st.binary(max_size=300))
def test_sym_roundtrip(key, pt):
    blob = cs.sym_encrypt(key, pt)
    assert len(blob.ciphertext) % 16 == 0 and len(blob.ciphertext) > len(pt)
    assert cs.sym_decrypt(key, cs.EncBlob.from_bytes(blob.to_bytes())) == pt


@settings(max_examples=100, deadline=None)
@given(data=st.binary(max_size=1000))
def test_hash_length(data):
    assert len(cs.hash(data)) == cs.DIGEST_LEN


# -- error behaviour -----------------------------------------------------------

def test_wrong_key_gives_padding_error_or_garbage():
    pt = b"bitstream" * 10
    blob = cs.sym_encrypt(cs.sym_keygen(), pt)
    for _ in range(20):
        try:
            assert cs.sym_decrypt(cs.sym_keygen(), blob) != pt
        except PaddingError:
            pass


def test_bad_lengths_raise_decode_error():
    with pytest.raises(DecodeError):
        cs.sym_encrypt(b"short", b"x")
    with pytest.raises(DecodeError):
        cs.EncBlob.from_bytes(bytes(20))
    with pytest.raises(DecodeError):
        cs.dsa_verify(cs.DsaAlg.Dilithium5, bytes(10), b"m", bytes(10))
    with pytest.raises(DecodeError):
        cs.kem_decapsulate(cs.KemAlg.Kyber1024, bytes(10), bytes(10))
    with pytest.raises(DecodeError):
        cs.kem_encapsulate(cs.KemAlg.ECDH_P256, bytes(65))


def test_kyber_implicit_rejection():
    pair = _kem_pair(cs.KemAlg.Kyber1024)
    ct, k = cs.kem_encapsulate(cs.KemAlg.Kyber1024, pair.public)
    bad = bytearray(ct.data)
    bad[0] ^= 1
    assert cs.kem_decapsulate(cs.KemAlg.Kyber1024, pair.secret, bytes(bad)) != k


def test_profile_table():
    expect = {
        "NoPQ": ("ECDSA_P256", "ECDH_P256"),
        "PQ_I": ("Falcon1024", "Kyber1024"),
        "PQ_II": ("Falcon1024", "McEliece348864"),
        "PQ_III": ("Dilithium5", "Kyber1024"),
        "PQ_IV": ("Dilithium5", "McEliece348864"),
    }
    for pid, (dsa, kem) in expect.items():
        suite = cs.suite_from_profile(pid)
        assert (suite.dsa_alg.value, suite.kem_alg.value) == (dsa, kem)
        assert (suite.hash_alg, suite.sym_alg) == ("SHA3-512", "AES-256-CBC")
    assert cs.ProfileId.parse("pq-iii") is cs.ProfileId.PQ_III
    with pytest.raises(ValueError):
        cs.ProfileId.parse("PQ_V")


def test_seeded_entropy_is_reproducible():
    a, b = cs.SeededEntropy(5), cs.SeededEntropy(5)
    assert [a(16) for _ in range(3)] == [b(16) for _ in range(3)]
    assert cs.SeededEntropy(6)(16) != cs.SeededEntropy(5)(16)
    ka = cs.dsa_keygen(cs.DsaAlg.ECDSA_P256, cs.SeededEntropy(1))
    kb = cs.dsa_keygen(cs.DsaAlg.ECDSA_P256, cs.SeededEntropy(1))
    assert ka.public == kb.public
