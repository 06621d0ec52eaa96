"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The full-delay timing run takes roughly half an hour and is marked ``slow``;
it still runs under a plain ``pytest``.  Deselect it with ``-m "not slow"``.
"""
from __future__ import annotations

import contextlib
import io
import random
import time

import pytest

from pqattest import adversary, bench
from pqattest import crypto_suite as cs
from pqattest.cli import main as cli_main
from pqattest.deployment import Deployment
from pqattest.errors import DecodeError
from pqattest.ledger.chain import BLOCKS_FILE, HEAD_FILE, Ledger, verify_dir
from pqattest.protocol.messages import A1_LEN, A2_LEN, Verdict, decode_report
from pqattest.protocol.wire import decode_frame
from pqattest.verifier.store import VerifierKeys

from conftest import ACCEPTANCE, ALL_PROFILES, load_kat, register, signed_evidence

H = bytes.fromhex
PQ = [p for p in ALL_PROFILES if p is not cs.ProfileId.NoPQ]


@contextlib.contextmanager
def criterion(key: str, title: str):
    """Record the outcome of the enclosed checks under ``key``."""
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        ACCEPTANCE[key] = (False, f"{title} ({type(exc).__name__}: {str(exc)[:200]})")
        raise
    detail = f" [{'; '.join(notes)}]" if notes else ""
    ACCEPTANCE[key] = (True, title + detail)


# -- 1 -------------------------------------------------------------------------

def test_ac1_honest_sessions_all_profiles():
    with criterion("AC1", "honest session completes for every profile") as notes:
        for profile in ALL_PROFILES:
            t0 = time.perf_counter()
            with Deployment(block_interval=0.02) as dep:
                prov = dep.provision(profile)
                outcome, session = dep.attest(prov)
                assert outcome.completed, (profile, outcome.reason, outcome.detail)
                assert session.service_verdict is Verdict.Accept
                assert session.bitstream_verdict is Verdict.Accept
                assert prov.device.programmed_digest == prov.bitstream_digest
                assert outcome.programmed_digest == prov.bitstream_digest
                found = dep.ledger_client.query(session_id=outcome.session_id)
                assert len(found) == 1, (profile, len(found))
                assert len(dep.ledger.query()) == 1
            elapsed = time.perf_counter() - t0
            assert elapsed < 10, (profile, elapsed)
            notes.append(f"{profile.value} {elapsed:.2f}s")


# -- 2 -------------------------------------------------------------------------

def test_ac2_known_answers_and_roundtrips():
    with criterion("AC2", "KATs bit-exact and 100 round trips per algorithm") as notes:
        n = 0
        for _, msg, digest in load_kat("sha3_512.kat"):
            assert cs.hash(H(msg)) == H(digest)
            n += 1
        for _, key, iv, pt, ct in load_kat("aes256cbc.kat"):
            assert cs.sym_encrypt(H(key), H(pt), lambda k, iv=iv: H(iv)).ciphertext == H(ct)
            assert cs.sym_decrypt(H(key), cs.EncBlob(H(iv), H(ct))) == H(pt)
            n += 1
        for _, raw, key in load_kat("kdf.kat"):
            assert cs.derive_sym_key(H(raw)) == H(key)
            n += 1
        for alg, pk, msg, sig, ok in load_kat("dsa_verify.kat"):
            assert cs.dsa_verify(cs.DsaAlg(alg), H(pk), H(msg), H(sig)) is (ok == "01")
            n += 1
        for alg, sk, msg, sig in load_kat("dsa_sign.kat"):
            assert cs.dsa_sign(cs.SignKeyPair(cs.DsaAlg(alg), b"", H(sk)), H(msg)) == H(sig)
            n += 1
        for alg, sk, ct, shared in load_kat("kem_decaps.kat"):
            assert cs.kem_decapsulate_raw(cs.KemAlg(alg), H(sk), H(ct)) == H(shared)
            n += 1
        notes.append(f"{n} vectors")

        rng = random.Random(2)
        for alg in cs.DsaAlg:
            pair = cs.dsa_keygen(alg)
            for _ in range(100):
                msg = rng.randbytes(rng.randrange(300))
                sig = cs.dsa_sign(pair, msg)
                assert cs.dsa_verify(alg, pair.public, msg, sig)
                assert not cs.dsa_verify(alg, pair.public, msg + b"\x00", sig)
        for alg in cs.KemAlg:
            pair = cs.kem_keygen(alg)
            for _ in range(100):
                ct, k = cs.kem_encapsulate(alg, pair.public)
                assert cs.kem_decapsulate(alg, pair.secret, ct.data) == k
        for _ in range(100):
            key, pt = rng.randbytes(32), rng.randbytes(rng.randrange(300))
            assert cs.sym_decrypt(key, cs.sym_encrypt(key, pt)) == pt
        notes.append(f"{len(cs.DsaAlg) + len(cs.KemAlg) + 1} algorithms x 100")


# -- 3 -------------------------------------------------------------------------

def test_ac3_adversary_matrix():
    with criterion("AC3", "adversary scenarios rejected with the expected reason") as notes:
        results = adversary.run_all(ALL_PROFILES, repetitions=20, seed=3)
        assert len(results) == len(adversary.SCENARIOS) * len(ALL_PROFILES) * 20
        failed = [r.to_json() for r in results if not r.passed]
        false_accepts = sum(r.false_accept for r in results)
        assert false_accepts == 0
        assert not failed, failed[:3]
        notes.append(f"{len(results)} runs, 0 false accepts")


# -- 4 -------------------------------------------------------------------------

def _cli(*argv) -> int:
    with contextlib.redirect_stdout(io.StringIO()):
        return cli_main(list(argv))


def test_ac4_ledger_tamper_evidence(tmp_path):
    with criterion("AC4", "ledger verify catches every bit flip; append-only across restarts") as notes:
        keys = VerifierKeys("verifier")
        d = tmp_path / "ledger"
        with Ledger(d, 0.01) as led:
            register(led, keys)
            for i in range(6):
                led.append(signed_evidence(keys, f"dev-{i % 2}", accept=i % 3 != 0))
            first_hashes = [b.block_hash for b in led.blocks]
        before = (d / BLOCKS_FILE).read_bytes()
        with Ledger(d, 0.01) as led:
            for _ in range(3):
                led.append(signed_evidence(keys, "dev-late"))
            assert [b.block_hash for b in led.blocks[:len(first_hashes)]] == first_hashes
        after = (d / BLOCKS_FILE).read_bytes()
        assert after.startswith(before) and len(after) > len(before)
        assert _cli("ledger", "verify", "--state-dir", str(d)) == 0

        pristine = {name: (d / name).read_bytes() for name in (BLOCKS_FILE, HEAD_FILE)}
        sizes = {name: len(data) * 8 for name, data in pristine.items()}
        total_bits = sum(sizes.values())
        rng = random.Random(4)
        for _ in range(1000):
            bit = rng.randrange(total_bits)
            name = BLOCKS_FILE if bit < sizes[BLOCKS_FILE] else HEAD_FILE
            bit = bit if name == BLOCKS_FILE else bit - sizes[BLOCKS_FILE]
            data = bytearray(pristine[name])
            data[bit // 8] ^= 1 << (bit % 8)
            (d / name).write_bytes(bytes(data))
            assert _cli("ledger", "verify", "--state-dir", str(d)) == 1, (name, bit)
            (d / name).write_bytes(pristine[name])
        assert len(verify_dir(d)) == len(first_hashes) + 3
        notes.append(f"1000/1000 flips over {total_bits} bits detected")


# -- 5 -------------------------------------------------------------------------

def _iv_ordering(summary: bench.Summary) -> None:
    iv = {p: summary.mean(p, "IV") for p in PQ}
    lo = max(iv[cs.ProfileId.PQ_I], iv[cs.ProfileId.PQ_III])
    hi = min(iv[cs.ProfileId.PQ_II], iv[cs.ProfileId.PQ_IV])
    assert lo < hi, {p.value: round(v) for p, v in iv.items()}


def test_ac5b_phase_iv_ordering_fast():
    with criterion("AC5b", "Phase IV mean: Kyber profiles below McEliece profiles (delay 0)") as notes:
        summary = bench.summarize(bench.run_bench(ALL_PROFILES, iterations=100, reconfig_delay=0.0))
        _iv_ordering(summary)
        notes.append(", ".join(f"{p.value} {summary.mean(p, 'IV') / 1000:.1f}ms" for p in PQ))


FULL_DELAY = 3.8


@pytest.fixture(scope="module")
def full_bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench") / "full.csv"
    records = bench.run_bench(ALL_PROFILES, iterations=100, reconfig_delay=FULL_DELAY,
                              output_path=out)
    return bench.summarize(records)


@pytest.mark.slow
def test_ac5a_reconfiguration_dominates(full_bench):
    with criterion("AC5a", f"Phase III mean exceeds the other phases combined (delay {FULL_DELAY}s)") as notes:
        for p in ALL_PROFILES:
            three = full_bench.mean(p, "III")
            rest = sum(full_bench.mean(p, ph) for ph in bench.PHASES if ph != "III")
            assert three > rest, (p.value, three, rest)
            assert three >= FULL_DELAY * 1e6
        _iv_ordering(full_bench)
        notes.append(", ".join(f"{p.value} III {full_bench.mean(p, 'III') / 1e6:.3f}s" for p in ALL_PROFILES))


@pytest.mark.slow
def test_ac5c_pq_iii_overhead(full_bench):
    with criterion("AC5c", "PQ_III total-time overhead vs NoPQ below 10%") as notes:
        overhead = full_bench.overhead[cs.ProfileId.PQ_III]
        notes.append(f"measured {100 * overhead:.2f}%")
        notes.append(", ".join(f"{p.value} {100 * full_bench.overhead[p]:.2f}%" for p in PQ))
        assert overhead < 0.10


# -- 6 -------------------------------------------------------------------------

class _SecretTap:
    """Records every symmetric key, KEM secret and signing secret produced."""

    def __init__(self, monkeypatch):
        self.secrets: list[bytes] = []
        for name in ("kem_keygen", "dsa_keygen"):
            real = getattr(cs, name)
            monkeypatch.setattr(cs, name, self._pair(real))
        real_enc, real_dec = cs.kem_encapsulate_raw, cs.kem_decapsulate_raw

        def enc(*a, **kw):
            ct, raw = real_enc(*a, **kw)
            self.secrets += [raw, cs.derive_sym_key(raw)]
            return ct, raw

        def dec(*a, **kw):
            raw = real_dec(*a, **kw)
            self.secrets += [raw, cs.derive_sym_key(raw)]
            return raw
        monkeypatch.setattr(cs, "kem_encapsulate_raw", enc)
        monkeypatch.setattr(cs, "kem_decapsulate_raw", dec)

    def _pair(self, real):
        def wrapped(*a, **kw):
            pair = real(*a, **kw)
            self.secrets.append(pair.secret)
            return pair
        return wrapped


def test_ac6_no_secrets_on_the_wire(monkeypatch):
    with criterion("AC6", "50 randomized sessions leak no key material") as notes:
        tap = _SecretTap(monkeypatch)
        rng = random.Random(6)
        scanned = 0
        with Deployment(block_interval=0.01) as dep:
            for i in range(50):
                profile = rng.choice(ALL_PROFILES)
                prov = dep.provision(profile, device_id=f"dev-{i}",
                                     bitstream=rng.randbytes(rng.randrange(64, 4096)))
                outcome, _ = dep.attest(prov)
                assert outcome.completed
                wire = b"".join(raw for _, raw in dep.verifier.transcripts[outcome.session_id].entries)
                assert any(d == "v->l" for d, _ in dep.verifier.transcripts[outcome.session_id].entries)
                secrets = [prov.record.k_fpga, prov.record.k_btstr, prov.identity.sign_keypair.secret]
                secrets += [dep.keys.keypair(a).secret for a in cs.DsaAlg]
                secrets += tap.secrets
                for s in secrets:
                    assert len(s) >= 16
                    assert s not in wire and s[:16] not in wire
                scanned += len(secrets)
            ledger_bytes = (dep.workdir / "ledger" / BLOCKS_FILE).read_bytes()
            for s in tap.secrets + [dep.keys.keypair(a).secret for a in cs.DsaAlg]:
                assert s not in ledger_bytes
        notes.append(f"{scanned} secret checks, KEM secrets captured: {len(tap.secrets)}")


# -- 7 -------------------------------------------------------------------------

def _valid_frames() -> list[bytes]:
    with Deployment(block_interval=0.01) as dep:
        prov = dep.provision(cs.ProfileId.NoPQ)
        outcome, _ = dep.attest(prov)
        return [raw for _, raw in dep.verifier.transcripts[outcome.session_id].entries]


def test_ac7_decoders_only_raise_decode_error():
    with criterion("AC7", "10^5 random inputs per decoder raise only DecodeError") as notes:
        rng = random.Random(7)
        seeds = _valid_frames()
        report_sizes = {"A1": A1_LEN, "A2": A2_LEN, "A3": None}
        counts = {"frame": 0, "report": 0}

        def mutate(base: bytes) -> bytes:
            data = bytearray(base)
            for _ in range(rng.randrange(1, 6)):
                op = rng.randrange(3)
                if op == 0 and data:
                    data[rng.randrange(len(data))] = rng.randrange(256)
                elif op == 1:
                    data[rng.randrange(len(data) + 1):] = b""
                else:
                    pos = rng.randrange(len(data) + 1)
                    data[pos:pos] = rng.randbytes(rng.randrange(1, 8))
            return bytes(data)

        for i in range(100_000):
            mode = i % 3
            if mode == 0:
                data = rng.randbytes(rng.randrange(0, 300))
            elif mode == 1:
                body = bytes([1, rng.randrange(1, 20)]) + rng.randbytes(rng.randrange(0, 200))
                data = len(body).to_bytes(4, "big") + body
            else:
                data = mutate(rng.choice(seeds))
            try:
                decode_frame(data)
            except DecodeError:
                counts["frame"] += 1

            kind = rng.choice(list(report_sizes))
            size = report_sizes[kind]
            if size is not None and rng.random() < 0.3:
                blob = rng.randbytes(size)
            elif kind == "A3" and rng.random() < 0.5:
                blob = mutate(_a3_sample(rng))
            else:
                blob = rng.randbytes(rng.randrange(0, 400))
            try:
                decode_report(kind, blob)
            except DecodeError:
                counts["report"] += 1
        notes.append(f"rejected {counts['frame']} frames, {counts['report']} reports; no other exception")


_A3 = []


def _a3_sample(rng: random.Random) -> bytes:
    if not _A3:
        keys = VerifierKeys("v")
        for i in range(8):
            _A3.append(signed_evidence(keys, f"d{i}", accept=bool(i % 2)).a3.to_bytes())
    return rng.choice(_A3)
