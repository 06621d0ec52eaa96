from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from pqattest import crypto_suite as cs
from pqattest.attester.session import attester_start, attester_step
from pqattest.deployment import DEMO_HW, DEMO_SW
from pqattest.ledger.chain import EvidenceRecord
from pqattest.protocol.messages import Reason, ReportA3, Verdict
from pqattest.protocol.wire import MsgType, Transcript, decode_frame
from pqattest.provisioning import Provisioned, provision_device
from pqattest.verifier.appraisal import build_evidence
from pqattest.verifier.session import VerifierContext, verifier_step
from pqattest.verifier.store import NonceRegistry, ReferenceStore, VerifierKeys

KAT_DIR = Path(__file__).parent / "fixtures" / "kat"
ALL_PROFILES = list(cs.ProfileId)


def load_kat(name: str) -> list[list[str]]:
    rows = []
    for line in (KAT_DIR / name).read_text().splitlines():
        if line.strip():
            rows.append(line.split(","))
    return rows


@dataclass
class Bench:
    """A verifier context plus one provisioned device, no sockets."""

    vctx: VerifierContext
    prov: Provisioned

    @property
    def device(self):
        return self.prov.device


def make_bench(profile: cs.ProfileId = cs.ProfileId.NoPQ, device_id: str = "edge-0",
               entropy: cs.EntropySource = cs.os_entropy,
               keys: VerifierKeys | None = None, bitstream: bytes | None = None) -> Bench:
    keys = keys or VerifierKeys("verifier", None, entropy)
    vctx = VerifierContext(ReferenceStore(), NonceRegistry(), keys, entropy, clock=lambda: 1_700_000_000.0)
    prov = provision_device(profile, device_id, bitstream if bitstream is not None else os.urandom(2048),
                            DEMO_SW, DEMO_HW, keys, entropy)
    vctx.store.provision(prov.record)
    return Bench(vctx, prov)


@dataclass
class Run:
    attester: object
    verifier: object
    evidence: list = field(default_factory=list)
    transcript: Transcript = field(default_factory=Transcript)


def run_in_memory(bench: Bench, mutate=None, actx=None, max_steps: int = 50) -> Run:
    """Shuttle frames between the two state machines until both settle.

    ``mutate(direction, raw) -> raw`` may rewrite encoded frames in flight.
    EvidenceSubmit frames are collected instead of being delivered.
    """
    actx = actx or bench.prov.attester_context(bench.vctx.entropy_source)
    a, to_v = attester_start(actx)
    v = None
    run = Run(a, v)
    to_a: list = []
    for _ in range(max_steps):
        if not to_v and not to_a:
            break
        next_a = []
        for frame in to_v:
            raw = frame.encode()
            if mutate is not None:
                raw = mutate("a->v", raw)
            run.transcript.record("a->v", raw)
            v, out = verifier_step(bench.vctx, v, decode_frame(raw))
            for f in out:
                if f.msg_type is MsgType.EvidenceSubmit:
                    run.transcript.record("v->l", f.encode())
                    run.evidence.append(f)
                else:
                    next_a.append(f)
        to_v = []
        for frame in to_a:
            raw = frame.encode()
            if mutate is not None:
                raw = mutate("v->a", raw)
            run.transcript.record("v->a", raw)
            a, out = attester_step(actx, a, decode_frame(raw))
            to_v.extend(out)
        to_a = next_a
    run.attester, run.verifier = a, v
    return run


@pytest.fixture
def nopq_bench() -> Bench:
    return make_bench(cs.ProfileId.NoPQ)


def signed_evidence(keys: VerifierKeys, device_id: str = "edge-0",
                    accept: bool = True, alg: cs.DsaAlg = cs.DsaAlg.ECDSA_P256):
    """A fresh verifier-signed A3 record for ledger tests."""
    v = Verdict.Accept if accept else Verdict.Reject
    reason = Reason.OK if accept else Reason.ChecksumMismatch
    profile = next(p for p in cs.ProfileId if cs.suite_from_profile(p).dsa_alg is alg)
    report = ReportA3(os.urandom(32), device_id, os.urandom(16), v, v, profile,
                      1_700_000_000, reason, reason)
    return EvidenceRecord.from_envelope(build_evidence(report, keys, alg))


def register(ledger, keys: VerifierKeys, alg: cs.DsaAlg = cs.DsaAlg.ECDSA_P256):
    return ledger.register_verifier(keys.signer_id(alg), keys.public(alg), alg)


# -- acceptance report -----------------------------------------------------------

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {line}")
