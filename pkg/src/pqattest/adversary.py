"""Attack scenarios run against a live, otherwise honest deployment.

Each run gets its own ledger + verifier, provisions one device, performs an
honest control session, then injects exactly one fault and records which
check fired.
"""

from __future__ import annotations

import logging
import os
import random
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from . import crypto_suite as cs
from .deployment import Deployment
from .errors import DuplicateSession, HarnessError, LedgerError
from .protocol.messages import Reason
from .protocol.wire import MsgType, Tag, Transcript, decode_frame, read_raw_frame

log = logging.getLogger(__name__)

# mutate(direction, raw_frame) -> raw_frame to forward; direction is "a->v" or "v->a"
Mutator = Callable[[str, bytes], bytes]


class WireProxy:
    """Frame-level TCP relay between attester and verifier."""

    def __init__(self, upstream: tuple[str, int], mutate: Mutator | None = None):
        self.upstream = upstream
        self.mutate = mutate
        proxy = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                proxy._relay(self.request)

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = Server(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def _pump(self, src: socket.socket, dst: socket.socket, direction: str) -> None:
        try:
            while True:
                raw = read_raw_frame(src)
                if raw is None:
                    break
                if self.mutate is not None:
                    raw = self.mutate(direction, raw)
                dst.sendall(raw)
        except (OSError, EOFError, ValueError):
            pass
        finally:
            for s in (src, dst):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def _relay(self, client: socket.socket) -> None:
        with socket.create_connection(self.upstream, timeout=30) as upstream:
            back = threading.Thread(target=self._pump, args=(upstream, client, "v->a"), daemon=True)
            back.start()
            self._pump(client, upstream, "a->v")
            back.join(timeout=30)

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def _replace_field(raw: bytes, tag: Tag, transform: Callable[[bytes], bytes]) -> bytes:
    frame = decode_frame(raw)
    frame.fields[tag] = transform(frame.fields[tag])
    return frame.encode()


def _flip_byte(data: bytes, index: int) -> bytes:
    buf = bytearray(data)
    buf[index] ^= 0xFF
    return bytes(buf)


def _on_message(direction: str, msg_type: MsgType, edit: Callable[[bytes], bytes]) -> Mutator:
    def mutate(d: str, raw: bytes) -> bytes:
        if d == direction and raw[5] == msg_type:
            return edit(raw)
        return raw
    return mutate


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    interposition: str
    expected: tuple[Reason, ...]


SCENARIOS: dict[str, Scenario] = {s.name: s for s in (
    Scenario("malicious-bitstream", "edge node holds an attacker-supplied encrypted bitstream",
             "attester", (Reason.ChecksumMismatch,)),
    Scenario("mitm-tamper-report", "one byte of A1 is flipped in flight",
             "wire", (Reason.SignatureInvalid,)),
    Scenario("replay-report", "the previous session's (A1, S1) is replayed",
             "wire", (Reason.StaleNonce, Reason.NonceMismatch)),
    Scenario("replay-evidence", "a recorded (A3, S3) is resubmitted to the ledger",
             "ledger", (Reason.DuplicateSession,)),
    Scenario("malicious-operator", "the operator swaps the attestation service binary",
             "attester", (Reason.ChecksumMismatch,)),
    Scenario("wrong-device-key", "the device kernel key differs from the provisioned K_FPGA",
             "attester", (Reason.DecryptFailed,)),
    Scenario("tamper-keyrelease", "one byte of the KEM ciphertext is flipped in flight",
             "wire", (Reason.SignatureInvalid, Reason.KeyUnwrapFailed)),
)}


@dataclass
class ScenarioResult:
    name: str
    profile: cs.ProfileId
    expected: tuple[Reason, ...]
    control_accepted: bool
    observed_verdict: str
    observed_reason: Reason
    programmed: bool
    detail: str = ""
    duration_s: float = 0.0
    transcript: list[str] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return (self.control_accepted and self.observed_verdict == "Reject"
                and self.observed_reason in self.expected and not self.programmed)

    @property
    def false_accept(self) -> bool:
        return self.observed_verdict == "Accept"

    def to_json(self, transcript: bool = False) -> dict:
        doc = {
            "scenario": self.name,
            "profile": self.profile.value,
            "expected": [r.name for r in self.expected],
            "control_accepted": self.control_accepted,
            "observed_verdict": self.observed_verdict,
            "observed_reason": self.observed_reason.name,
            "programmed": self.programmed,
            "passed": self.passed,
            "detail": self.detail,
            "duration_s": round(self.duration_s, 3),
        }
        if transcript:
            doc["transcript"] = self.transcript
        return doc


def _attack_session(dep: Deployment, prov, mutate: Mutator | None):
    transcript = Transcript()
    proxy = WireProxy(dep.verifier.address, mutate) if mutate is not None else None
    try:
        address = proxy.address if proxy is not None else None
        outcome, session = dep.attest(prov, transcript, address=address)
    finally:
        if proxy is not None:
            proxy.close()
    if session is not None and session.failure is not None:
        verdict, reason, detail = "Reject", session.failure, session.detail
    elif not outcome.completed:
        verdict, reason, detail = "Reject", outcome.reason, outcome.detail
    else:
        verdict, reason, detail = "Accept", Reason.OK, ""
    return verdict, reason, detail, transcript


def run_scenario(name: str, profile: cs.ProfileId | str = cs.ProfileId.PQ_III,
                 rng: random.Random | None = None) -> ScenarioResult:
    try:
        scenario = SCENARIOS[name]
    except KeyError:
        raise HarnessError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None
    profile = cs.ProfileId.parse(profile) if isinstance(profile, str) else profile
    rng = rng or random.Random()
    started = time.perf_counter()
    try:
        dep = Deployment(block_interval=0.01)
    except OSError as exc:
        raise HarnessError(f"deployment failed: {exc}") from exc
    try:
        prov = dep.provision(profile, device_id=f"edge-{rng.randrange(1 << 32):08x}")
        control_t = Transcript()
        control, control_session = dep.attest(prov, control_t)
        control_ok = (control.completed and control.programmed_digest == prov.bitstream_digest
                      and control_session is not None and control_session.accepted)
        if not control_ok:
            raise HarnessError(f"honest control run failed: {control.reason.name} {control.detail}")
        prov.device.unload_shell()

        mutate: Mutator | None = None
        if name == "malicious-bitstream":
            evil_key = cs.sym_keygen()
            prov.device.enc_bitstream = cs.sym_encrypt(evil_key, os.urandom(4096)).to_bytes()
        elif name == "malicious-operator":
            prov.device.sw_manifest.entries["attestation-service"] = b"attestation service v1.4.2+implant"
        elif name == "wrong-device-key":
            prov.device.k_fpga = cs.sym_keygen()
        elif name == "mitm-tamper-report":
            mutate = _on_message("a->v", MsgType.ResponseService, lambda raw: _replace_field(
                raw, Tag.PAYLOAD, lambda p: _flip_byte(p, rng.randrange(len(p)))))
        elif name == "replay-report":
            old = next(decode_frame(data) for d, data in control_t.entries
                       if d == "a->v" and data[5] == MsgType.ResponseService)

            def swap(raw: bytes) -> bytes:
                frame = decode_frame(raw)
                for tag in (Tag.PAYLOAD, Tag.SIGNATURE):
                    frame.fields[tag] = old.fields[tag]
                return frame.encode()
            mutate = _on_message("a->v", MsgType.ResponseService, swap)
        elif name == "tamper-keyrelease":
            def flip_ct(payload: bytes) -> bytes:
                ct_len = int.from_bytes(payload[1:5], "big")
                return _flip_byte(payload, 5 + rng.randrange(ct_len))
            mutate = _on_message("v->a", MsgType.KeyRelease,
                                 lambda raw: _replace_field(raw, Tag.PAYLOAD, flip_ct))

        if name == "replay-evidence":
            found = dep.ledger_client.query(session_id=control.session_id)
            if len(found) != 1:
                raise HarnessError("control evidence missing from the ledger")
            try:
                dep.ledger_client.submit(found[0][0].envelope(), control.session_id)
                verdict, reason, detail = "Accept", Reason.OK, "ledger accepted a replay"
            except DuplicateSession as exc:
                verdict, reason, detail = "Reject", Reason.DuplicateSession, str(exc)
            except LedgerError as exc:
                verdict, reason, detail = "Reject", Reason.InternalError, str(exc)
            transcript = control_t
        else:
            verdict, reason, detail, transcript = _attack_session(dep, prov, mutate)
        return ScenarioResult(name, profile, scenario.expected, control_ok, verdict, reason,
                              prov.device.programmed_digest is not None, detail,
                              time.perf_counter() - started, transcript.hex_lines())
    finally:
        dep.close()


def run_all(profiles: list[cs.ProfileId] | None = None, repetitions: int = 1,
            names: list[str] | None = None, seed: int | None = None,
            progress: Callable[[ScenarioResult], None] | None = None) -> list[ScenarioResult]:
    rng = random.Random(seed)
    results = []
    for profile in profiles or list(cs.ProfileId):
        for name in names or list(SCENARIOS):
            for _ in range(repetitions):
                result = run_scenario(name, profile, rng)
                if progress is not None:
                    progress(result)
                results.append(result)
    return results
