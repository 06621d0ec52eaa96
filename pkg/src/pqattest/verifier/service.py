"""TCP verifier service: session table, phase timing and ledger publishing."""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, replace

from .. import crypto_suite as cs
from ..errors import DecodeError, DuplicateSession, LedgerError, LedgerUnavailable
from ..ledger.chain import Receipt
from ..ledger.service import LedgerClient
from ..protocol.messages import Reason, SignedEnvelope, Verdict
from ..protocol.wire import (
    Frame,
    MsgType,
    Transcript,
    decode_frame,
    envelope_from_frame,
    error_frame,
    read_raw_frame,
)
from .session import Phase, VerifierContext, VerifierSession, verifier_abort, verifier_step

log = logging.getLogger(__name__)

PHASES = ("II", "III", "IV", "V_push")


@dataclass(frozen=True)
class RetryPolicy:
    initial: float = 0.1
    maximum: float = 2.0
    factor: float = 2.0

    def delays(self):
        delay = self.initial
        while True:
            yield delay
            delay = min(delay * self.factor, self.maximum)


class EvidencePublisher:
    """Delivers signed A3 envelopes to the ledger from a background thread.

    Delivery is idempotent per session id: a session is queued at most
    once, and a DuplicateSession answer (our own earlier attempt landed but
    the ack was lost) is resolved by looking the receipt up.
    """

    def __init__(self, client: LedgerClient, ctx: VerifierContext,
                 retry: RetryPolicy = RetryPolicy(), on_receipt=None):
        self.client = client
        self.ctx = ctx
        self.retry = retry
        self.on_receipt = on_receipt
        self._queue: queue.Queue = queue.Queue()
        self._seen: set[bytes] = set()
        self._registered: set[str] = set()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="evidence-publisher", daemon=True)
        self._thread.start()

    def submit(self, session_id: bytes, env: SignedEnvelope) -> bool:
        with self._lock:
            if session_id in self._seen:
                return False
            self._seen.add(session_id)
        self._queue.put((session_id, env, time.perf_counter()))
        return True

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        self._queue.put(None)
        self._thread.join(timeout)

    def _signer_alg(self, signer_id: str) -> cs.DsaAlg | None:
        for alg in cs.DsaAlg:
            if self.ctx.keys.signer_id(alg) == signer_id:
                return alg
        return None

    def _deliver(self, session_id: bytes, env: SignedEnvelope) -> Receipt | None:
        if env.signer_id not in self._registered:
            alg = self._signer_alg(env.signer_id)
            self.client.register(env.signer_id, alg, self.ctx.keys.public(alg))
            self._registered.add(env.signer_id)
        try:
            return self.client.submit(env, session_id)
        except DuplicateSession:
            found = self.client.query(session_id=session_id)
            return found[0][1] if found else None

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            session_id, env, started = item
            receipt = None
            for delay in self.retry.delays():
                try:
                    receipt = self._deliver(session_id, env)
                    break
                except LedgerUnavailable as exc:
                    log.warning("ledger unavailable (%s); retrying in %.2fs", exc, delay)
                except LedgerError as exc:
                    log.error("ledger refused evidence for %s: %s", session_id.hex(), exc)
                    break
                if self._stop.wait(delay):
                    return
            elapsed_us = int((time.perf_counter() - started) * 1e6)
            if self.on_receipt is not None:
                self.on_receipt(session_id, receipt, elapsed_us)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        self.server.owner._handle(self.request)  # type: ignore[attr-defined]


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class VerifierService:
    """Accepts attester connections, one session per connection."""

    def __init__(self, ctx: VerifierContext, host: str = "127.0.0.1", port: int = 0,
                 ledger_address: tuple[str, int] | None = None,
                 retry: RetryPolicy = RetryPolicy(), session_timeout: float = 30.0,
                 linger: float = 2.0, record_transcripts: bool = False):
        self.ctx = ctx
        self.session_timeout = session_timeout
        self.linger = linger
        self.record_transcripts = record_transcripts
        self._cond = threading.Condition()
        self.sessions: dict[bytes, VerifierSession] = {}
        self.timings: dict[bytes, dict[str, int]] = {}
        self.transcripts: dict[bytes, Transcript] = {}
        self.receipts: dict[bytes, Receipt | None] = {}
        self.publisher = None
        if ledger_address is not None:
            self.publisher = EvidencePublisher(LedgerClient(ledger_address), ctx, retry,
                                               self._on_receipt)
        self._server = _Server((host, port), _Handler)
        self._server.owner = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "VerifierService":
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,),
                                        name="verifier-service", daemon=True)
        self._thread.start()
        log.info("verifier listening on %s:%d", *self.address)
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        if self.publisher is not None:
            self.publisher.stop()

    # -- session bookkeeping -------------------------------------------------

    def _store(self, s: VerifierSession) -> None:
        with self._cond:
            self.sessions[s.session_id] = s
            self._cond.notify_all()

    def _on_receipt(self, session_id: bytes, receipt: Receipt | None, elapsed_us: int) -> None:
        with self._cond:
            self.timings.setdefault(session_id, {})["V_push"] = elapsed_us
            self.receipts[session_id] = receipt
            self._cond.notify_all()

    def session(self, session_id: bytes) -> VerifierSession:
        with self._cond:
            s = self.sessions[session_id]
            receipt = self.receipts.get(session_id)
        if receipt is not None:
            s = replace(s, receipt=(receipt.block_index, receipt.record_index))
        return s

    def wait_session(self, session_id: bytes, timeout: float = 30.0,
                     published: bool = True) -> VerifierSession:
        """Block until the session reached Publish and, when a ledger is
        configured and ``published`` is set, until delivery was attempted."""
        deadline = time.monotonic() + timeout

        def ready() -> bool:
            s = self.sessions.get(session_id)
            if s is None or s.phase is not Phase.Publish:
                return False
            return not (published and self.publisher is not None
                        and session_id not in self.receipts)

        with self._cond:
            while not ready():
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError(f"session {session_id.hex()} not finished")
                self._cond.wait(left)
        return self.session(session_id)

    # -- connection handling -------------------------------------------------

    def _handle(self, sock: socket.socket) -> None:
        sock.settimeout(self.session_timeout)
        transcript = Transcript() if self.record_transcripts else None
        s: VerifierSession | None = None
        marks: dict[str, float] = {}
        timing: dict[str, int] = {}

        def emit(frames: list[Frame]) -> None:
            for frame in frames:
                data = frame.encode()
                if frame.msg_type is MsgType.EvidenceSubmit:
                    if transcript is not None:
                        transcript.record("v->l", data)
                    self._publish(s, envelope_from_frame(frame))
                    continue
                try:
                    sock.sendall(data)
                except OSError:
                    return
                if transcript is not None:
                    transcript.record("v->a", data)
                now = time.perf_counter()
                if frame.msg_type is MsgType.ChallengeService:
                    marks["II"] = now
                elif frame.msg_type is MsgType.ChallengeBitstream:
                    marks["III"] = now
                elif frame.msg_type is MsgType.Verdict and s is not None and s.accepted:
                    marks["IV"] = now

        while True:
            try:
                raw = read_raw_frame(sock)
                if raw is not None and transcript is not None:
                    transcript.record("a->v", raw)
                frame = None if raw is None else decode_frame(raw)
            except DecodeError as exc:
                if s is None:
                    emit([error_frame(Reason.DecodeError, str(exc))])
                    break
                s, out = verifier_abort(self.ctx, s, Reason.DecodeError, str(exc), notify=True)
                self._store(s)
                emit(out)
                break
            except (OSError, EOFError):
                frame = None
            if frame is None:
                if s is not None and s.phase is not Phase.Publish:
                    s, out = verifier_abort(self.ctx, s, Reason.ConnectionLost)
                    self._store(s)
                    emit(out)
                break
            before = s.phase if s is not None else None
            try:
                s, out = verifier_step(self.ctx, s, frame)
            except Exception:
                log.exception("verifier step failed")
                if s is not None:
                    s, out = verifier_abort(self.ctx, s, Reason.InternalError, notify=True)
                    self._store(s)
                    emit(out)
                break
            done = time.perf_counter()
            for phase, name in ((Phase.ServiceAttest, "II"), (Phase.BitstreamAttest, "III"),
                                (Phase.KeyRelease, "IV")):
                if before is phase and s.phase is not phase and name in marks:
                    timing[name] = int((done - marks[name]) * 1e6)
            if s is None:
                emit(out)
                break
            with self._cond:
                self.timings.setdefault(s.session_id, {}).update(timing)
            if transcript is not None:
                self.transcripts[s.session_id] = transcript
            self._store(s)
            emit(out)
            if s.phase is Phase.Publish:
                sock.settimeout(self.linger)

    def _publish(self, s: VerifierSession | None, env: SignedEnvelope) -> None:
        if s is not None and self.publisher is not None:
            self.publisher.submit(s.session_id, env)


def outcome_summary(s: VerifierSession) -> dict:
    """Secret-free view of a finished session."""
    def name(v: Verdict | None) -> str | None:
        return v.name if v is not None else None

    return {
        "session_id": s.session_id.hex(),
        "device_id": s.device_id,
        "profile": s.profile_id.value,
        "outcome": s.outcome.value if s.outcome else None,
        "service_verdict": name(s.service_verdict),
        "service_reason": s.service_reason.name,
        "bitstream_verdict": name(s.bitstream_verdict),
        "bitstream_reason": s.bitstream_reason.name,
        "failure": s.failure.name if s.failure else None,
        "receipt": list(s.receipt) if s.receipt else None,
    }
