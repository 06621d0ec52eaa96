"""TCP front end for the ledger plus the matching client."""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading

from .. import crypto_suite as cs
from ..errors import (
    DecodeError,
    DuplicateSession,
    DuplicateSigner,
    LedgerError,
    LedgerUnavailable,
    RecordSignatureInvalid,
    UnknownSigner,
)
from ..protocol.messages import Reason, SignedEnvelope, Verdict
from ..protocol.wire import (
    Frame,
    MsgType,
    Tag,
    envelope_frame,
    envelope_from_frame,
    error_frame,
    frame_detail,
    frame_reason,
    read_frame,
    write_frame,
)
from .chain import EvidenceRecord, Ledger, Receipt, RecordKind, decode_record_content

log = logging.getLogger(__name__)

_ENTRY = struct.Struct(">QII")

_ERROR_REASONS = {
    DuplicateSession: Reason.DuplicateSession,
    DuplicateSigner: Reason.DuplicateSigner,
    UnknownSigner: Reason.UnknownSigner,
    RecordSignatureInvalid: Reason.SignatureInvalid,
}
_REASON_ERRORS = {v: k for k, v in _ERROR_REASONS.items()}


def encode_records(items: list[tuple[EvidenceRecord, Receipt]]) -> bytes:
    out = bytearray(struct.pack(">I", len(items)))
    for rec, receipt in items:
        content = rec.content()
        out += _ENTRY.pack(receipt.block_index, receipt.record_index, len(content)) + content
    return bytes(out)


def decode_records(data: bytes) -> list[tuple[EvidenceRecord, Receipt]]:
    if len(data) < 4:
        raise DecodeError("record list truncated", got_len=len(data))
    (count,) = struct.unpack_from(">I", data)
    pos, items = 4, []
    for _ in range(count):
        if pos + _ENTRY.size > len(data):
            raise DecodeError("record list truncated")
        block, index, n = _ENTRY.unpack_from(data, pos)
        pos += _ENTRY.size
        if pos + n > len(data):
            raise DecodeError("record content truncated")
        rec = decode_record_content(RecordKind.Evidence, data[pos:pos + n])
        pos += n
        items.append((rec, Receipt(block, index)))
    if pos != len(data):
        raise DecodeError("trailing bytes after record list")
    return items


def ack_frame(session_id: bytes, receipt: Receipt) -> Frame:
    return Frame(MsgType.EvidenceAck, {
        Tag.SESSION_ID: session_id,
        Tag.BLOCK_INDEX: receipt.block_index.to_bytes(8, "big"),
        Tag.RECORD_INDEX: receipt.record_index.to_bytes(4, "big"),
    })


def receipt_from_ack(frame: Frame) -> Receipt:
    return Receipt(int.from_bytes(frame.require(Tag.BLOCK_INDEX), "big"),
                   int.from_bytes(frame.require(Tag.RECORD_INDEX), "big"))


def handle_request(ledger: Ledger, frame: Frame) -> Frame:
    """Answer one ledger request frame."""
    try:
        if frame.msg_type is MsgType.EvidenceSubmit:
            record = EvidenceRecord.from_envelope(envelope_from_frame(frame))
            receipt = ledger.append(record)
            return ack_frame(record.a3.session_id, receipt)
        if frame.msg_type is MsgType.RegisterSigner:
            signer_id = frame.text(Tag.SIGNER_ID)
            alg = cs.DsaAlg.from_code(frame.require(Tag.DSA_ALG)[0])
            receipt = ledger.register_verifier(signer_id, frame.require(Tag.PUBLIC_KEY), alg)
            fields = {Tag.SIGNER_ID: signer_id.encode("utf-8")}
            if receipt is not None:
                fields[Tag.BLOCK_INDEX] = receipt.block_index.to_bytes(8, "big")
            return Frame(MsgType.RegisterAck, fields)
        if frame.msg_type is MsgType.LedgerQuery:
            verdict = frame.get(Tag.VERDICT_FILTER)
            block_from = frame.get(Tag.BLOCK_FROM)
            block_to = frame.get(Tag.BLOCK_TO)
            items = ledger.query(
                device_id=frame.text(Tag.DEVICE_ID) if Tag.DEVICE_ID in frame.fields else None,
                session_id=frame.get(Tag.SESSION_ID),
                verdict=Verdict.parse(verdict[0]) if verdict is not None else None,
                block_from=int.from_bytes(block_from, "big") if block_from is not None else None,
                block_to=int.from_bytes(block_to, "big") if block_to is not None else None,
            )
            return Frame(MsgType.LedgerQueryResult, {Tag.RECORDS: encode_records(items)})
    except DecodeError as exc:
        return error_frame(Reason.DecodeError, str(exc), frame.get(Tag.SESSION_ID))
    except LedgerError as exc:
        reason = _ERROR_REASONS.get(type(exc), Reason.InternalError)
        return error_frame(reason, str(exc), frame.get(Tag.SESSION_ID))
    return error_frame(Reason.OutOfOrderMessage, f"ledger does not serve {frame.msg_type.name}")


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        ledger: Ledger = self.server.ledger  # type: ignore[attr-defined]
        sock = self.request
        while True:
            try:
                frame = read_frame(sock)
            except DecodeError as exc:
                write_frame(sock, error_frame(Reason.DecodeError, str(exc)))
                return
            except (OSError, EOFError):
                return
            if frame is None:
                return
            try:
                write_frame(sock, handle_request(ledger, frame))
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class LedgerService:
    """Serve a Ledger over TCP on a background thread."""

    def __init__(self, ledger: Ledger, host: str = "127.0.0.1", port: int = 0):
        self.ledger = ledger
        self._server = _Server((host, port), _Handler)
        self._server.ledger = ledger  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> "LedgerService":
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,),
                                        name="ledger-service",
                                        daemon=True)
        self._thread.start()
        log.info("ledger listening on %s:%d", *self.address)
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


class LedgerClient:
    """One short TCP connection per request; errors come back as exceptions."""

    def __init__(self, address: tuple[str, int], timeout: float = 10.0):
        self.address = address
        self.timeout = timeout

    def _call(self, frame: Frame, expect: MsgType) -> Frame:
        try:
            with socket.create_connection(self.address, timeout=self.timeout) as sock:
                write_frame(sock, frame)
                reply = read_frame(sock)
        except (OSError, EOFError) as exc:
            raise LedgerUnavailable(f"ledger at {self.address[0]}:{self.address[1]}: {exc}") from None
        if reply is None:
            raise LedgerUnavailable("ledger closed the connection")
        if reply.msg_type is MsgType.Error:
            reason = frame_reason(reply)
            raise _REASON_ERRORS.get(reason, LedgerError)(frame_detail(reply) or reason.name)
        if reply.msg_type is not expect:
            raise DecodeError(f"expected {expect.name}, got {reply.msg_type.name}")
        return reply

    def submit(self, env: SignedEnvelope, session_id: bytes | None = None) -> Receipt:
        reply = self._call(envelope_frame(MsgType.EvidenceSubmit, env, session_id),
                           MsgType.EvidenceAck)
        return receipt_from_ack(reply)

    def register(self, signer_id: str, alg: cs.DsaAlg, public: bytes) -> None:
        self._call(Frame(MsgType.RegisterSigner, {
            Tag.SIGNER_ID: signer_id.encode("utf-8"),
            Tag.DSA_ALG: bytes([cs.DsaAlg(alg).code]),
            Tag.PUBLIC_KEY: public,
        }), MsgType.RegisterAck)

    def query(self, device_id: str | None = None, session_id: bytes | None = None,
              verdict: Verdict | None = None, block_from: int | None = None,
              block_to: int | None = None) -> list[tuple[EvidenceRecord, Receipt]]:
        fields: dict[Tag, bytes] = {}
        if device_id is not None:
            fields[Tag.DEVICE_ID] = device_id.encode("utf-8")
        if session_id is not None:
            fields[Tag.SESSION_ID] = session_id
        if verdict is not None:
            fields[Tag.VERDICT_FILTER] = bytes([verdict])
        if block_from is not None:
            fields[Tag.BLOCK_FROM] = block_from.to_bytes(8, "big")
        if block_to is not None:
            fields[Tag.BLOCK_TO] = block_to.to_bytes(8, "big")
        reply = self._call(Frame(MsgType.LedgerQuery, fields), MsgType.LedgerQueryResult)
        return decode_records(reply.require(Tag.RECORDS))
