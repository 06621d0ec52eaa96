"""Hash-chained evidence ledger.

On-disk layout (``docs/ledger-format.md`` has the byte tables):

    blocks.dat = b"PQALEDG1" | block*
    block      = body_len(u32 BE) | body
    body       = index(u64) | prev_hash(64) | timestamp_us(u64) | n_records(u32)
                 | record* | block_hash(64)
    record     = kind(u8) | content_len(u32) | content
    head.dat   = b"PQAHEAD1" | block_count(u64) | tip_hash(64)

``block_hash`` is SHA3-512 over every body byte before it.  The head file
pins the chain length so dropping trailing blocks is caught too.
"""

from __future__ import annotations

import hmac
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable

from .. import crypto_suite as cs
from ..errors import (
    DecodeError,
    DuplicateSession,
    DuplicateSigner,
    LedgerError,
    RecordSignatureInvalid,
    TamperDetected,
    UnknownSigner,
)
from ..protocol.messages import PayloadType, ReportA3, SignedEnvelope, Verdict, envelope_valid

log = logging.getLogger(__name__)

MAGIC = b"PQALEDG1"
HEAD_MAGIC = b"PQAHEAD1"
BLOCKS_FILE = "blocks.dat"
HEAD_FILE = "head.dat"
ZERO_HASH = bytes(cs.DIGEST_LEN)
DEFAULT_BLOCK_INTERVAL = 0.05

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_BLOCK_HEAD = struct.Struct(">Q64sQI")
_HEAD = struct.Struct(">8sQ64s")


class RecordKind(IntEnum):
    Evidence = 1
    Signer = 2


@dataclass(frozen=True)
class EvidenceRecord:
    report: bytes
    signature: bytes = field(repr=False)
    signer_id: str

    @classmethod
    def from_envelope(cls, env: SignedEnvelope) -> "EvidenceRecord":
        if env.payload_type is not PayloadType.A3:
            raise DecodeError(f"evidence must carry an A3 report, not {env.payload_type.name}")
        return cls(env.payload, env.signature, env.signer_id)

    def envelope(self) -> SignedEnvelope:
        return SignedEnvelope(PayloadType.A3, self.report, self.signature, self.signer_id)

    @property
    def a3(self) -> ReportA3:
        return ReportA3.from_bytes(self.report)

    def content(self) -> bytes:
        sid = self.signer_id.encode("utf-8")
        return (_U16.pack(len(sid)) + sid + _U32.pack(len(self.report)) + self.report
                + _U32.pack(len(self.signature)) + self.signature)


@dataclass(frozen=True)
class SignerRecord:
    signer_id: str
    alg: cs.DsaAlg
    public: bytes

    def content(self) -> bytes:
        sid = self.signer_id.encode("utf-8")
        return (_U16.pack(len(sid)) + sid + bytes([self.alg.code])
                + _U32.pack(len(self.public)) + self.public)


Record = EvidenceRecord | SignerRecord


@dataclass(frozen=True)
class Receipt:
    block_index: int
    record_index: int


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"{self.what} truncated", expected_len=self.pos + n,
                              got_len=len(self.data))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return bytes(chunk)

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def encode_record(rec: Record) -> bytes:
    kind = RecordKind.Evidence if isinstance(rec, EvidenceRecord) else RecordKind.Signer
    content = rec.content()
    return bytes([kind]) + _U32.pack(len(content)) + content


def decode_record_content(kind: int, content: bytes) -> Record:
    r = _Reader(content, "record")
    try:
        signer_id = r.take(r.u16()).decode("utf-8")
    except UnicodeDecodeError:
        raise DecodeError("signer id is not UTF-8") from None
    if kind == RecordKind.Evidence:
        report = r.take(r.u32())
        sig = r.take(r.u32())
        r.done()
        return EvidenceRecord(report, sig, signer_id)
    if kind == RecordKind.Signer:
        alg = cs.DsaAlg.from_code(r.u8())
        public = r.take(r.u32())
        r.done()
        return SignerRecord(signer_id, alg, public)
    raise DecodeError(f"unknown record kind {kind}")


@dataclass(frozen=True)
class EvidenceBlock:
    index: int
    prev_hash: bytes
    timestamp_us: int
    records: tuple[Record, ...]
    block_hash: bytes

    @staticmethod
    def hashed_bytes(index: int, prev_hash: bytes, timestamp_us: int,
                     records: Iterable[Record]) -> bytes:
        records = list(records)
        return (_BLOCK_HEAD.pack(index, prev_hash, timestamp_us, len(records))
                + b"".join(encode_record(r) for r in records))

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, timestamp_us: int,
             records: Iterable[Record]) -> "EvidenceBlock":
        records = tuple(records)
        digest = cs.hash(cls.hashed_bytes(index, prev_hash, timestamp_us, records))
        return cls(index, prev_hash, timestamp_us, records, digest)

    def body(self) -> bytes:
        return self.hashed_bytes(self.index, self.prev_hash, self.timestamp_us,
                                 self.records) + self.block_hash

    def to_bytes(self) -> bytes:
        body = self.body()
        return _U32.pack(len(body)) + body


def decode_block_body(body: bytes) -> tuple[EvidenceBlock, bytes]:
    """Parse a block body; also returns the recomputed hash for checking."""
    r = _Reader(body, "block")
    index, prev_hash, ts, count = _BLOCK_HEAD.unpack(r.take(_BLOCK_HEAD.size))
    records = []
    for _ in range(count):
        kind = r.u8()
        records.append(decode_record_content(kind, r.take(r.u32())))
    hashed_len = r.pos
    block_hash = r.take(cs.DIGEST_LEN)
    r.done()
    return EvidenceBlock(index, prev_hash, ts, tuple(records), block_hash), cs.hash(body[:hashed_len])


# ---------------------------------------------------------------------------
# verification

class _ChainState:
    """Signer table and session index built while walking the chain."""

    def __init__(self) -> None:
        self.signers: dict[str, SignerRecord] = {}
        self.sessions: set[tuple[str, bytes]] = set()

    def check_signer(self, rec: SignerRecord) -> None:
        known = self.signers.get(rec.signer_id)
        if known is not None and known != rec:
            raise DuplicateSigner(f"{rec.signer_id} already registered with another key")
        if len(rec.public) != cs.DSA_SIZES[rec.alg].public:
            raise DecodeError(f"{rec.alg.value} public key has wrong length")

    def check_evidence(self, rec: EvidenceRecord) -> ReportA3:
        signer = self.signers.get(rec.signer_id)
        if signer is None:
            raise UnknownSigner(rec.signer_id)
        if not envelope_valid(rec.envelope(), signer.alg, signer.public):
            raise RecordSignatureInvalid(f"S3 from {rec.signer_id} does not verify")
        report = rec.a3
        if (report.device_id, report.session_id) in self.sessions:
            raise DuplicateSession(f"session {report.session_id.hex()} already recorded")
        return report

    def apply(self, rec: Record) -> None:
        if isinstance(rec, SignerRecord):
            self.check_signer(rec)
            self.signers[rec.signer_id] = rec
        else:
            report = self.check_evidence(rec)
            self.sessions.add((report.device_id, report.session_id))


def parse_blocks_file(data: bytes) -> list[EvidenceBlock]:
    """Decode and fully verify a blocks file; TamperDetected on any defect."""
    if data[:len(MAGIC)] != MAGIC:
        raise TamperDetected(0, "bad file magic")
    blocks: list[EvidenceBlock] = []
    state = _ChainState()
    pos = len(MAGIC)
    prev = ZERO_HASH
    while pos < len(data):
        index = len(blocks)
        if pos + 4 > len(data):
            raise TamperDetected(index, "truncated length prefix")
        (body_len,) = _U32.unpack_from(data, pos)
        body = data[pos + 4:pos + 4 + body_len]
        if len(body) != body_len:
            raise TamperDetected(index, "truncated block")
        pos += 4 + body_len
        try:
            block, digest = decode_block_body(body)
        except (DecodeError, ValueError) as exc:
            raise TamperDetected(index, f"undecodable block: {exc}") from None
        if block.index != index:
            raise TamperDetected(index, f"block claims index {block.index}")
        if not hmac.compare_digest(block.prev_hash, prev):
            raise TamperDetected(index, "prev_hash does not link to previous block")
        if not hmac.compare_digest(block.block_hash, digest):
            raise TamperDetected(index, "block_hash mismatch")
        for rec in block.records:
            try:
                state.apply(rec)
            except (LedgerError, DecodeError, ValueError) as exc:
                raise TamperDetected(index, f"invalid record: {exc}") from None
        blocks.append(block)
        prev = block.block_hash
    return blocks


def encode_head(count: int, tip: bytes) -> bytes:
    return _HEAD.pack(HEAD_MAGIC, count, tip)


def check_head(head: bytes, blocks: list[EvidenceBlock]) -> None:
    tip = blocks[-1].block_hash if blocks else ZERO_HASH
    if len(head) != _HEAD.size:
        raise TamperDetected(len(blocks), "head file has wrong size")
    magic, count, head_tip = _HEAD.unpack(head)
    if magic != HEAD_MAGIC:
        raise TamperDetected(len(blocks), "bad head magic")
    if count != len(blocks):
        raise TamperDetected(min(count, len(blocks)),
                             f"head records {count} blocks, file holds {len(blocks)}")
    if not hmac.compare_digest(head_tip, tip):
        raise TamperDetected(max(len(blocks) - 1, 0), "tip hash differs from head file")


def verify_dir(state_dir: Path | str) -> list[EvidenceBlock]:
    """Verify persisted ledger state without starting a ledger."""
    state_dir = Path(state_dir)
    blocks_path = state_dir / BLOCKS_FILE
    head_path = state_dir / HEAD_FILE
    if not blocks_path.exists() or not head_path.exists():
        raise TamperDetected(0, f"ledger files missing in {state_dir}")
    blocks = parse_blocks_file(blocks_path.read_bytes())
    check_head(head_path.read_bytes(), blocks)
    return blocks


# ---------------------------------------------------------------------------
# live ledger

def _matches(report: ReportA3, device_id, session_id, verdict) -> bool:
    if device_id is not None and report.device_id != device_id:
        return False
    if session_id is not None and report.session_id != session_id:
        return False
    if verdict is not None:
        got = Verdict.Accept if report.accepted else Verdict.Reject
        if got is not verdict:
            return False
    return True


def query_blocks(blocks: Iterable[EvidenceBlock], device_id: str | None = None,
                 session_id: bytes | None = None, verdict: Verdict | None = None,
                 block_from: int | None = None,
                 block_to: int | None = None) -> list[tuple[EvidenceRecord, Receipt]]:
    """Evidence records in chain order; ``block_to`` is inclusive."""
    out = []
    for block in blocks:
        if block_from is not None and block.index < block_from:
            continue
        if block_to is not None and block.index > block_to:
            break
        for i, rec in enumerate(block.records):
            if isinstance(rec, EvidenceRecord) and _matches(rec.a3, device_id, session_id, verdict):
                out.append((rec, Receipt(block.index, i)))
    return out


class _Pending:
    __slots__ = ("record", "event", "receipt")

    def __init__(self, record: Record):
        self.record = record
        self.event = threading.Event()
        self.receipt: Receipt | None = None


class Ledger:
    """Single-node append-only ledger with interval-based block sealing.

    ``append`` and ``register_verifier`` block until their record is sealed
    and return its receipt.  One background thread builds every block.
    """

    def __init__(self, state_dir: Path | str | None = None,
                 block_interval: float = DEFAULT_BLOCK_INTERVAL,
                 clock: Callable[[], float] = time.time):
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.block_interval = block_interval
        self._clock = clock
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._blocks: list[EvidenceBlock] = []
        self._state = _ChainState()
        self._pending: list[_Pending] = []
        self._pending_sessions: set[tuple[str, bytes]] = set()
        self._pending_signers: dict[str, SignerRecord] = {}
        self._stopped = False
        if self.state_dir is not None:
            self._open_files()
        self._sealer = threading.Thread(target=self._seal_loop, name="ledger-sealer", daemon=True)
        self._sealer.start()

    # -- persistence --------------------------------------------------------

    def _open_files(self) -> None:
        self.state_dir.mkdir(parents=True, exist_ok=True)
        blocks_path = self.state_dir / BLOCKS_FILE
        if blocks_path.exists():
            self._blocks = verify_dir(self.state_dir)
            for block in self._blocks:
                for rec in block.records:
                    self._state.apply(rec)
            log.info("ledger loaded %d blocks from %s", len(self._blocks), self.state_dir)
        else:
            with open(blocks_path, "wb") as fh:
                fh.write(MAGIC)
                fh.flush()
                os.fsync(fh.fileno())
            self._write_head()

    def _write_head(self) -> None:
        tip = self._blocks[-1].block_hash if self._blocks else ZERO_HASH
        path = self.state_dir / HEAD_FILE
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(encode_head(len(self._blocks), tip))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _persist(self, block: EvidenceBlock) -> None:
        if self.state_dir is None:
            return
        with open(self.state_dir / BLOCKS_FILE, "ab") as fh:
            fh.write(block.to_bytes())
            fh.flush()
            os.fsync(fh.fileno())

    # -- sealing ------------------------------------------------------------

    def _seal_loop(self) -> None:
        while True:
            with self._lock:
                if self._stopped:
                    return
                self._wake.wait(self.block_interval)
                if self._stopped and not self._pending:
                    return
                batch, self._pending = self._pending, []
                if batch:
                    self._seal(batch)

    def _seal(self, batch: list[_Pending]) -> None:
        # called with the lock held; appends are briefly stalled while sealing
        index = len(self._blocks)
        prev = self._blocks[-1].block_hash if self._blocks else ZERO_HASH
        block = EvidenceBlock.seal(index, prev, int(self._clock() * 1_000_000),
                                   [p.record for p in batch])
        try:
            self._persist(block)
        except OSError:
            log.exception("failed to persist block %d", index)
            for p in batch:
                p.event.set()
            self._pending_sessions.clear()
            self._pending_signers.clear()
            return
        self._blocks.append(block)
        for rec in block.records:
            self._state.apply(rec)
        if self.state_dir is not None:
            self._write_head()
        for i, p in enumerate(batch):
            p.receipt = Receipt(index, i)
            p.event.set()
        self._pending_sessions.clear()
        self._pending_signers.clear()

    def _submit(self, pending: _Pending, timeout: float | None) -> Receipt:
        if not pending.event.wait(timeout):
            raise LedgerError("record not sealed in time")
        if pending.receipt is None:
            raise LedgerError("block could not be persisted")
        return pending.receipt

    # -- public API ---------------------------------------------------------

    def register_verifier(self, signer_id: str, public: bytes, alg: cs.DsaAlg,
                          timeout: float | None = 10.0) -> Receipt | None:
        """Register a signer key.  Re-registering the identical key is a no-op
        (returns None); a different key under a used id is DuplicateSigner."""
        rec = SignerRecord(signer_id, cs.DsaAlg(alg), bytes(public))
        with self._lock:
            self._check_open()
            known = self._state.signers.get(signer_id) or self._pending_signers.get(signer_id)
            if known is not None:
                if known == rec:
                    return None
                raise DuplicateSigner(f"{signer_id} already registered with another key")
            self._state.check_signer(rec)
            pending = _Pending(rec)
            self._pending.append(pending)
            self._pending_signers[signer_id] = rec
        return self._submit(pending, timeout)

    def append(self, record: EvidenceRecord, timeout: float | None = 10.0) -> Receipt:
        with self._lock:
            self._check_open()
            report = self._state.check_evidence(record)
            key = (report.device_id, report.session_id)
            if key in self._pending_sessions:
                raise DuplicateSession(f"session {report.session_id.hex()} already submitted")
            pending = _Pending(record)
            self._pending.append(pending)
            self._pending_sessions.add(key)
        return self._submit(pending, timeout)

    def _check_open(self) -> None:
        if self._stopped:
            raise LedgerError("ledger is closed")

    def close(self) -> None:
        with self._lock:
            self._stopped = True
            self._wake.notify_all()
        self._sealer.join(timeout=5)

    def __enter__(self) -> "Ledger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def blocks(self) -> tuple[EvidenceBlock, ...]:
        with self._lock:
            return tuple(self._blocks)

    def signer(self, signer_id: str) -> SignerRecord | None:
        return self._state.signers.get(signer_id)

    def verify_chain(self) -> list[EvidenceBlock]:
        """Recompute everything; TamperDetected on failure.

        A persisted ledger is checked from disk, an in-memory one from its
        own block list.
        """
        if self.state_dir is not None:
            with self._lock:
                return verify_dir(self.state_dir)
        data = MAGIC + b"".join(b.to_bytes() for b in self.blocks)
        return parse_blocks_file(data)

    def query(self, device_id: str | None = None, session_id: bytes | None = None,
              verdict: Verdict | None = None, block_from: int | None = None,
              block_to: int | None = None) -> list[tuple[EvidenceRecord, Receipt]]:
        return query_blocks(self.blocks, device_id, session_id, verdict, block_from, block_to)
