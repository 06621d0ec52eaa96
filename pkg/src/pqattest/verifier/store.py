"""Durable verifier state: reference values, issued nonces, own signing keys."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .. import crypto_suite as cs
from ..errors import DuplicateDevice, UnknownDevice
from ..protocol.messages import NONCE_LEN, Reason

STORE_FILE = "reference_store.json"
NONCE_FILE = "nonces.log"
KEYS_FILE = "verifier_keys.json"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass(frozen=True)
class ReferenceRecord:
    """Everything the verifier needs to attest one device (offline provisioning)."""

    device_id: str
    profile_id: cs.ProfileId
    c1_ref: bytes
    c2_ref: bytes
    c3_ref: bytes
    k_s_pub: bytes
    k_fpga: bytes = field(repr=False)
    k_btstr: bytes = field(repr=False)

    def __post_init__(self):
        for name in ("c1_ref", "c2_ref", "c3_ref"):
            if len(getattr(self, name)) != cs.DIGEST_LEN:
                raise ValueError(f"{name} must be a 64-byte SHA3-512 digest")
        for name in ("k_fpga", "k_btstr"):
            if len(getattr(self, name)) != cs.SYM_KEY_LEN:
                raise ValueError(f"{name} must be 32 bytes")
        expected = cs.DSA_SIZES[cs.suite_from_profile(self.profile_id).dsa_alg].public
        if len(self.k_s_pub) != expected:
            raise ValueError(f"k_s_pub must be {expected} bytes for {self.profile_id.value}")

    @property
    def suite(self) -> cs.SuiteProfile:
        return cs.suite_from_profile(self.profile_id)

    def to_json(self) -> dict:
        return {
            "device_id": self.device_id,
            "profile": self.profile_id.value,
            "c1_ref": self.c1_ref.hex(),
            "c2_ref": self.c2_ref.hex(),
            "c3_ref": self.c3_ref.hex(),
            "k_s_pub": self.k_s_pub.hex(),
            "k_fpga": self.k_fpga.hex(),
            "k_btstr": self.k_btstr.hex(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ReferenceRecord":
        expected = {"device_id", "profile", "c1_ref", "c2_ref", "c3_ref", "k_s_pub",
                    "k_fpga", "k_btstr"}
        if set(doc) != expected:
            raise ValueError(f"reference record keys must be exactly {sorted(expected)}")
        return cls(
            device_id=doc["device_id"],
            profile_id=cs.ProfileId.parse(doc["profile"]),
            c1_ref=bytes.fromhex(doc["c1_ref"]),
            c2_ref=bytes.fromhex(doc["c2_ref"]),
            c3_ref=bytes.fromhex(doc["c3_ref"]),
            k_s_pub=bytes.fromhex(doc["k_s_pub"]),
            k_fpga=bytes.fromhex(doc["k_fpga"]),
            k_btstr=bytes.fromhex(doc["k_btstr"]),
        )


class ReferenceStore:
    """Per-device reference values, persisted as one JSON document."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: dict[str, ReferenceRecord] = {}
        if self.path is not None and self.path.exists():
            doc = json.loads(self.path.read_text())
            for entry in doc.get("devices", []):
                rec = ReferenceRecord.from_json(entry)
                self._records[rec.device_id] = rec

    def provision(self, record: ReferenceRecord, force: bool = False) -> None:
        with self._lock:
            if record.device_id in self._records and not force:
                raise DuplicateDevice(f"{record.device_id} already provisioned (use force)")
            self._records[record.device_id] = record
            self._save()

    def get(self, device_id: str) -> ReferenceRecord:
        try:
            return self._records[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._records

    def device_ids(self) -> list[str]:
        return sorted(self._records)

    def _save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        doc = {"version": 1, "devices": [self._records[d].to_json() for d in sorted(self._records)]}
        _atomic_write(self.path, json.dumps(doc, indent=2) + "\n")


class NonceRegistry:
    """Issued and consumed nonces per device.

    Every nonce the verifier has ever handed out is remembered (append-only
    log when a path is given), so a report carrying an old nonce is told
    apart from one carrying garbage.
    """

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._issued: dict[str, set[bytes]] = {}
        self._consumed: dict[str, set[bytes]] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                kind, device_id, nonce_hex = line.split(" ", 2)
                table = self._issued if kind == "I" else self._consumed
                table.setdefault(device_id, set()).add(bytes.fromhex(nonce_hex))

    def _log(self, kind: str, device_id: str, nonce: bytes) -> None:
        if self.path is None:
            return
        with open(self.path, "a") as fh:
            fh.write(f"{kind} {device_id} {nonce.hex()}\n")

    def issue(self, device_id: str, entropy_source: cs.EntropySource) -> bytes:
        with self._lock:
            seen = self._issued.setdefault(device_id, set())
            while True:
                nonce = entropy_source(NONCE_LEN)
                if nonce not in seen:
                    break
            seen.add(nonce)
            self._log("I", device_id, nonce)
            return nonce

    def check_and_consume(self, device_id: str, nonce: bytes, expected: bytes) -> Reason:
        """Atomically accept ``nonce`` once if it is the one expected."""
        with self._lock:
            consumed = self._consumed.setdefault(device_id, set())
            if nonce == expected and nonce not in consumed:
                consumed.add(nonce)
                self._log("C", device_id, nonce)
                return Reason.OK
            if nonce in self._issued.get(device_id, ()):
                return Reason.StaleNonce
            return Reason.NonceMismatch

    def issued_count(self, device_id: str) -> int:
        return len(self._issued.get(device_id, ()))


class VerifierKeys:
    """The verifier's own DSA key pairs, one per algorithm, created on demand."""

    def __init__(self, verifier_id: str, path: Path | str | None = None,
                 entropy_source: cs.EntropySource = cs.os_entropy):
        self.verifier_id = verifier_id
        self.path = Path(path) if path is not None else None
        self._entropy = entropy_source
        self._lock = threading.Lock()
        self._pairs: dict[cs.DsaAlg, cs.SignKeyPair] = {}
        if self.path is not None and self.path.exists():
            doc = json.loads(self.path.read_text())
            for alg_name, entry in doc.items():
                alg = cs.DsaAlg(alg_name)
                self._pairs[alg] = cs.SignKeyPair(alg, bytes.fromhex(entry["public"]),
                                                  bytes.fromhex(entry["secret"]))

    def signer_id(self, alg: cs.DsaAlg) -> str:
        return f"{self.verifier_id}/{cs.DsaAlg(alg).value}"

    def keypair(self, alg: cs.DsaAlg) -> cs.SignKeyPair:
        alg = cs.DsaAlg(alg)
        with self._lock:
            pair = self._pairs.get(alg)
            if pair is None:
                pair = cs.dsa_keygen(alg, self._entropy)
                self._pairs[alg] = pair
                self._save()
            return pair

    def public(self, alg: cs.DsaAlg) -> bytes:
        return self.keypair(alg).public

    def all_public(self) -> dict[str, tuple[cs.DsaAlg, bytes]]:
        return {self.signer_id(alg): (alg, self.keypair(alg).public) for alg in cs.DsaAlg}

    def _save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        doc = {alg.value: {"public": p.public.hex(), "secret": p.secret.hex()}
               for alg, p in self._pairs.items()}
        _atomic_write(self.path, json.dumps(doc, indent=2) + "\n")
        os.chmod(self.path, 0o600)
