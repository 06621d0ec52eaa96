"""Software stand-in for an FPGA edge node.

The device holds the AES kernel key baked in by the infrastructure provider,
exposes the software and hardware component manifests of its attestation
service, and "programs" an encrypted bitstream by decrypting and hashing it.
Reconfiguration latency is simulated with a sleep.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import crypto_suite as cs
from .errors import DoubleLoad, EmptyManifest, NoBitstream, ShellNotLoaded

# Shell configuration time reported for the Alveo U280 testbed.
REALISTIC_RECONFIG_DELAY = 3.8


class ComponentKind(str, Enum):
    Software = "Software"
    Hardware = "Hardware"


@dataclass
class ComponentManifest:
    kind: ComponentKind
    entries: dict[str, bytes] = field(default_factory=dict)

    def add(self, name: str, content: bytes) -> None:
        if name in self.entries:
            raise ValueError(f"duplicate component {name!r}")
        self.entries[name] = bytes(content)

    def canonical_bytes(self) -> bytes:
        out = bytearray()
        for name in sorted(self.entries):
            raw = name.encode("utf-8")
            content = self.entries[name]
            out += struct.pack(">I", len(raw)) + raw
            out += struct.pack(">I", len(content)) + content
        return bytes(out)

    def copy(self) -> "ComponentManifest":
        return ComponentManifest(self.kind, dict(self.entries))


def measure(manifest: ComponentManifest) -> bytes:
    """SHA3-512 over the name-sorted, length-prefixed manifest entries."""
    if not manifest.entries:
        raise EmptyManifest(f"{manifest.kind.value} manifest has no entries")
    return cs.hash(manifest.canonical_bytes())


@dataclass
class DeviceState:
    device_id: str
    k_fpga: bytes = field(repr=False)
    sw_manifest: ComponentManifest
    hw_manifest: ComponentManifest
    enc_bitstream: bytes = field(default=b"", repr=False)
    shell_loaded: bool = False
    programmed_digest: bytes | None = None
    reconfig_delay: float = 0.0
    # None: bitstream programming reuses reconfig_delay
    program_delay: float | None = None

    def unload_shell(self) -> None:
        """Return the fabric to its unconfigured state (power cycle)."""
        self.shell_loaded = False
        self.programmed_digest = None


def load_shell(device: DeviceState) -> None:
    if device.shell_loaded:
        raise DoubleLoad(f"shell already loaded on {device.device_id}")
    if device.reconfig_delay > 0:
        time.sleep(device.reconfig_delay)
    device.shell_loaded = True


def kernel_encrypt(device: DeviceState, report_bytes: bytes,
                   entropy_source: cs.EntropySource = cs.os_entropy) -> cs.EncBlob:
    if not device.shell_loaded:
        raise ShellNotLoaded("the AES kernel lives in the shell; load it first")
    return cs.sym_encrypt(device.k_fpga, report_bytes, entropy_source)


def measure_bitstream(device: DeviceState) -> bytes:
    if not device.enc_bitstream:
        raise NoBitstream(f"no encrypted bitstream provisioned on {device.device_id}")
    return cs.hash(device.enc_bitstream)


def program_bitstream(device: DeviceState, k_btstr: bytes) -> bytes:
    """Decrypt the provisioned bitstream and configure the fabric with it.

    Any failure (PaddingError, DecodeError) leaves ``programmed_digest``
    untouched.
    """
    if not device.shell_loaded:
        raise ShellNotLoaded("cannot program before the shell is loaded")
    if not device.enc_bitstream:
        raise NoBitstream(f"no encrypted bitstream provisioned on {device.device_id}")
    plaintext = cs.sym_decrypt(k_btstr, cs.EncBlob.from_bytes(device.enc_bitstream))
    delay = device.reconfig_delay if device.program_delay is None else device.program_delay
    if delay > 0:
        time.sleep(delay)
    digest = cs.hash(plaintext)
    device.programmed_digest = digest
    return digest


# ---------------------------------------------------------------------------
# provisioning file

def _manifest_from_paths(kind: ComponentKind, entries: dict[str, str], base: Path) -> ComponentManifest:
    manifest = ComponentManifest(kind)
    for name, rel in entries.items():
        manifest.add(name, (base / rel).read_bytes())
    return manifest


def device_from_document(doc: dict, base_dir: Path | str = ".") -> DeviceState:
    """Build a DeviceState from the ``device`` section of a provisioning file.

    Paths are resolved relative to ``base_dir`` (normally the file's folder).
    """
    base = Path(base_dir)
    k_fpga = bytes.fromhex(doc["k_fpga"])
    if len(k_fpga) != cs.SYM_KEY_LEN:
        raise ValueError("k_fpga must be 32 bytes of hex")
    return DeviceState(
        device_id=doc["device_id"],
        k_fpga=k_fpga,
        sw_manifest=_manifest_from_paths(ComponentKind.Software, doc["sw_manifest"], base),
        hw_manifest=_manifest_from_paths(ComponentKind.Hardware, doc["hw_manifest"], base),
        enc_bitstream=(base / doc["enc_bitstream"]).read_bytes(),
        reconfig_delay=float(doc.get("reconfig_delay", 0.0)),
        program_delay=doc.get("program_delay"),
    )


def load_device_file(path: Path | str) -> DeviceState:
    path = Path(path)
    doc = json.loads(path.read_text())
    return device_from_document(doc.get("device", doc), path.parent)
