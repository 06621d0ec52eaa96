"""Offline preparation: keys, encrypted bitstream, reference digests.

Plays the application and infrastructure providers.  The result is one
verifier reference record plus everything the edge node holds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import crypto_suite as cs
from . import device_model as dm
from .attester.agent import identity_to_json
from .attester.session import AttesterContext, AttesterIdentity
from .verifier.store import ReferenceRecord, VerifierKeys

DEVICE_FILE = "device.json"
RECORD_FILE = "record.json"
BITSTREAM_FILE = "enc_bitstream.bin"


@dataclass
class Provisioned:
    record: ReferenceRecord
    device: dm.DeviceState
    identity: AttesterIdentity
    verifier_signer_id: str
    verifier_public: bytes = field(repr=False)
    bitstream_digest: bytes = b""

    def attester_context(self, entropy_source: cs.EntropySource = cs.os_entropy) -> AttesterContext:
        return AttesterContext(self.identity, self.device, self.verifier_signer_id,
                               self.verifier_public, entropy_source)


def provision_device(profile: cs.ProfileId, device_id: str, bitstream: bytes,
                     sw: dict[str, bytes], hw: dict[str, bytes], keys: VerifierKeys,
                     entropy_source: cs.EntropySource = cs.os_entropy,
                     reconfig_delay: float = 0.0,
                     program_delay: float | None = None) -> Provisioned:
    suite = cs.suite_from_profile(profile)
    k_btstr = cs.sym_keygen(entropy_source)
    k_fpga = cs.sym_keygen(entropy_source)
    enc_bitstream = cs.sym_encrypt(k_btstr, bitstream, entropy_source).to_bytes()
    sw_manifest = dm.ComponentManifest(dm.ComponentKind.Software)
    hw_manifest = dm.ComponentManifest(dm.ComponentKind.Hardware)
    for name, content in sw.items():
        sw_manifest.add(name, content)
    for name, content in hw.items():
        hw_manifest.add(name, content)
    device = dm.DeviceState(device_id, k_fpga, sw_manifest, hw_manifest, enc_bitstream,
                            reconfig_delay=reconfig_delay, program_delay=program_delay)
    sign_pair = cs.dsa_keygen(suite.dsa_alg, entropy_source)
    record = ReferenceRecord(
        device_id=device_id,
        profile_id=profile,
        c1_ref=dm.measure(sw_manifest),
        c2_ref=dm.measure(hw_manifest),
        c3_ref=cs.hash(enc_bitstream),
        k_s_pub=sign_pair.public,
        k_fpga=k_fpga,
        k_btstr=k_btstr,
    )
    return Provisioned(record, device, AttesterIdentity(device_id, sign_pair, profile),
                       keys.signer_id(suite.dsa_alg), keys.public(suite.dsa_alg),
                       cs.hash(bitstream))


def write_provisioning(p: Provisioned, out_dir: Path | str,
                       sw_paths: dict[str, Path], hw_paths: dict[str, Path]) -> dict[str, Path]:
    """Write the attester device file, the encrypted bitstream and the
    verifier record.  Manifest entries are referenced by absolute path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / BITSTREAM_FILE).write_bytes(p.device.enc_bitstream)
    device_doc = {
        "device": {
            "device_id": p.device.device_id,
            "k_fpga": p.device.k_fpga.hex(),
            "sw_manifest": {k: str(Path(v).resolve()) for k, v in sw_paths.items()},
            "hw_manifest": {k: str(Path(v).resolve()) for k, v in hw_paths.items()},
            "enc_bitstream": BITSTREAM_FILE,
            "reconfig_delay": p.device.reconfig_delay,
        },
        "identity": identity_to_json(p.identity),
        "verifier": {"signer_id": p.verifier_signer_id, "public": p.verifier_public.hex()},
    }
    device_path = out / DEVICE_FILE
    device_path.write_text(json.dumps(device_doc, indent=2) + "\n")
    device_path.chmod(0o600)
    record_path = out / RECORD_FILE
    record_path.write_text(json.dumps(p.record.to_json(), indent=2) + "\n")
    record_path.chmod(0o600)
    return {"device": device_path, "record": record_path, "bitstream": out / BITSTREAM_FILE}
