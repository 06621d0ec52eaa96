"""In-process ledger + verifier pair on ephemeral ports.

Used by the adversary and bench harnesses and by the tests; each instance
owns its own state directory.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from pathlib import Path

from . import crypto_suite as cs
from .attester.agent import AttestationOutcome, run_session
from .attester.session import AttesterContext
from .ledger.chain import Ledger
from .ledger.service import LedgerClient, LedgerService
from .protocol.wire import Transcript
from .provisioning import Provisioned, provision_device
from .verifier.service import RetryPolicy, VerifierService
from .verifier.session import VerifierContext, VerifierSession
from .verifier.store import NONCE_FILE, STORE_FILE, NonceRegistry, ReferenceStore, VerifierKeys

DEMO_SW = {"attestation-service": b"attestation service v1.4.2", "runtime": b"xrt 2.14"}
DEMO_HW = {"shell": b"xilinx_u280_gen3x16_xdma_base_1", "aes-kernel": b"aes256cbc kernel v2"}


class Deployment:
    def __init__(self, workdir: Path | str | None = None, block_interval: float = 0.05,
                 verifier_id: str = "verifier",
                 entropy_source: cs.EntropySource = cs.os_entropy,
                 retry: RetryPolicy = RetryPolicy(initial=0.05, maximum=0.5),
                 keys: VerifierKeys | None = None):
        self._owns_dir = workdir is None
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix="pqattest-"))
        self.entropy_source = entropy_source
        self.ledger = Ledger(self.workdir / "ledger", block_interval=block_interval)
        self.ledger_service = LedgerService(self.ledger).start()
        vdir = self.workdir / "verifier"
        vdir.mkdir(parents=True, exist_ok=True)
        self.keys = keys or VerifierKeys(verifier_id, None, entropy_source)
        self.ctx = VerifierContext(ReferenceStore(vdir / STORE_FILE), NonceRegistry(vdir / NONCE_FILE),
                                   self.keys, entropy_source)
        self.verifier = VerifierService(self.ctx, ledger_address=self.ledger_service.address,
                                        retry=retry, record_transcripts=True).start()
        self.ledger_client = LedgerClient(self.ledger_service.address)

    def provision(self, profile: cs.ProfileId, device_id: str = "edge-0",
                  bitstream: bytes | None = None, reconfig_delay: float = 0.0,
                  program_delay: float | None = None) -> Provisioned:
        if bitstream is None:
            bitstream = os.urandom(4096)
        p = provision_device(cs.ProfileId(profile), device_id, bitstream, DEMO_SW, DEMO_HW,
                             self.keys, self.entropy_source, reconfig_delay, program_delay)
        self.ctx.store.provision(p.record, force=True)
        return p

    def attest(self, ctx: AttesterContext | Provisioned, transcript: Transcript | None = None,
               address: tuple[str, int] | None = None, timeout: float = 30.0,
               wait: bool = True) -> tuple[AttestationOutcome, VerifierSession | None]:
        if isinstance(ctx, Provisioned):
            ctx = ctx.attester_context(self.entropy_source)
        outcome = run_session(ctx, address or self.verifier.address, timeout, transcript)
        session = None
        if wait and outcome.session_id is not None:
            session = self.verifier.wait_session(outcome.session_id, timeout)
        return outcome, session

    def close(self) -> None:
        self.verifier.stop()
        self.ledger_service.stop()
        self.ledger.close()
        if self._owns_dir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def __enter__(self) -> "Deployment":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
