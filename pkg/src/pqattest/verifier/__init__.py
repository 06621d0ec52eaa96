from .appraisal import appraise_bitstream, appraise_service, build_evidence, release_key
from .session import Phase, VerifierContext, VerifierSession, verifier_abort, verifier_step
from .store import NonceRegistry, ReferenceRecord, ReferenceStore, VerifierKeys

__all__ = [
    "NonceRegistry", "Phase", "ReferenceRecord", "ReferenceStore", "VerifierContext",
    "VerifierKeys", "VerifierSession", "appraise_bitstream", "appraise_service",
    "build_evidence", "release_key", "verifier_abort", "verifier_step",
]
