from .agent import AttestationOutcome, load_attester_context, run_session
from .session import (
    AttesterContext,
    AttesterIdentity,
    AttesterPhase,
    AttesterSession,
    attester_start,
    attester_step,
    respond_bitstream_challenge,
    respond_service_challenge,
)

__all__ = [
    "AttestationOutcome", "AttesterContext", "AttesterIdentity", "AttesterPhase",
    "AttesterSession", "attester_start", "attester_step", "load_attester_context",
    "respond_bitstream_challenge", "respond_service_challenge", "run_session",
]
