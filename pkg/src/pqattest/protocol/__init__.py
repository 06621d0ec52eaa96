from .messages import (
    A1_LEN,
    A2_LEN,
    NONCE_LEN,
    SESSION_ID_LEN,
    KeyReleasePayload,
    PayloadType,
    ProtocolError,
    Reason,
    ReportA1,
    ReportA2,
    ReportA3,
    SignedEnvelope,
    Verdict,
    canonical_sign_bytes,
    decode_report,
    encode_report,
    envelope_valid,
    seal,
)
from .wire import Frame, MsgType, Tag, Transcript, decode_frame, read_frame, write_frame

__all__ = [
    "A1_LEN", "A2_LEN", "NONCE_LEN", "SESSION_ID_LEN",
    "Frame", "KeyReleasePayload", "MsgType", "PayloadType", "ProtocolError", "Reason",
    "ReportA1", "ReportA2", "ReportA3", "SignedEnvelope", "Tag", "Transcript", "Verdict",
    "canonical_sign_bytes", "decode_frame", "decode_report", "encode_report",
    "envelope_valid", "read_frame", "seal", "write_frame",
]
