from .chain import (
    EvidenceBlock,
    EvidenceRecord,
    Ledger,
    Receipt,
    SignerRecord,
    parse_blocks_file,
    verify_dir,
)
from .service import LedgerClient, LedgerService

__all__ = [
    "EvidenceBlock", "EvidenceRecord", "Ledger", "LedgerClient", "LedgerService", "Receipt",
    "SignerRecord", "parse_blocks_file", "verify_dir",
]
