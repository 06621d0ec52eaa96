"""Remote attestation of FPGA edge nodes with classical or post-quantum
signature/KEM profiles and a hash-chained evidence ledger."""

__version__ = "0.1.0"
