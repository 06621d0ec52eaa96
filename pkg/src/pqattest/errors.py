"""Exception hierarchy shared by every pqattest module."""


class PqAttestError(Exception):
    """Base class for all errors raised by pqattest."""


class DecodeError(PqAttestError, ValueError):
    """Malformed bytes: wrong length, bad tag, truncated frame and so on."""

    def __init__(self, message: str, expected_len: int | None = None, got_len: int | None = None):
        super().__init__(message)
        self.expected_len = expected_len
        self.got_len = got_len


class PaddingError(PqAttestError):
    """CBC decryption produced invalid PKCS#7 padding (wrong key or corrupted blob)."""


# device model

class DeviceError(PqAttestError):
    pass


class DoubleLoad(DeviceError):
    pass


class ShellNotLoaded(DeviceError):
    pass


class NoBitstream(DeviceError):
    pass


class EmptyManifest(DeviceError):
    pass


# verifier

class UnknownDevice(PqAttestError):
    pass


class DuplicateDevice(PqAttestError):
    pass


# ledger

class LedgerError(PqAttestError):
    pass


class DuplicateSession(LedgerError):
    pass


class DuplicateSigner(LedgerError):
    pass


class UnknownSigner(LedgerError):
    pass


class RecordSignatureInvalid(LedgerError):
    pass


class LedgerUnavailable(LedgerError):
    pass


class TamperDetected(LedgerError):
    def __init__(self, block_index: int, detail: str):
        super().__init__(f"tamper detected at block {block_index}: {detail}")
        self.block_index = block_index
        self.detail = detail


# harnesses and configuration

class ConfigError(PqAttestError):
    pass


class HarnessError(PqAttestError):
    pass


class MissingBaseline(PqAttestError):
    pass


class BenchAborted(PqAttestError):
    pass
