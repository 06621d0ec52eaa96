"""Role configuration: JSON files plus ``PQATTEST_<ROLE>_<KEY>`` overrides.

Unknown keys are an error.  Relative paths are resolved against the
directory of the config file.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, TypeVar

from .errors import ConfigError

ENV_PREFIX = "PQATTEST_"

_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(us|ms|s|m)?\s*$")
_UNITS = {"us": 1e-6, "ms": 1e-3, "s": 1.0, "m": 60.0, None: 1.0}


def parse_duration(text: str | float | int) -> float:
    """``"3.8s"``, ``"200ms"``, ``"1m"`` or a bare number of seconds."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _DURATION.match(text)
    if not m:
        raise ConfigError(f"not a duration: {text!r}")
    return float(m.group(1)) * _UNITS[m.group(2)]


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"address must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class VerifierConfig:
    listen: str = "127.0.0.1:7400"
    ledger: str | None = "127.0.0.1:7500"
    state_dir: str = "state/verifier"
    verifier_id: str = "verifier"
    retry_initial: str = "100ms"
    retry_max: str = "5s"
    session_timeout: str = "30s"
    log_level: str = "INFO"


@dataclass
class LedgerConfig:
    listen: str = "127.0.0.1:7500"
    state_dir: str = "state/ledger"
    block_interval: str = "50ms"
    log_level: str = "INFO"


@dataclass
class AttesterConfig:
    device_file: str = ""
    verifier: str = "127.0.0.1:7400"
    ledger: str | None = None
    profile: str | None = None
    reconfig_delay: str | None = None
    timeout: str = "30s"
    log_level: str = "INFO"


_PATH_KEYS = {"state_dir", "device_file"}
C = TypeVar("C", VerifierConfig, LedgerConfig, AttesterConfig)


def load_config(cls: type[C], path: Path | str | None = None, role: str | None = None,
                environ: Mapping[str, str] | None = None) -> C:
    role = (role or cls.__name__.removesuffix("Config")).upper()
    environ = os.environ if environ is None else environ
    known = {f.name for f in fields(cls)}
    doc: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
        base = path.parent
    prefix = f"{ENV_PREFIX}{role}_"
    from_env = set()
    for key, value in environ.items():
        if key.startswith(prefix):
            name = key[len(prefix):].lower()
            if name not in known:
                raise ConfigError(f"environment variable {key} matches no {role.lower()} setting")
            doc[name] = value
            from_env.add(name)
    for key, value in doc.items():
        if value is not None and not isinstance(value, (str, int, float)):
            raise ConfigError(f"{key} must be a string or number")
        if value is not None and key in _PATH_KEYS:
            doc[key] = str((Path.cwd() if key in from_env else base) / str(value))
        elif value is not None:
            doc[key] = str(value)
    cfg = cls(**doc)
    _validate(cfg)
    return cfg


def _validate(cfg) -> None:
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if f.name in ("listen", "ledger", "verifier"):
            parse_address(value)
        elif f.name in ("retry_initial", "retry_max", "session_timeout", "block_interval",
                        "reconfig_delay", "timeout"):
            parse_duration(value)
    if isinstance(cfg, AttesterConfig) and not cfg.device_file:
        raise ConfigError("attester config needs device_file")
