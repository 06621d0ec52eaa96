"""``pqattest`` command line.

Exit codes: 0 success, 1 attestation rejected / tamper found / scenario
failed, 2 configuration, usage or connection error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from . import adversary, bench
from . import crypto_suite as cs
from .attester.agent import load_attester_context, run_session
from .config import (
    AttesterConfig,
    LedgerConfig,
    VerifierConfig,
    load_config,
    parse_address,
    parse_duration,
)
from .errors import (
    ConfigError,
    DuplicateDevice,
    HarnessError,
    LedgerError,
    LedgerUnavailable,
    MissingBaseline,
    PqAttestError,
    TamperDetected,
)
from .ledger.chain import Ledger, query_blocks, verify_dir
from .ledger.service import LedgerClient, LedgerService
from .protocol.messages import Verdict
from .provisioning import provision_device, write_provisioning
from .verifier.service import RetryPolicy, VerifierService
from .verifier.session import VerifierContext
from .verifier.store import (
    KEYS_FILE,
    NONCE_FILE,
    STORE_FILE,
    NonceRegistry,
    ReferenceRecord,
    ReferenceStore,
    VerifierKeys,
)

log = logging.getLogger("pqattest")

EXIT_OK, EXIT_REJECT, EXIT_ERROR = 0, 1, 2


class Output:
    def __init__(self, mode: str, stream=None):
        self.json = mode == "json"
        self.stream = stream or sys.stdout

    def emit(self, doc: dict, text: str | None = None) -> None:
        if self.json:
            print(json.dumps(doc, sort_keys=True), file=self.stream, flush=True)
        else:
            print(text if text is not None else _as_text(doc), file=self.stream, flush=True)


def _as_text(doc: dict) -> str:
    return "\n".join(f"{k}: {v}" for k, v in doc.items())


def _profile(text: str) -> cs.ProfileId:
    try:
        return cs.ProfileId.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _profiles(text: str) -> list[cs.ProfileId]:
    if text.lower() == "all":
        return list(cs.ProfileId)
    return [_profile(p) for p in text.split(",")]


def _named_paths(items: list[str] | None) -> dict[str, Path]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name:
            raise ConfigError(f"expected NAME=PATH, got {item!r}")
        out[name] = Path(path)
    return out


def _wait_for_signal() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    while not stop.wait(0.5):
        pass


# ---------------------------------------------------------------------------
# provisioning

def cmd_provision(args, out: Output) -> int:
    profile = args.profile
    vstate = Path(args.verifier_state)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sw_paths = _named_paths(args.sw)
    hw_paths = _named_paths(args.hw)
    # without explicit components, write a small demo set next to the device file
    if not sw_paths:
        sw_paths = {"attestation-service": out_dir / "components" / "attestation-service.bin"}
    if not hw_paths:
        hw_paths = {"shell": out_dir / "components" / "shell.bin"}
    for path in (*sw_paths.values(), *hw_paths.values()):
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(os.urandom(1024))
    if args.bitstream:
        bitstream = Path(args.bitstream).read_bytes()
    else:
        bitstream = os.urandom(64 * 1024)
    keys = VerifierKeys(args.verifier_id, vstate / KEYS_FILE)
    p = provision_device(profile, args.device_id, bitstream,
                         {k: v.read_bytes() for k, v in sw_paths.items()},
                         {k: v.read_bytes() for k, v in hw_paths.items()},
                         keys, reconfig_delay=parse_duration(args.reconfig_delay))
    store = ReferenceStore(vstate / STORE_FILE)
    store.provision(p.record, force=args.force)
    paths = write_provisioning(p, out_dir, sw_paths, hw_paths)
    suite = cs.suite_from_profile(profile)
    out.emit({
        "device_id": args.device_id,
        "profile": profile.value,
        "dsa_alg": suite.dsa_alg.value,
        "kem_alg": suite.kem_alg.value,
        "c1_ref": p.record.c1_ref.hex(),
        "c2_ref": p.record.c2_ref.hex(),
        "c3_ref": p.record.c3_ref.hex(),
        "bitstream_digest": p.bitstream_digest.hex(),
        "device_file": str(paths["device"]),
        "record_file": str(paths["record"]),
        "verifier_store": str(vstate / STORE_FILE),
    })
    return EXIT_OK


def cmd_import_record(args, out: Output) -> int:
    record = ReferenceRecord.from_json(json.loads(Path(args.record).read_text()))
    ReferenceStore(Path(args.verifier_state) / STORE_FILE).provision(record, force=args.force)
    out.emit({"imported": record.device_id, "profile": record.profile_id.value})
    return EXIT_OK


# ---------------------------------------------------------------------------
# services

def _verifier_service(cfg: VerifierConfig) -> VerifierService:
    state = Path(cfg.state_dir)
    state.mkdir(parents=True, exist_ok=True)
    ctx = VerifierContext(ReferenceStore(state / STORE_FILE), NonceRegistry(state / NONCE_FILE),
                          VerifierKeys(cfg.verifier_id, state / KEYS_FILE))
    host, port = parse_address(cfg.listen)
    retry = RetryPolicy(parse_duration(cfg.retry_initial), parse_duration(cfg.retry_max))
    ledger = parse_address(cfg.ledger) if cfg.ledger else None
    return VerifierService(ctx, host, port, ledger, retry, parse_duration(cfg.session_timeout))


def cmd_serve(args, out: Output) -> int:
    if args.role == "verifier":
        cfg = load_config(VerifierConfig, args.config)
        for key in ("listen", "state_dir", "ledger"):
            if getattr(args, key, None):
                setattr(cfg, key, getattr(args, key))
        service = _verifier_service(cfg)
        ledger = None
    else:
        cfg = load_config(LedgerConfig, args.config)
        for key in ("listen", "state_dir"):
            if getattr(args, key, None):
                setattr(cfg, key, getattr(args, key))
        if args.block_interval:
            cfg.block_interval = args.block_interval
        host, port = parse_address(cfg.listen)
        ledger = Ledger(cfg.state_dir, parse_duration(cfg.block_interval))
        service = LedgerService(ledger, host, port)
    service.start()
    host, port = service.address
    out.emit({"role": args.role, "listening": f"{host}:{port}"},
             f"{args.role} listening on {host}:{port}")
    try:
        _wait_for_signal()
    finally:
        service.stop()
        if ledger is not None:
            ledger.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# attestation

def _attest(device_file: str, verifier: str, ledger: str | None, timeout: float,
            profile: cs.ProfileId | None, reconfig_delay: float | None, out: Output) -> int:
    ctx = load_attester_context(device_file)
    if profile is not None:
        ctx.profile_override = profile
    if reconfig_delay is not None:
        ctx.device.reconfig_delay = reconfig_delay
    try:
        outcome = run_session(ctx, parse_address(verifier), timeout)
    except OSError as exc:
        out.emit({"error": "connection", "detail": str(exc)},
                 f"cannot reach verifier at {verifier}: {exc}")
        return EXIT_ERROR
    doc = outcome.to_json()
    doc["device_id"] = ctx.identity.device_id
    doc["profile"] = ctx.profile_id.value
    if ledger and outcome.session_id is not None:
        doc["receipt"] = _await_receipt(LedgerClient(parse_address(ledger)), outcome.session_id,
                                        timeout)
    lines = [
        f"device {doc['device_id']} ({doc['profile']}) session {doc['session_id'] or '-'}",
        f"  phase II  service verdict:   {doc['service_verdict'] or '-'}",
        f"  phase III bitstream verdict: {doc['bitstream_verdict'] or '-'}",
        f"  phase IV  programmed:        {doc['programmed_digest'] or 'no'}",
        f"  outcome: {doc['outcome']} ({doc['reason']}{': ' + doc['detail'] if doc['detail'] else ''})",
    ]
    if "receipt" in doc:
        r = doc["receipt"]
        lines.append(f"  phase V   ledger receipt:    "
                     f"{'block %d record %d' % tuple(r) if r else 'not yet recorded'}")
    out.emit(doc, "\n".join(lines))
    return EXIT_OK if outcome.completed else EXIT_REJECT


def _await_receipt(client: LedgerClient, session_id: bytes, timeout: float) -> list[int] | None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            found = client.query(session_id=session_id)
        except LedgerUnavailable:
            found = []
        if found:
            r = found[0][1]
            return [r.block_index, r.record_index]
        time.sleep(0.1)
    return None


def cmd_attester(args, out: Output) -> int:
    cfg = load_config(AttesterConfig, args.config)
    return _attest(cfg.device_file, cfg.verifier, cfg.ledger, parse_duration(cfg.timeout),
                   cs.ProfileId.parse(cfg.profile) if cfg.profile else None,
                   parse_duration(cfg.reconfig_delay) if cfg.reconfig_delay else None, out)


def cmd_attest(args, out: Output) -> int:
    return _attest(args.device, args.verifier, args.ledger, parse_duration(args.timeout),
                   args.profile, parse_duration(args.reconfig_delay) if args.reconfig_delay else None,
                   out)


# ---------------------------------------------------------------------------
# harnesses

def cmd_attack(args, out: Output) -> int:
    if args.action == "run":
        names = [args.name]
        profiles = [args.profile] if not isinstance(args.profile, list) else args.profile
    else:
        names = list(adversary.SCENARIOS)
        profiles = args.profile if isinstance(args.profile, list) else [args.profile]

    def report(r: adversary.ScenarioResult) -> None:
        if out.json:
            out.emit(r.to_json(transcript=args.transcript))
        else:
            status = "PASS" if r.passed else "FAIL"
            out.emit({}, f"{status} {r.name:20} {r.profile.value:7} -> {r.observed_verdict} "
                         f"({r.observed_reason.name}); expected "
                         f"{'/'.join(x.name for x in r.expected)}")

    results = adversary.run_all(profiles, args.reps, names, args.seed, progress=report)
    passed = sum(r.passed for r in results)
    out.emit({"summary": {"passed": passed, "total": len(results),
                          "false_accepts": sum(r.false_accept for r in results)}},
             f"{passed}/{len(results)} scenario runs passed")
    return EXIT_OK if passed == len(results) else EXIT_REJECT


def cmd_bench(args, out: Output) -> int:
    if args.action == "run":
        delay = parse_duration(args.reconfig_delay)
        records = bench.run_bench(args.profiles, args.iters, delay, args.out, args.warmup)
        summary = bench.summarize(records)
    else:
        summary = bench.summarize(args.csv)
    out.emit(summary.to_json(), bench.format_summary(summary))
    return EXIT_OK


def cmd_ledger(args, out: Output) -> int:
    if args.action == "verify":
        try:
            blocks = verify_dir(args.state_dir)
        except TamperDetected as exc:
            out.emit({"status": "TamperDetected", "block_index": exc.block_index,
                      "detail": exc.detail},
                     f"TamperDetected at block {exc.block_index}: {exc.detail}")
            return EXIT_REJECT
        n = sum(len(b.records) for b in blocks)
        out.emit({"status": "Ok", "blocks": len(blocks), "records": n},
                 f"Ok: {len(blocks)} blocks, {n} records")
        return EXIT_OK

    filters = dict(
        device_id=args.device,
        session_id=bytes.fromhex(args.session) if args.session else None,
        verdict={"accept": Verdict.Accept, "reject": Verdict.Reject}.get(
            (args.verdict or "").lower()),
        block_from=args.block_from,
        block_to=args.block_to,
    )
    if args.ledger:
        items = LedgerClient(parse_address(args.ledger)).query(**filters)
    elif args.state_dir:
        try:
            items = query_blocks(verify_dir(args.state_dir), **filters)
        except TamperDetected as exc:
            out.emit({"status": "TamperDetected", "block_index": exc.block_index},
                     f"refusing to query a tampered ledger: {exc}")
            return EXIT_REJECT
    else:
        raise ConfigError("ledger query needs --ledger or --state-dir")
    rows = []
    for rec, receipt in items:
        a3 = rec.a3
        rows.append({
            "block": receipt.block_index, "record": receipt.record_index,
            "device_id": a3.device_id, "session_id": a3.session_id.hex(),
            "profile": a3.profile_id.value,
            "service_verdict": a3.service_verdict.name, "service_reason": a3.service_reason.name,
            "bitstream_verdict": a3.bitstream_verdict.name,
            "bitstream_reason": a3.bitstream_reason.name,
            "timestamp": a3.timestamp, "signer_id": rec.signer_id,
        })
    text = "\n".join(
        f"{r['block']:>6}/{r['record']:<3} {r['device_id']} {r['session_id']} {r['profile']} "
        f"service={r['service_verdict']}({r['service_reason']}) "
        f"bitstream={r['bitstream_verdict']}({r['bitstream_reason']})" for r in rows
    ) or "no matching records"
    out.emit({"records": rows}, text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqattest", description="Post-quantum remote "
                                     "attestation for FPGA edge nodes")
    parser.add_argument("--output", choices=("text", "json"), default="text")
    parser.add_argument("--log-level", default=os.environ.get("PQATTEST_LOG_LEVEL", "WARNING"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("provision", help="offline preparation of one device")
    p.add_argument("--profile", type=_profile, required=True)
    p.add_argument("--device-id", required=True)
    p.add_argument("--verifier-state", required=True, help="verifier state directory")
    p.add_argument("--verifier-id", default="verifier")
    p.add_argument("--out", required=True, help="directory for the attester device file")
    p.add_argument("--bitstream", help="plaintext bitstream file (random if omitted)")
    p.add_argument("--sw", action="append", metavar="NAME=PATH")
    p.add_argument("--hw", action="append", metavar="NAME=PATH")
    p.add_argument("--reconfig-delay", default="0s")
    p.add_argument("--force", action="store_true", help="overwrite an existing record")
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("import-record", help="load a reference record into a verifier store")
    p.add_argument("record")
    p.add_argument("--verifier-state", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_import_record)

    p = sub.add_parser("serve", help="run the verifier or ledger service")
    p.add_argument("role", choices=("verifier", "ledger"))
    p.add_argument("--config")
    p.add_argument("--listen")
    p.add_argument("--state-dir")
    p.add_argument("--ledger", help="ledger address (verifier only)")
    p.add_argument("--block-interval", help="sealing interval (ledger only)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("attester", help="run one attestation from an attester config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_attester)

    p = sub.add_parser("attest", help="one-shot attestation of a provisioned device")
    p.add_argument("--device", required=True, help="device file from provision")
    p.add_argument("--verifier", default="127.0.0.1:7400")
    p.add_argument("--ledger")
    p.add_argument("--profile", type=_profile)
    p.add_argument("--reconfig-delay")
    p.add_argument("--timeout", default="30s")
    p.set_defaults(func=cmd_attest)

    p = sub.add_parser("attack", help="adversary scenarios")
    asub = p.add_subparsers(dest="action", required=True)
    a = asub.add_parser("run")
    a.add_argument("name", choices=sorted(adversary.SCENARIOS))
    a.add_argument("--profile", type=_profiles, default=[cs.ProfileId.PQ_III])
    a.add_argument("--reps", type=int, default=1)
    a.add_argument("--seed", type=int)
    a.add_argument("--transcript", action="store_true", help="include hex transcripts (json)")
    a = asub.add_parser("all")
    a.add_argument("--profile", type=_profiles, default=list(cs.ProfileId))
    a.add_argument("--reps", type=int, default=1)
    a.add_argument("--seed", type=int)
    a.add_argument("--transcript", action="store_true")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="phase latency benchmark")
    bsub = p.add_subparsers(dest="action", required=True)
    b = bsub.add_parser("run")
    b.add_argument("--profiles", type=_profiles, default=list(cs.ProfileId))
    b.add_argument("--iters", type=int, default=100)
    b.add_argument("--warmup", type=int, default=bench.DEFAULT_WARMUP)
    b.add_argument("--reconfig-delay", default="0s")
    b.add_argument("--out", required=True)
    b = bsub.add_parser("summarize")
    b.add_argument("csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ledger", help="inspect ledger state")
    lsub = p.add_subparsers(dest="action", required=True)
    v = lsub.add_parser("verify")
    v.add_argument("--state-dir", required=True)
    q = lsub.add_parser("query")
    q.add_argument("--state-dir")
    q.add_argument("--ledger", help="query a running ledger service instead")
    q.add_argument("--device")
    q.add_argument("--session", help="session id (hex)")
    q.add_argument("--verdict", choices=("accept", "reject", "Accept", "Reject"))
    q.add_argument("--from", dest="block_from", type=int)
    q.add_argument("--to", dest="block_to", type=int)
    p.set_defaults(func=cmd_ledger)
    return parser


def main(argv: list[str] | None = None, stdout=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=str(args.log_level).upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out = Output(args.output, stdout)
    try:
        return args.func(args, out)
    except (ConfigError, DuplicateDevice, HarnessError, MissingBaseline) as exc:
        out.emit({"error": type(exc).__name__, "detail": str(exc)},
                 f"error: {type(exc).__name__}: {exc}")
        return EXIT_ERROR
    except (LedgerUnavailable, OSError) as exc:
        out.emit({"error": "connection", "detail": str(exc)}, f"error: {exc}")
        return EXIT_ERROR
    except (LedgerError, PqAttestError, ValueError, KeyError) as exc:
        out.emit({"error": type(exc).__name__, "detail": str(exc)},
                 f"error: {type(exc).__name__}: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
