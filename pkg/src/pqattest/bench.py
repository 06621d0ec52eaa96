"""Per-phase latency over repeated honest attestations.

Phase boundaries are taken inside the verifier service:

    II      ChallengeService sent      -> A1 appraised
    III     ChallengeBitstream sent    -> A2 appraised (includes the shell load)
    IV      Verdict(Accept) sent       -> KeyRelease built
    V_push  evidence handed to ledger  -> receipt received
"""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from . import crypto_suite as cs
from .deployment import Deployment
from .errors import BenchAborted, MissingBaseline

log = logging.getLogger(__name__)

PHASES = ("II", "III", "IV", "V_push")
CSV_COLUMNS = ("profile", "iteration", "phase", "duration_us", "delay_s")
DEFAULT_WARMUP = 5


@dataclass(frozen=True)
class BenchRecord:
    profile_id: cs.ProfileId
    iteration: int
    phase: str
    duration_us: int
    delay_s: float


def run_bench(profiles: Iterable[cs.ProfileId], iterations: int = 100,
              reconfig_delay: float = 0.0, output_path: Path | str | None = None,
              warmup: int = DEFAULT_WARMUP, block_interval: float = 0.05,
              progress: Callable[[cs.ProfileId, int], None] | None = None) -> list[BenchRecord]:
    """Run ``warmup + iterations`` honest sessions per profile, one at a time.

    The shell is unloaded before every session so each run pays the
    reconfiguration delay in Phase III.  Bitstream programming happens after
    the last measured boundary, so its delay is set to zero to save time.
    """
    records: list[BenchRecord] = []
    for profile in profiles:
        profile = cs.ProfileId(profile)
        with Deployment(block_interval=block_interval) as dep:
            prov = dep.provision(profile, device_id=f"bench-{profile.value}",
                                 reconfig_delay=reconfig_delay, program_delay=0.0)
            for i in range(warmup + iterations):
                prov.device.unload_shell()
                outcome, session = dep.attest(prov)
                if not outcome.completed or session is None or not session.accepted:
                    raise BenchAborted(f"{profile.value} iteration {i}: {outcome.reason.name} "
                                       f"{outcome.detail}")
                if session.receipt is None:
                    raise BenchAborted(f"{profile.value} iteration {i}: evidence not recorded")
                if i < warmup:
                    continue
                timing = dep.verifier.timings[session.session_id]
                for phase in PHASES:
                    records.append(BenchRecord(profile, i - warmup, phase, timing[phase],
                                               reconfig_delay))
                if progress is not None:
                    progress(profile, i - warmup)
    if output_path is not None:
        write_csv(records, output_path)
    return records


def write_csv(records: Iterable[BenchRecord], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.profile_id.value, r.iteration, r.phase, r.duration_us, f"{r.delay_s:g}"])


def read_csv(path: Path | str) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"expected CSV columns {','.join(CSV_COLUMNS)}")
        return [BenchRecord(cs.ProfileId.parse(row["profile"]), int(row["iteration"]),
                            row["phase"], int(row["duration_us"]), float(row["delay_s"]))
                for row in reader]


@dataclass(frozen=True)
class PhaseStats:
    n: int
    mean: float
    median: float
    p95: float

    @classmethod
    def of(cls, values: list[int]) -> "PhaseStats":
        if len(values) > 1:
            p95 = statistics.quantiles(values, n=20, method="inclusive")[18]
        else:
            p95 = float(values[0])
        return cls(len(values), statistics.fmean(values), statistics.median(values), p95)


@dataclass
class Summary:
    stats: dict[tuple[cs.ProfileId, str], PhaseStats]
    totals_us: dict[cs.ProfileId, float]
    overhead: dict[cs.ProfileId, float]
    crypto_overhead: dict[cs.ProfileId, float]
    best_pq: cs.ProfileId | None
    delay_s: float

    def mean(self, profile: cs.ProfileId, phase: str) -> float:
        return self.stats[(profile, phase)].mean

    def to_json(self) -> dict:
        return {
            "delay_s": self.delay_s,
            "phases": [
                {"profile": p.value, "phase": ph, "n": s.n, "mean_us": round(s.mean, 1),
                 "median_us": round(s.median, 1), "p95_us": round(s.p95, 1)}
                for (p, ph), s in self.stats.items()
            ],
            "profiles": [
                {"profile": p.value, "total_us": round(self.totals_us[p], 1),
                 "overhead_pct": round(100 * self.overhead[p], 3),
                 "crypto_overhead_pct": round(100 * self.crypto_overhead[p], 3)}
                for p in self.totals_us
            ],
            "min_overhead_pq": self.best_pq.value if self.best_pq else None,
        }


def summarize(source: Iterable[BenchRecord] | Path | str) -> Summary:
    """Per (profile, phase) statistics and total-time overhead against NoPQ.

    A profile's total is the sum of its phase means.  The crypto-only figure
    removes the configured reconfiguration delay from both totals first.
    """
    records = read_csv(source) if isinstance(source, (str, Path)) else list(source)
    grouped: dict[tuple[cs.ProfileId, str], list[int]] = {}
    delays: dict[cs.ProfileId, float] = {}
    for r in records:
        grouped.setdefault((r.profile_id, r.phase), []).append(r.duration_us)
        delays[r.profile_id] = r.delay_s
    if cs.ProfileId.NoPQ not in delays:
        raise MissingBaseline("overhead needs NoPQ rows in the bench results")
    order = [p for p in cs.ProfileId if p in delays]
    stats = {(p, ph): PhaseStats.of(grouped[(p, ph)])
             for p in order for ph in PHASES if (p, ph) in grouped}
    totals = {p: sum(s.mean for (q, _), s in stats.items() if q is p) for p in order}
    base = totals[cs.ProfileId.NoPQ]
    base_crypto = base - delays[cs.ProfileId.NoPQ] * 1e6
    overhead = {p: (totals[p] - base) / base if base else 0.0 for p in order}
    crypto = {}
    for p in order:
        c = totals[p] - delays[p] * 1e6
        crypto[p] = (c - base_crypto) / base_crypto if base_crypto > 0 else 0.0
    pq = [p for p in order if p is not cs.ProfileId.NoPQ]
    best = min(pq, key=lambda p: overhead[p]) if pq else None
    return Summary(stats, totals, overhead, crypto, best, delays[cs.ProfileId.NoPQ])


def format_summary(summary: Summary) -> str:
    lines = [f"{'profile':8} {'phase':7} {'mean_us':>12} {'median_us':>12} {'p95_us':>12}"]
    for (p, ph), s in summary.stats.items():
        lines.append(f"{p.value:8} {ph:7} {s.mean:12.1f} {s.median:12.1f} {s.p95:12.1f}")
    lines.append("")
    lines.append(f"{'profile':8} {'total_us':>14} {'overhead':>10} {'crypto-only':>12}")
    for p, total in summary.totals_us.items():
        mark = "  <- lowest PQ overhead" if p is summary.best_pq else ""
        lines.append(f"{p.value:8} {total:14.1f} {100 * summary.overhead[p]:9.2f}% "
                     f"{100 * summary.crypto_overhead[p]:11.2f}%{mark}")
    return "\n".join(lines)
