"""
metrics.py — What a simulation run reports

Counters are cumulative; the per-slot series samples them at each slot end.
Series and summaries are written with fixed float formatting so that two
runs with the same config and seed produce byte-identical files.
"""

import csv
import math
from collections import Counter
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

SERIES_COLUMNS = (
    "slot",
    "online_peers",
    "chain_height",
    "mean_replicas",
    "integrity_violations",
    "service_denials",
    "messages",
)


class SlotSample(BaseModel):
    slot: int = Field(..., ge=0)
    online_peers: int = Field(..., ge=0)
    chain_height: int = Field(..., ge=0)
    # nan until some main-path block is older than the replica warm-up
    mean_replicas: float
    integrity_violations: int = Field(..., ge=0)
    service_denials: int = Field(..., ge=0)
    messages: int = Field(..., ge=0)

    def row(self) -> list[str]:
        return [
            str(self.slot),
            str(self.online_peers),
            str(self.chain_height),
            "nan" if math.isnan(self.mean_replicas) else f"{self.mean_replicas:.6f}",
            str(self.integrity_violations),
            str(self.service_denials),
            str(self.messages),
        ]


class Metrics(BaseModel):
    integrity_violations: int = 0
    service_denials: int = 0
    validation_attempts: int = 0
    validation_successes: int = 0
    bootstrap_attempts: int = 0
    forged_views_adopted: int = 0
    attacks_attempted: int = 0
    attacks_finalized: int = 0
    direct_submissions: int = 0
    evidence_committed: int = 0
    blacklisted: int = 0
    forks_resolved: int = 0
    recast_transactions: int = 0
    audits_expired: int = 0
    detection_lags: list[int] = Field(default_factory=list)
    chain_height: int = 0
    replicas_per_block_per_slot: list[float] = Field(default_factory=list)
    tx_mean_replicas: float = 0.0
    search_hops: dict[int, int] = Field(default_factory=dict)
    consensus_involvement: dict[str, int] = Field(default_factory=dict)
    messages: dict[str, int] = Field(default_factory=dict)
    series: list[SlotSample] = Field(default_factory=list)

    # ── Derived ───────────────────────────────────────────────────────────────

    @property
    def mean_replicas(self) -> float:
        """Online replicas per warmed-up main-path block, averaged over measured slots."""
        measured = [x for x in self.replicas_per_block_per_slot if not math.isnan(x)]
        return float(np.mean(measured)) if measured else math.nan

    @property
    def max_detection_lag(self) -> int:
        return max(self.detection_lags, default=0)

    @property
    def service_denial_rate(self) -> float:
        attempts = self.validation_attempts + self.bootstrap_attempts
        return self.service_denials / attempts if attempts else 0.0

    @property
    def service_availability(self) -> float:
        """Fraction of honest validation requests that reached t signatures."""
        if not self.validation_attempts:
            return 1.0
        return self.validation_successes / self.validation_attempts

    @property
    def adversary_success(self) -> float:
        return self.attacks_finalized / self.attacks_attempted if self.attacks_attempted else 0.0

    @property
    def mean_hops(self) -> float:
        total = sum(self.search_hops.values())
        if not total:
            return 0.0
        return sum(h * c for h, c in self.search_hops.items()) / total

    @property
    def involvement_mean(self) -> float:
        counts = list(self.consensus_involvement.values())
        return float(np.mean(counts)) if counts else 0.0

    @property
    def involvement_stddev(self) -> float:
        counts = list(self.consensus_involvement.values())
        return float(np.std(counts)) if counts else 0.0

    @property
    def total_messages(self) -> int:
        return sum(self.messages.values())

    # ── Recording ─────────────────────────────────────────────────────────────

    def record_hops(self, hops: "Counter[int] | dict[int, int]") -> None:
        for h, c in hops.items():
            self.search_hops[h] = self.search_hops.get(h, 0) + c

    # ── Output ────────────────────────────────────────────────────────────────

    def summary_lines(self) -> list[str]:
        def fmt(x: float) -> str:
            return "nan" if math.isnan(x) else f"{x:.6f}"

        return [
            f"integrity_violations={self.integrity_violations}",
            f"service_denials={self.service_denials}",
            f"service_denial_rate={fmt(self.service_denial_rate)}",
            f"service_availability={fmt(self.service_availability)}",
            f"validation_attempts={self.validation_attempts}",
            f"bootstrap_attempts={self.bootstrap_attempts}",
            f"forged_views_adopted={self.forged_views_adopted}",
            f"attacks_attempted={self.attacks_attempted}",
            f"attacks_finalized={self.attacks_finalized}",
            f"adversary_success={fmt(self.adversary_success)}",
            f"direct_submissions={self.direct_submissions}",
            f"evidence_committed={self.evidence_committed}",
            f"blacklisted={self.blacklisted}",
            f"forks_resolved={self.forks_resolved}",
            f"recast_transactions={self.recast_transactions}",
            f"audits_expired={self.audits_expired}",
            f"max_detection_lag={self.max_detection_lag}",
            f"chain_height={self.chain_height}",
            f"mean_replicas={fmt(self.mean_replicas)}",
            f"tx_mean_replicas={fmt(self.tx_mean_replicas)}",
            f"mean_hops={fmt(self.mean_hops)}",
            f"involvement_mean={fmt(self.involvement_mean)}",
            f"involvement_stddev={fmt(self.involvement_stddev)}",
            f"messages={self.total_messages}",
        ]


def write_series(metrics: Metrics, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_COLUMNS)
        for sample in metrics.series:
            writer.writerow(sample.row())


def write_summary(metrics: Metrics, path: Path) -> None:
    Path(path).write_text("\n".join(metrics.summary_lines()) + "\n", encoding="utf-8")
