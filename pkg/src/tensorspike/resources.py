"""Resource accounting for the streaming protocol: samples N, passes K, state size S.

Scalars are counted rather than raw bytes; ``bits = scalars * bits_per_scalar``.
Two state-size conventions are reported: the live current-iterate count and the
store-every-iterate convention (each block's allocation multiplied by its
iterate budget plus one).
"""

from __future__ import annotations

from dataclasses import dataclass, field


class SampleBudgetExceeded(RuntimeError):
    """Raised when a run consumes more fresh samples than its configured cap."""


@dataclass
class ResourceLedger:
    samples_used: int = 0
    passes: int = 1
    state_scalars_current: int = 0
    state_scalars_paper: int = 0
    bits_per_scalar: int = 64
    sample_cap: int | None = None

    def merge(self, other: "ResourceLedger") -> "ResourceLedger":
        self.samples_used += other.samples_used
        self.passes = max(self.passes, other.passes)
        self.state_scalars_current = max(self.state_scalars_current, other.state_scalars_current)
        self.state_scalars_paper = max(self.state_scalars_paper, other.state_scalars_paper)
        return self

    @property
    def state_bits(self) -> int:
        return self.state_scalars_current * self.bits_per_scalar

    def to_dict(self) -> dict:
        return {
            "samples_used": self.samples_used,
            "passes": self.passes,
            "state_scalars_current": self.state_scalars_current,
            "state_scalars_paper": self.state_scalars_paper,
            "bits_per_scalar": self.bits_per_scalar,
            "state_bits": self.state_bits,
            "NKS": self.samples_used * self.passes * self.state_bits,
        }


def charge_sample(ledger: ResourceLedger, n: int) -> ResourceLedger:
    """Record ``n`` consumed fresh samples; enforces the optional cap."""
    if n < 0:
        raise ValueError("cannot charge a negative sample count")
    ledger.samples_used += n
    if ledger.sample_cap is not None and ledger.samples_used > ledger.sample_cap:
        raise SampleBudgetExceeded(
            f"sample cap {ledger.sample_cap} exceeded ({ledger.samples_used} consumed)"
        )
    return ledger


@dataclass
class PipelineSnapshot:
    """Live allocations of one pipeline moment: (tag, scalar_count, iterate_budget)."""

    allocations: list[tuple[str, int, int]] = field(default_factory=list)

    def add(self, tag: str, scalars: int, iterate_budget: int = 0) -> None:
        self.allocations.append((tag, int(scalars), int(iterate_budget)))

    def remove_tag(self, tag: str) -> None:
        self.allocations = [a for a in self.allocations if a[0] != tag]


def audit_state_size(snapshot: PipelineSnapshot) -> tuple[int, int]:
    """Return (current, paper_convention) scalar counts for a snapshot.

    ``current`` counts each live allocation once; the paper convention
    multiplies each by its stored-iterate count (budget + 1).
    """
    current = sum(s for _, s, _ in snapshot.allocations)
    paper = sum(s * (b + 1) for _, s, b in snapshot.allocations)
    return current, paper
