"""Quality-aware mid-run strategy adjustment.

At the adjustment round the per-center training-loss drops are min-max
normalized into [0, 1] and replace the owners' self-reported qualities.  The
payment and contributions are then re-solved on the owners that clear the
quality threshold, while the matching stays frozen.  Owners whose contribution
grew pay the incremental training fee to their matched center; shrinkage is
never refunded because shipped data cannot be un-transferred.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence

from .errors import (
    InsufficientParticipantsError,
    InvalidInputError,
    NoViableMarketError,
)
from .market import ComputeCenter, DataOwner, MarketParams, StrategyProfile
from .matching import Matching
from .training import RoundRecord

if TYPE_CHECKING:
    from .equilibrium import SneSolution

# Normalized qualities are floored here before any reciprocal use.
QUALITY_FLOOR = 1e-6


@dataclass(frozen=True)
class QualityAssessment:
    """Realized qualities at the adjustment round.

    ``raw`` is keyed by center id (the measured loss drop), ``normalized`` by
    the matched owner's id.  ``excluded`` lists owners whose normalized value
    fell below the market's quality threshold.
    """

    raw: dict[int, float]
    normalized: dict[int, float]
    excluded: tuple[int, ...]


@dataclass(frozen=True)
class PaymentEntry:
    round: int
    payer_owner: int
    payee_center: int
    amount: float


@dataclass
class PaymentLedger:
    """Append-only record of owner-to-center training fees."""

    entries: list[PaymentEntry] = field(default_factory=list)

    def add(self, round_index: int, payer_owner: int, payee_center: int, amount: float) -> None:
        if amount < 0:
            raise InvalidInputError(f"fee amounts are never negative, got {amount}")
        self.entries.append(PaymentEntry(round_index, payer_owner, payee_center, amount))

    def extend(self, entries: Sequence[PaymentEntry]) -> None:
        for entry in entries:
            self.add(entry.round, entry.payer_owner, entry.payee_center, entry.amount)

    def total(self) -> float:
        return sum(e.amount for e in self.entries)

    def total_paid_by(self, owner_id: int) -> float:
        return sum(e.amount for e in self.entries if e.payer_owner == owner_id)

    def total_received_by(self, center_id: int) -> float:
        return sum(e.amount for e in self.entries if e.payee_center == center_id)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "payer", "payee", "amount"])
            for e in self.entries:
                writer.writerow([e.round, e.payer_owner, e.payee_center, format(e.amount, ".17g")])


def evaluate_quality(record: RoundRecord, params: MarketParams) -> QualityAssessment:
    """Min-max normalize the round's loss drops onto [0, 1] per owner.

    When every center achieved the same drop all owners score 1.0.  Values at
    or below the minimum (including negative drops, where loss rose) map to
    the floor rather than zero so later reciprocals stay finite.
    """
    raw = {c.center_id: c.quality_delta for c in record.clients}
    owner_of = {c.center_id: c.owner_id for c in record.clients}
    values = list(raw.values())
    lo, hi = min(values), max(values)

    normalized: dict[int, float] = {}
    for center_id, value in raw.items():
        if hi == lo:
            scaled = 1.0
        else:
            scaled = (value - lo) / (hi - lo)
        normalized[owner_of[center_id]] = max(scaled, QUALITY_FLOOR)

    excluded = tuple(sorted(oid for oid, f in normalized.items() if f < params.xi))
    return QualityAssessment(raw=raw, normalized=normalized, excluded=excluded)


def readjust(
    solution: "SneSolution",
    assessment: QualityAssessment,
    matching: Matching,
    owners: Sequence[DataOwner],
    centers: Sequence[ComputeCenter],
    params: MarketParams,
    round_index: int,
) -> tuple["SneSolution", PaymentLedger]:
    """Re-solve payment and contributions with realized qualities; matching unchanged.

    The planned center workloads are re-derived against the new total spend so
    the adjusted profile remains a mutual best response, but data placement is
    frozen: realized workloads still follow the matching.  Owners whose
    contribution grew owe the fee for the difference.  If fewer than two
    owners clear the threshold the adjustment is abandoned and the original
    solution returned untouched.
    """
    from .equilibrium import SneSolution, _solve_center_side, _solve_owner_side

    owners_by_id = {o.id: o for o in owners}
    adjusted_specs = []
    for contrib in solution.profile.contributions:
        oid = contrib.owner_id
        if oid not in assessment.normalized:
            continue
        spec = owners_by_id[oid]
        adjusted_specs.append(replace(spec, reported_quality=assessment.normalized[oid]))

    try:
        eta, quality_by_id, intermediates, dropped = _solve_owner_side(adjusted_specs, params)
    except (NoViableMarketError, InsufficientParticipantsError):
        return solution, PaymentLedger()

    from .market import OwnerContribution

    old_x = {c.owner_id: c.quantity for c in solution.profile.contributions}
    contributions = []
    capped = []
    for spec in adjusted_specs:
        if spec.id not in quality_by_id:
            continue
        q_n = quality_by_id[spec.id]
        x_n = q_n / spec.reported_quality
        was_capped = False
        if x_n >= spec.capacity:
            x_n = spec.capacity * (1.0 - 1e-9)
            q_n = spec.reported_quality * x_n
            was_capped = True
            capped.append(spec.id)
        contributions.append(OwnerContribution(spec.id, q_n, x_n, capped=was_capped))

    ledger = PaymentLedger()
    for contrib in contributions:
        previous = old_x.get(contrib.owner_id, 0.0)
        if contrib.quantity > previous:
            ledger.add(
                round_index,
                contrib.owner_id,
                matching.pairs[contrib.owner_id],
                params.rho * (contrib.quantity - previous),
            )

    total_spend = params.rho * sum(c.quantity for c in contributions)
    undertakings, idle = _solve_center_side(centers, total_spend, params)
    profile = StrategyProfile(
        eta=eta,
        contributions=tuple(contributions),
        undertakings=undertakings,
        matching=matching,
    )
    new_solution = SneSolution(
        profile=profile,
        intermediates=intermediates,
        dropped_owners=tuple(dropped),
        capped_owners=tuple(capped),
        idle_centers=tuple(idle),
        capped_centers=solution.capped_centers,
    )
    return new_solution, ledger
