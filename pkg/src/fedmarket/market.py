"""Domain types and per-party utility functions for the three-sided data market.

Three kinds of participants interact: a model owner who announces a total
payment for model quality, data owners who decide how much data to contribute,
and computing centers that rent out capacity to train on that data.  Revenue
flows by proportional shares: a center's income is proportional to the slice
of the total workload it undertakes, an owner's income is proportional to its
quality-weighted contribution, and the model owner's payoff is a concave
function of the total contributed quality minus the payment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from .errors import (
    DegenerateMarketError,
    InvalidInputError,
    InvalidQualityError,
)

if TYPE_CHECKING:
    from .matching import Matching


@dataclass(frozen=True)
class MarketParams:
    """Global economic constants shared by all participants.

    lam      -- market regulating factor balancing the two-sided payment flow
                (1 when the market has as many centers as owners)
    rho      -- payment per unit of training data
    epsilon  -- training cost per unit of data per unit of computational power
    alpha    -- scale of the model owner's quality payoff
    xi       -- minimum admissible data quality for participation
    """

    lam: float = 1.0
    rho: float = 1.0
    epsilon: float = 1.0
    alpha: float = 5.0
    xi: float = 0.05
    quality_fn: str = "log1p"

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise InvalidInputError(f"market factor must be positive, got {self.lam}")
        if self.rho < 0:
            raise InvalidInputError(f"unit data payment must be nonnegative, got {self.rho}")
        if not self.epsilon > 0:
            raise InvalidInputError(f"unit training cost must be positive, got {self.epsilon}")
        if not self.alpha > 0:
            raise InvalidInputError(f"quality payoff scale must be positive, got {self.alpha}")
        if not 0.0 <= self.xi < 1.0:
            raise InvalidInputError(f"quality threshold must lie in [0, 1), got {self.xi}")
        if self.quality_fn != "log1p":
            raise InvalidInputError(f"unsupported quality function {self.quality_fn!r}")

    def model_quality(self, total_quality: float) -> float:
        """Concave model-quality payoff of the total contribution, before the alpha scale."""
        if total_quality < 0:
            raise InvalidInputError(f"total quality must be nonnegative, got {total_quality}")
        return math.log1p(total_quality)


@dataclass
class DataOwner:
    """A data owner with a reported quality and a finite (or unbounded) data pool.

    ``chosen_quantity`` is the quantity currently committed to training and is
    updated over the course of a run; all other fields are fixed at creation.
    """

    id: int
    reported_quality: float
    capacity: float = math.inf
    chosen_quantity: float = 0.0

    def __post_init__(self) -> None:
        if self.id < 1:
            raise InvalidInputError(f"owner ids are 1-based, got {self.id}")
        if not 0.0 < self.reported_quality <= 1.0:
            raise InvalidQualityError(
                f"owner {self.id}: quality must lie in (0, 1], got {self.reported_quality}"
            )
        if not self.capacity > 0:
            raise InvalidInputError(f"owner {self.id}: capacity must be positive")
        if self.chosen_quantity < 0:
            raise InvalidInputError(f"owner {self.id}: quantity must be nonnegative")


@dataclass
class ComputeCenter:
    """A computing center with a power cost factor and a workload capacity."""

    id: int
    sigma: float
    capacity: float = math.inf
    undertaken: float = 0.0

    def __post_init__(self) -> None:
        if self.id < 1:
            raise InvalidInputError(f"center ids are 1-based, got {self.id}")
        if not self.sigma > 0:
            raise InvalidInputError(f"center {self.id}: power factor must be positive")
        if not self.capacity > 0:
            raise InvalidInputError(f"center {self.id}: capacity must be positive")
        if not 0.0 <= self.undertaken <= self.capacity:
            raise InvalidInputError(f"center {self.id}: undertaken quantity out of range")


@dataclass(frozen=True)
class OwnerContribution:
    """One owner's solved contribution: quality-weighted product and raw quantity."""

    owner_id: int
    quality_product: float
    quantity: float
    capped: bool = False


@dataclass
class StrategyProfile:
    """A full strategy profile: payment, owner contributions, center undertakings.

    ``undertakings`` maps center id to its planned workload; ``matching`` and
    ``utilities`` are attached once computed.
    """

    eta: float
    contributions: tuple[OwnerContribution, ...]
    undertakings: dict[int, float]
    matching: "Matching | None" = None
    utilities: "UtilityReport | None" = None

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise InvalidInputError(f"total payment must be nonnegative, got {self.eta}")

    @property
    def total_quality(self) -> float:
        return sum(c.quality_product for c in self.contributions)

    @property
    def total_quantity(self) -> float:
        return sum(c.quantity for c in self.contributions)

    def contribution_for(self, owner_id: int) -> OwnerContribution | None:
        for c in self.contributions:
            if c.owner_id == owner_id:
                return c
        return None


@dataclass(frozen=True)
class UtilityReport:
    """Per-party utilities plus their grand total."""

    server: float
    owners: dict[int, float]
    centers: dict[int, float]
    total: float = field(init=False)

    def __post_init__(self) -> None:
        combined = self.server + sum(self.owners.values()) + sum(self.centers.values())
        object.__setattr__(self, "total", combined)


def utility_center(
    m: int,
    undertakings: Sequence[float],
    centers: Sequence[ComputeCenter],
    owners: Sequence[DataOwner],
    params: MarketParams,
) -> float:
    """Net payoff of center ``m`` (position in ``centers``) given all undertakings.

    Revenue is the center's share of the owners' total training spend, in
    proportion to the quantity it undertakes; cost is its power factor times
    the undertaken quantity.  A center undertaking nothing earns and pays
    nothing.
    """
    if len(undertakings) != len(centers):
        raise InvalidInputError("one undertaken quantity per center is required")
    if any(d < 0 for d in undertakings):
        raise InvalidInputError("undertaken quantities must be nonnegative")
    total = sum(undertakings)
    if total <= 0:
        raise DegenerateMarketError("no center undertakes any data; shares are undefined")
    d_m = undertakings[m]
    if d_m == 0.0:
        return 0.0
    spend = params.rho * sum(o.chosen_quantity for o in owners)
    return params.lam * (d_m / total) * spend - params.epsilon * centers[m].sigma * d_m


def utility_owner(
    n: int,
    contributions: Sequence[float],
    owners: Sequence[DataOwner],
    eta: float,
    params: MarketParams,
) -> float:
    """Net payoff of owner ``n`` (position in ``owners``) given all contributions.

    Revenue is the owner's share of the model payment in proportion to its
    quality-weighted contribution; cost is the training fee for the raw
    quantity behind that contribution.
    """
    if len(contributions) != len(owners):
        raise InvalidInputError("one contribution per owner is required")
    total = sum(contributions)
    if total <= 0:
        raise DegenerateMarketError("no owner contributes anything; shares are undefined")
    q_n = contributions[n]
    if q_n == 0.0:
        return 0.0
    f_n = owners[n].reported_quality
    if f_n <= 0:
        raise InvalidQualityError(f"owner {owners[n].id}: quality must be positive")
    quantity = q_n / f_n
    return (q_n / total) * eta - params.lam * params.rho * quantity


def utility_server(eta: float, total_quality: float, params: MarketParams) -> float:
    """Net payoff of the model owner: scaled quality payoff minus the payment."""
    if total_quality < 0:
        raise InvalidInputError(f"total quality must be nonnegative, got {total_quality}")
    if eta < 0:
        raise InvalidInputError(f"total payment must be nonnegative, got {eta}")
    return params.alpha * params.model_quality(total_quality) - eta


def quantity_shares(quantities: Sequence[float]) -> list[float]:
    """Proportional weights of each quantity in the global training objective."""
    if any(x < 0 for x in quantities):
        raise InvalidInputError("quantities must be nonnegative")
    total = sum(quantities)
    if total <= 0:
        raise DegenerateMarketError("total quantity is zero; weights are undefined")
    return [x / total for x in quantities]


def evaluate_profile(
    profile: StrategyProfile,
    owners: Sequence[DataOwner],
    centers: Sequence[ComputeCenter],
    params: MarketParams,
) -> UtilityReport:
    """Compute every party's utility under a strategy profile.

    Owners absent from the profile contribute nothing and receive zero
    utility.  Center utilities use the profile's undertakings; centers with no
    planned workload receive zero.
    """
    by_id = {c.owner_id: c for c in profile.contributions}
    total_q = profile.total_quality
    spend = params.rho * profile.total_quantity

    owner_utils: dict[int, float] = {}
    for owner in owners:
        contrib = by_id.get(owner.id)
        if contrib is None or contrib.quality_product == 0.0 or total_q <= 0:
            owner_utils[owner.id] = 0.0
            continue
        share = contrib.quality_product / total_q
        owner_utils[owner.id] = share * profile.eta - params.lam * params.rho * contrib.quantity

    total_d = sum(profile.undertakings.values())
    center_utils: dict[int, float] = {}
    for center in centers:
        d_m = profile.undertakings.get(center.id, 0.0)
        if d_m == 0.0 or total_d <= 0:
            center_utils[center.id] = 0.0
            continue
        revenue = params.lam * (d_m / total_d) * spend
        center_utils[center.id] = revenue - params.epsilon * center.sigma * d_m

    server = utility_server(profile.eta, total_q, params)
    return UtilityReport(server=server, owners=owner_utils, centers=center_utils)


def realized_center_utilities(
    matching: "Matching",
    owner_quantities: Mapping[int, float],
    centers: Sequence[ComputeCenter],
    params: MarketParams,
) -> dict[int, float]:
    """Center utilities once matched, with each center undertaking its owner's quantity.

    Data is never split across centers, so a matched center's realized
    workload is exactly the quantity its owner committed; unmatched centers
    idle at zero.
    """
    realized = {c.id: 0.0 for c in centers}
    for owner_id, center_id in matching.pairs.items():
        realized[center_id] = owner_quantities[owner_id]
    total = sum(realized.values())
    spend = params.rho * sum(owner_quantities[o] for o in matching.pairs)
    sigma_by_id = {c.id: c.sigma for c in centers}
    utilities: dict[int, float] = {}
    for center_id, d_m in realized.items():
        if d_m == 0.0 or total <= 0:
            utilities[center_id] = 0.0
            continue
        revenue = params.lam * (d_m / total) * spend
        utilities[center_id] = revenue - params.epsilon * sigma_by_id[center_id] * d_m
    return utilities
