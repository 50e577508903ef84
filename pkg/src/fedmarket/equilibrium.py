"""Closed-form leader/follower equilibrium solver with grid-search verification.

The game is solved back to front: each center's workload is a best response to
the owners' total spend, each owner's contribution is a best response to the
announced payment and the other owners, and the payment itself maximizes the
model owner's payoff given those responses.  All three layers admit closed
forms; ``verify_sne`` independently checks the result against dense deviation
grids.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import (
    InsufficientCentersError,
    InsufficientParticipantsError,
    InvalidInputError,
    NoViableMarketError,
)
from .market import (
    ComputeCenter,
    DataOwner,
    MarketParams,
    OwnerContribution,
    StrategyProfile,
    evaluate_profile,
)

# Owners solved just above capacity are pinned to the open-interval boundary.
CAPACITY_MARGIN = 1e-9


@dataclass(frozen=True)
class SolverIntermediates:
    """Quantities shared by the owner-side closed forms.

    inv_quality_sum  -- sum of reciprocal qualities over the active owners
    response_coeffs  -- per-owner slope of the best response in the payment
    coeff_total      -- sum of those slopes
    participants     -- ids of owners with a strictly positive best response
    """

    inv_quality_sum: float
    response_coeffs: dict[int, float]
    coeff_total: float
    participants: tuple[int, ...]


@dataclass(frozen=True)
class DroppedOwner:
    owner_id: int
    reason: str


@dataclass(frozen=True)
class SneSolution:
    """Solved strategy profile plus the bookkeeping behind it."""

    profile: StrategyProfile
    intermediates: SolverIntermediates
    dropped_owners: tuple[DroppedOwner, ...] = ()
    capped_owners: tuple[int, ...] = ()
    idle_centers: tuple[int, ...] = ()
    capped_centers: tuple[int, ...] = ()


@dataclass(frozen=True)
class VerificationReport:
    """Largest unilateral-deviation gain found for each party on a grid."""

    payment_gain: float
    owner_gains: dict[int, float]
    center_gains: dict[int, float]
    grid_steps: int

    @property
    def max_gain(self) -> float:
        gains = [self.payment_gain]
        gains.extend(self.owner_gains.values())
        gains.extend(self.center_gains.values())
        return max(gains)

    def passed(self, tolerance: float) -> bool:
        return self.max_gain < tolerance


def inverse_quality_sum(owners: Sequence[DataOwner]) -> float:
    return sum(1.0 / o.reported_quality for o in owners)


def response_coefficient(n: int, owners: Sequence[DataOwner], params: MarketParams) -> float:
    """Slope of owner ``n``'s best-response contribution in the announced payment.

    The coefficient is negative when the owner's quality is too far below the
    group's; such owners are not willing to contribute at any payment level.
    """
    count = len(owners)
    if count < 2:
        raise InsufficientParticipantsError("at least two data owners are required")
    s = inverse_quality_sum(owners)
    f_n = owners[n].reported_quality
    lead = (count - 1) / (params.lam * params.rho * s)
    return lead * (1.0 - (count - 1) / (f_n * s))


def best_response_quality(
    n: int, owners: Sequence[DataOwner], eta: float, params: MarketParams
) -> float:
    """Owner ``n``'s contribution that maximizes its payoff at payment ``eta``.

    May be negative for low-quality owners; callers decide participation.
    """
    if eta < 0:
        raise InvalidInputError(f"payment must be nonnegative, got {eta}")
    return eta * response_coefficient(n, owners, params)


def nash_total_quality(eta: float, owners: Sequence[DataOwner], params: MarketParams) -> float:
    """Total contribution when every owner plays its best response at payment ``eta``."""
    count = len(owners)
    if count < 2:
        raise InsufficientParticipantsError("at least two data owners are required")
    if eta < 0:
        raise InvalidInputError(f"payment must be nonnegative, got {eta}")
    denom = sum(params.lam * params.rho / o.reported_quality for o in owners)
    return (count - 1) * eta / denom


def optimal_payment(owners: Sequence[DataOwner], params: MarketParams) -> float:
    """The payment maximizing the model owner's payoff against best-responding owners.

    Clamped at zero: when the quality payoff cannot cover the payment the
    model owner stays out of the market.
    """
    if len(owners) < 2:
        raise InsufficientParticipantsError("at least two data owners are required")
    coeff_total = sum(response_coefficient(n, owners, params) for n in range(len(owners)))
    if coeff_total <= 0:
        raise NoViableMarketError("owners' aggregate response slope is nonpositive")
    return max(0.0, params.alpha - 1.0 / coeff_total)


def optimal_undertaking(
    m: int, centers: Sequence[ComputeCenter], total_spend: float, params: MarketParams
) -> float:
    """Center ``m``'s workload that maximizes its payoff, clamped at zero.

    The raw closed form is negative when the center's power factor is too far
    above the group's; undertaking nothing is then its best feasible choice.
    """
    count = len(centers)
    if count < 2:
        raise InsufficientCentersError("at least two computing centers are required")
    if total_spend < 0:
        raise InvalidInputError(f"total spend must be nonnegative, got {total_spend}")
    sigma_sum = sum(c.sigma for c in centers)
    lead = params.lam * (count - 1) * total_spend / (params.epsilon * sigma_sum)
    raw = lead * (1.0 - centers[m].sigma * (count - 1) / sigma_sum)
    return max(0.0, raw)


def _prune_owners(
    owners: Sequence[DataOwner], params: MarketParams
) -> tuple[list[DataOwner], list[float], list[DroppedOwner]]:
    """Fixed-point pruning of the owner game's participant set.

    Owners below the quality threshold are screened out, then owners whose
    response slope is nonpositive are dropped and the reduced game re-solved
    until every retained slope is strictly positive.  Participation depends
    only on the qualities, not on the payment, and dropping is
    self-consistent: a dropped owner would not re-enter the reduced game.
    """
    dropped: list[DroppedOwner] = []
    active = []
    for owner in owners:
        if owner.reported_quality < params.xi:
            dropped.append(DroppedOwner(owner.id, "reported quality below threshold"))
        else:
            active.append(owner)

    while True:
        if len(active) < 2:
            raise NoViableMarketError(
                f"only {len(active)} viable data owner(s) remain after pruning"
            )
        coeffs = [response_coefficient(n, active, params) for n in range(len(active))]
        keep, cut = [], []
        for owner, t in zip(active, coeffs):
            (keep if t > 0 else cut).append(owner)
        if not cut:
            break
        dropped.extend(DroppedOwner(o.id, "nonpositive best response") for o in cut)
        active = keep
    return active, coeffs, dropped


def _solve_owner_side(
    owners: Sequence[DataOwner], params: MarketParams
) -> tuple[float, dict[int, float], SolverIntermediates, list[DroppedOwner]]:
    """Prune to the self-consistent participant set and optimize the payment on it."""
    active, coeffs, dropped = _prune_owners(owners, params)
    coeff_total = sum(coeffs)
    eta = max(0.0, params.alpha - 1.0 / coeff_total)
    if eta == 0.0:
        raise NoViableMarketError(
            "the quality payoff cannot cover any payment; the market does not open"
        )
    responses = [eta * t for t in coeffs]

    quality = {o.id: q for o, q in zip(active, responses)}
    intermediates = SolverIntermediates(
        inv_quality_sum=inverse_quality_sum(active),
        response_coeffs={o.id: t for o, t in zip(active, coeffs)},
        coeff_total=coeff_total,
        participants=tuple(o.id for o in active),
    )
    return eta, quality, intermediates, dropped


def _solve_center_side(
    centers: Sequence[ComputeCenter], total_spend: float, params: MarketParams
) -> tuple[dict[int, float], list[int]]:
    """Closed-form center workloads with zero-pinning.

    Centers whose raw closed form is nonpositive are pinned at zero and the
    reduced game re-solved; the pinned centers provably have no incentive to
    re-enter, so the resulting workloads form a mutual best response.
    """
    active = list(centers)
    idle: list[int] = []
    while True:
        if len(active) < 2:
            # Unreachable for two or more centers: the reduced game never
            # pins its last two members.  Guarded for malformed inputs.
            raise InsufficientCentersError("center game reduced below two participants")
        values = [optimal_undertaking(m, active, total_spend, params) for m in range(len(active))]
        keep = [c for c, d in zip(active, values) if d > 0]
        cut = [c for c, d in zip(active, values) if d <= 0]
        if not cut or total_spend == 0:
            break
        idle.extend(c.id for c in cut)
        active = keep
    undertakings = {c.id: 0.0 for c in centers}
    undertakings.update({c.id: d for c, d in zip(active, values)})
    return undertakings, sorted(idle)


def solve_sne(
    owners: Sequence[DataOwner], centers: Sequence[ComputeCenter], params: MarketParams
) -> SneSolution:
    """Solve the full game: payment, then contributions, then center workloads.

    Owner quantities are clipped just below capacity when the interior
    solution exceeds the pool; centers likewise.  Raises
    ``NoViableMarketError`` when pruning leaves fewer than two active owners
    (in particular when the best payment is zero and nobody contributes).
    """
    if len(owners) < 2:
        raise InsufficientParticipantsError("at least two data owners are required")
    if len(centers) < len(owners):
        raise InsufficientCentersError(
            f"{len(centers)} centers cannot host {len(owners)} data owners"
        )

    eta, quality_by_id, intermediates, dropped = _solve_owner_side(owners, params)

    contributions = []
    capped = []
    for owner in owners:
        if owner.id not in quality_by_id:
            continue
        q_n = quality_by_id[owner.id]
        x_n = q_n / owner.reported_quality
        was_capped = False
        if x_n >= owner.capacity:
            x_n = owner.capacity * (1.0 - CAPACITY_MARGIN)
            q_n = owner.reported_quality * x_n
            was_capped = True
            capped.append(owner.id)
        contributions.append(OwnerContribution(owner.id, q_n, x_n, capped=was_capped))

    total_spend = params.rho * sum(c.quantity for c in contributions)
    undertakings, idle = _solve_center_side(centers, total_spend, params)

    capped_centers = []
    for center in centers:
        if undertakings[center.id] > center.capacity:
            undertakings[center.id] = center.capacity
            capped_centers.append(center.id)

    profile = StrategyProfile(eta=eta, contributions=tuple(contributions), undertakings=undertakings)
    profile.utilities = evaluate_profile(profile, owners, centers, params)
    return SneSolution(
        profile=profile,
        intermediates=intermediates,
        dropped_owners=tuple(dropped),
        capped_owners=tuple(capped),
        idle_centers=tuple(idle),
        capped_centers=tuple(capped_centers),
    )


def resolve_contributions(
    solution: SneSolution, owners: Sequence[DataOwner], eta: float, params: MarketParams
) -> dict[int, float]:
    """Contributions of the solution's participants at an arbitrary payment level."""
    if eta < 0:
        raise InvalidInputError(f"payment must be nonnegative, got {eta}")
    return {oid: eta * t for oid, t in solution.intermediates.response_coeffs.items()}


def verify_sne(
    solution: SneSolution,
    owners: Sequence[DataOwner],
    centers: Sequence[ComputeCenter],
    params: MarketParams,
    grid_steps: int = 10_000,
    tolerance: float = 1e-5,
) -> VerificationReport:
    """Check the no-profitable-deviation inequalities on dense grids.

    For the model owner the grid spans payments with contributions re-solved
    per point; for each owner and center the grid spans its own strategy with
    everyone else held at the solved profile.  Gains are reported rather than
    raised so callers can inspect near-misses.
    """
    if grid_steps < 100:
        raise InvalidInputError(f"at least 100 grid steps are required, got {grid_steps}")
    profile = solution.profile
    eta_star = profile.eta
    coeff_total = solution.intermediates.coeff_total
    owners_by_id = {o.id: o for o in owners}

    def server_payoff(etas: np.ndarray) -> np.ndarray:
        return params.alpha * np.log1p(coeff_total * etas) - etas

    hi = 2.0 * eta_star if eta_star > 0 else 2.0 * params.alpha
    grid = np.linspace(0.0, hi, grid_steps)
    payment_gain = float(np.max(server_payoff(grid)) - server_payoff(np.array([eta_star]))[0])

    total_q = profile.total_quality
    owner_gains: dict[int, float] = {}
    for contrib in profile.contributions:
        owner = owners_by_id[contrib.owner_id]
        f_n = owner.reported_quality
        others = total_q - contrib.quality_product
        hi = 2.0 * contrib.quality_product
        if np.isfinite(owner.capacity):
            hi = min(hi, f_n * owner.capacity * (1.0 - CAPACITY_MARGIN))
        qs = np.linspace(0.0, hi, grid_steps)
        payoff = qs / (qs + others) * eta_star - params.lam * params.rho * qs / f_n
        current = (
            contrib.quality_product / total_q * eta_star
            - params.lam * params.rho * contrib.quantity
        )
        owner_gains[owner.id] = float(np.max(payoff) - current)

    spend = params.rho * profile.total_quantity
    total_d = sum(profile.undertakings.values())
    center_gains: dict[int, float] = {}
    for center in centers:
        d_m = profile.undertakings.get(center.id, 0.0)
        others = total_d - d_m
        if d_m > 0:
            hi = 2.0 * d_m
        else:
            # Beyond spend/(eps*sigma) the cost alone exceeds all possible revenue.
            hi = params.lam * spend / (params.epsilon * center.sigma)
        if hi <= 0 or others <= 0:
            center_gains[center.id] = 0.0
            continue
        ds = np.linspace(0.0, hi, grid_steps)
        payoff = params.lam * ds / (ds + others) * spend - params.epsilon * center.sigma * ds
        current = (
            params.lam * d_m / (d_m + others) * spend - params.epsilon * center.sigma * d_m
            if d_m > 0
            else 0.0
        )
        center_gains[center.id] = float(np.max(payoff) - current)

    return VerificationReport(
        payment_gain=payment_gain,
        owner_gains=owner_gains,
        center_gains=center_gains,
        grid_steps=grid_steps,
    )


def active_owner_subset(
    owners: Sequence[DataOwner], params: MarketParams
) -> tuple[list[DataOwner], SolverIntermediates]:
    """The self-consistent participant set, independent of the payment level.

    Whether an owner participates depends only on the sign of its response
    slope, so baselines that impose an arbitrary payment share this set with
    the optimal strategy.
    """
    active, coeffs, _ = _prune_owners(owners, params)
    intermediates = SolverIntermediates(
        inv_quality_sum=inverse_quality_sum(active),
        response_coeffs={o.id: t for o, t in zip(active, coeffs)},
        coeff_total=sum(coeffs),
        participants=tuple(o.id for o in active),
    )
    return active, intermediates
