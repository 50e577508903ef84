"""One-time stable matching of data owners to computing centers.

Owners all rank centers the same way, by power factor descending; each center
ranks owners by how closely their committed quantity fits its planned
workload.  Owner-proposing deferred acceptance then yields the owner-optimal
stable matching.  The matching is performed once and never revised, so that
data moves to exactly one center per owner.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import InvalidInputError
from .market import ComputeCenter


@dataclass(frozen=True)
class PreferenceTables:
    """Both sides' rankings, ready for deferred acceptance.

    ``proposal_order`` is shared by every owner (center ids, most preferred
    first); ``center_rankings`` maps each center id to owner ids ranked by
    quantity fit.  Ties break toward the lower id on both sides.
    """

    proposal_order: tuple[int, ...]
    center_rankings: dict[int, tuple[int, ...]]

    @property
    def owner_ids(self) -> tuple[int, ...]:
        any_ranking = next(iter(self.center_rankings.values()))
        return tuple(sorted(any_ranking))


@dataclass(frozen=True)
class Matching:
    """An injective owner-to-center assignment; centers left over stay idle."""

    pairs: dict[int, int]
    unmatched_centers: tuple[int, ...]
    matched_count: int


def build_preferences(
    owner_quantities: Mapping[int, float],
    centers: Sequence[ComputeCenter],
    center_undertakings: Mapping[int, float],
) -> PreferenceTables:
    """Construct both sides' rankings from committed quantities and workloads."""
    if not owner_quantities:
        raise InvalidInputError("at least one data owner is required")
    if not centers:
        raise InvalidInputError("at least one computing center is required")
    if any(x <= 0 for x in owner_quantities.values()):
        raise InvalidInputError("owner quantities must be positive")
    if any(center_undertakings.get(c.id, 0.0) < 0 for c in centers):
        raise InvalidInputError("center workloads must be nonnegative")

    proposal_order = tuple(c.id for c in sorted(centers, key=lambda c: (-c.sigma, c.id)))
    rankings: dict[int, tuple[int, ...]] = {}
    for center in centers:
        d_m = center_undertakings.get(center.id, 0.0)
        ranked = sorted(owner_quantities, key=lambda oid: (abs(d_m - owner_quantities[oid]), oid))
        rankings[center.id] = tuple(ranked)
    return PreferenceTables(proposal_order=proposal_order, center_rankings=rankings)


def gale_shapley(prefs: PreferenceTables) -> Matching:
    """Owner-proposing deferred acceptance.

    Each free owner proposes to its best center not yet tried; a center holds
    its best proposer so far and releases the loser.  With at least as many
    centers as owners every owner ends up matched.
    """
    owner_ids = sorted(prefs.owner_ids)
    if len(prefs.proposal_order) < len(owner_ids):
        raise InvalidInputError("more owners than centers; matching cannot cover all owners")

    rank = {
        cid: {oid: pos for pos, oid in enumerate(ranking)}
        for cid, ranking in prefs.center_rankings.items()
    }
    next_choice = {oid: 0 for oid in owner_ids}
    holder: dict[int, int] = {}
    free = deque(owner_ids)
    while free:
        owner = free.popleft()
        center = prefs.proposal_order[next_choice[owner]]
        next_choice[owner] += 1
        current = holder.get(center)
        if current is None:
            holder[center] = owner
        elif rank[center][owner] < rank[center][current]:
            holder[center] = owner
            free.append(current)
        else:
            free.append(owner)

    pairs = {owner: center for center, owner in holder.items()}
    unmatched = tuple(sorted(set(prefs.proposal_order) - set(holder)))
    return Matching(pairs=pairs, unmatched_centers=unmatched, matched_count=len(pairs))


def is_stable(matching: Matching, prefs: PreferenceTables) -> list[tuple[int, int]]:
    """All blocking pairs: owner and center who both strictly prefer each other.

    An idle center prefers any owner to none.  An empty result means the
    matching is stable.
    """
    order_pos = {cid: pos for pos, cid in enumerate(prefs.proposal_order)}
    rank = {
        cid: {oid: pos for pos, oid in enumerate(ranking)}
        for cid, ranking in prefs.center_rankings.items()
    }
    held_by = {center: owner for owner, center in matching.pairs.items()}

    blocking: list[tuple[int, int]] = []
    for owner in sorted(matching.pairs):
        assigned = matching.pairs[owner]
        for center in prefs.proposal_order:
            if center == assigned:
                continue
            if order_pos[center] >= order_pos[assigned]:
                continue
            current = held_by.get(center)
            if current is None or rank[center][owner] < rank[center][current]:
                blocking.append((owner, center))
    return blocking
