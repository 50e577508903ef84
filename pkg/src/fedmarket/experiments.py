"""Experiment drivers behind the CLI subcommands.

Every driver is deterministic given its config: instances, baseline payments,
and training runs all derive their generators from the config seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, realize_instance
from .equilibrium import (
    SneSolution,
    VerificationReport,
    active_owner_subset,
    solve_sne,
    verify_sne,
)
from .errors import InvalidInputError, NoViableMarketError
from .market import (
    ComputeCenter,
    DataOwner,
    MarketParams,
    realized_center_utilities,
    utility_server,
)
from .matching import Matching, build_preferences, gale_shapley, is_stable
from .report import SweepResult
from .training import RunHistory, generate_owner_data, run_federated

STRATEGIES = ("optimal", "fixed", "random")


def _metadata(config: ExperimentConfig, command: str) -> dict[str, str]:
    return {
        "command": command,
        "scenario": config.scenario,
        "seed": str(config.seed),
        "config": config.config_hash,
    }


@dataclass
class SolveOutput:
    owners: list[DataOwner]
    centers: list[ComputeCenter]
    solution: SneSolution
    verification: VerificationReport
    table: SweepResult


def run_solve(config: ExperimentConfig) -> SolveOutput:
    """Solve one instance, verify it on deviation grids, and tabulate the profile."""
    owners, centers = realize_instance(config)
    solution = solve_sne(owners, centers, config.market)
    verification = verify_sne(solution, owners, centers, config.market)
    report = solution.profile.utilities

    rows: list[tuple] = []
    contributions = {c.owner_id: c for c in solution.profile.contributions}
    for owner in owners:
        contrib = contributions.get(owner.id)
        rows.append(
            (
                "owner",
                owner.id,
                owner.reported_quality,
                contrib.quality_product if contrib else 0.0,
                contrib.quantity if contrib else 0.0,
                report.owners[owner.id],
            )
        )
    for center in centers:
        rows.append(
            (
                "center",
                center.id,
                center.sigma,
                solution.profile.undertakings[center.id],
                solution.profile.undertakings[center.id],
                report.centers[center.id],
            )
        )
    rows.append(("server", 0, config.market.alpha, solution.profile.total_quality,
                 solution.profile.eta, report.server))
    table = SweepResult(
        columns=("party", "id", "parameter", "contribution", "quantity", "utility"),
        rows=rows,
        metadata=_metadata(config, "solve"),
    )
    return SolveOutput(owners, centers, solution, verification, table)


@dataclass
class MatchOutput:
    matching: Matching
    blocking_pairs: list[tuple[int, int]]
    table: SweepResult


def run_match(config: ExperimentConfig) -> MatchOutput:
    """Match owners to centers, from solved strategies or explicit quantity columns."""
    owners, centers = realize_instance(config)
    if config.match_owner_quantities is not None and config.match_center_undertakings is not None:
        quantities = {o.id: q for o, q in zip(owners, config.match_owner_quantities)}
        undertakings = {c.id: d for c, d in zip(centers, config.match_center_undertakings)}
    else:
        solution = solve_sne(owners, centers, config.market)
        quantities = {c.owner_id: c.quantity for c in solution.profile.contributions}
        undertakings = solution.profile.undertakings

    prefs = build_preferences(quantities, centers, undertakings)
    matching = gale_shapley(prefs)
    blocking = is_stable(matching, prefs)
    realized = realized_center_utilities(matching, quantities, centers, config.market)

    sigma_by_id = {c.id: c.sigma for c in centers}
    rows = [
        (
            owner_id,
            center_id,
            sigma_by_id[center_id],
            undertakings[center_id],
            quantities[owner_id],
            realized[center_id],
        )
        for owner_id, center_id in sorted(matching.pairs.items())
    ]
    table = SweepResult(
        columns=("owner", "center", "sigma", "planned_workload", "quantity", "center_utility"),
        rows=rows,
        metadata=_metadata(config, "match"),
    )
    return MatchOutput(matching=matching, blocking_pairs=blocking, table=table)


def _owner_utilities_at(
    intermediates, owners: Sequence[DataOwner], eta: float, params: MarketParams
) -> dict[int, float]:
    """Closed-form owner utilities when everyone best-responds to payment ``eta``."""
    coeff_total = intermediates.coeff_total
    quality = {o.id: o.reported_quality for o in owners}
    utilities = {o.id: 0.0 for o in owners}
    for oid, t in intermediates.response_coeffs.items():
        utilities[oid] = eta * t * (1.0 / coeff_total - params.lam * params.rho / quality[oid])
    return utilities


def run_sweep_eta(config: ExperimentConfig) -> SweepResult:
    """Model-owner payoff across payment levels, owners best-responding per point."""
    owners, _ = realize_instance(config)
    params = config.market
    active, intermediates = active_owner_subset(owners, params)
    coeff_total = intermediates.coeff_total
    eta_star = max(0.0, params.alpha - 1.0 / coeff_total)

    low = config.sweep.low if config.sweep.low is not None else 0.0
    high = config.sweep.high if config.sweep.high is not None else (
        2.0 * eta_star if eta_star > 0 else 2.0 * params.alpha
    )
    rows = []
    for eta in np.linspace(low, high, config.sweep.steps):
        eta = float(eta)
        total_q = coeff_total * eta
        u_s = utility_server(eta, total_q, params)
        owner_utils = _owner_utilities_at(intermediates, owners, eta, params)
        rows.append((eta, u_s, sum(owner_utils.values()) / len(owners)))
    metadata = _metadata(config, "sweep-eta")
    metadata["optimal_payment"] = format(eta_star, ".17g")
    return SweepResult(
        columns=("payment", "server_utility", "mean_owner_utility"), rows=rows, metadata=metadata
    )


def run_sweep_owner(config: ExperimentConfig) -> SweepResult:
    """One owner's payoff across its quantity, everyone else at the solved profile."""
    owners, centers = realize_instance(config)
    params = config.market
    solution = solve_sne(owners, centers, params)
    target = config.sweep.owner
    contrib = solution.profile.contribution_for(target)
    if contrib is None:
        raise InvalidInputError(f"owner {target} does not participate in the solved profile")
    quality = next(o.reported_quality for o in owners if o.id == target)
    others_q = solution.profile.total_quality - contrib.quality_product
    eta = solution.profile.eta

    low = config.sweep.low if config.sweep.low is not None else 0.0
    high = config.sweep.high if config.sweep.high is not None else 2.0 * contrib.quantity
    rows = []
    for x in np.linspace(low, high, config.sweep.steps):
        x = float(x)
        q = quality * x
        u_n = 0.0 if q == 0 else q / (q + others_q) * eta - params.lam * params.rho * x
        rows.append((x, u_n))
    metadata = _metadata(config, "sweep-owner")
    metadata["optimal_quantity"] = format(contrib.quantity, ".17g")
    metadata["owner"] = str(target)
    return SweepResult(columns=("quantity", "owner_utility"), rows=rows, metadata=metadata)


def run_deviation(config: ExperimentConfig) -> SweepResult:
    """Re-solve the market while selected owners misreport their quality.

    Utilities are the nominal ones the mechanism pays out, so they show what a
    misreporting owner stands to gain before realized quality catches up.
    """
    owners, centers = realize_instance(config)
    params = config.market
    deviators = config.deviation.owners
    columns = ["ratio", "server_utility"] + [f"owner_{oid}_utility" for oid in deviators]
    rows = []
    for ratio in np.linspace(config.deviation.low, config.deviation.high, config.deviation.steps):
        ratio = float(ratio)
        reported = []
        for owner in owners:
            if owner.id in deviators:
                f_hat = min(1.0, max(1e-9, owner.reported_quality * (1.0 + ratio)))
                reported.append(replace(owner, reported_quality=f_hat))
            else:
                reported.append(replace(owner))
        solution = solve_sne(reported, centers, params)
        utilities = solution.profile.utilities
        rows.append(
            (ratio, utilities.server, *[utilities.owners[oid] for oid in deviators])
        )
    return SweepResult(columns=tuple(columns), rows=rows, metadata=_metadata(config, "deviate"))


def _strategy_outcome(
    owners: Sequence[DataOwner], params: MarketParams, eta: float | None
) -> tuple[float, float]:
    """(server utility, mean owner utility) for a given payment, or the optimal one.

    A market that cannot open scores zero for everyone; an imposed payment on
    such a market still buys contributions but at a loss to the model owner.
    """
    try:
        _, intermediates = active_owner_subset(owners, params)
    except NoViableMarketError:
        return 0.0, 0.0
    coeff_total = intermediates.coeff_total
    if eta is None:
        eta = max(0.0, params.alpha - 1.0 / coeff_total)
    if eta == 0.0:
        return 0.0, 0.0
    u_s = utility_server(eta, coeff_total * eta, params)
    owner_utils = _owner_utilities_at(intermediates, owners, eta, params)
    return u_s, sum(owner_utils.values()) / len(owners)


def run_compare(config: ExperimentConfig) -> SweepResult:
    """Optimal payment vs fixed and random baselines over shared seeded draws."""
    params = config.market
    spec = config.strategy
    rows = []
    for n in config.compare.n_values:
        shared = replace(config, n_owners=n, n_centers=max(n, config.n_centers))
        for run in range(config.compare.runs):
            instance_seed = [config.seed, n, run]
            owners, _ = realize_instance(shared, seed=instance_seed)
            eta_random = float(
                np.random.default_rng([config.seed, n, run, 1]).uniform(
                    spec.random_low, spec.random_high
                )
            )
            for strategy, eta in (
                ("optimal", None),
                ("fixed", spec.fixed_eta),
                ("random", eta_random),
            ):
                u_s, u_n = _strategy_outcome(owners, params, eta)
                rows.append((n, run, strategy, u_s, u_n))
    return SweepResult(
        columns=("n_owners", "run", "strategy", "server_utility", "mean_owner_utility"),
        rows=rows,
        metadata=_metadata(config, "compare"),
    )


@dataclass
class SimulateOutput:
    history: RunHistory
    matching: Matching
    table: SweepResult


def _build_training_setup(
    config: ExperimentConfig,
    owners: list[DataOwner],
    centers: list[ComputeCenter],
    true_qualities: dict[int, float],
):
    """Solve, match, and generate pools sized to each owner's capacity."""
    params = config.market
    solution = solve_sne(owners, centers, params)
    quantities = {c.owner_id: c.quantity for c in solution.profile.contributions}
    prefs = build_preferences(quantities, centers, solution.profile.undertakings)
    matching = gale_shapley(prefs)

    if not math.isfinite(config.owner_capacity):
        raise InvalidInputError(
            "training runs need a finite owners.capacity to size the data pools"
        )
    datasets = {}
    for owner in owners:
        if owner.id not in quantities:
            continue
        noise = math.sqrt(max(0.0, 1.0 - true_qualities[owner.id]))
        datasets[owner.id] = generate_owner_data(
            seed=config.seed,
            owner=owner,
            noise_intensity=noise,
            samples=int(config.owner_capacity),
            dims=config.data.dims,
            classes=config.data.classes,
        )
    return solution, matching, datasets


def run_simulate(config: ExperimentConfig) -> SimulateOutput:
    """Full pipeline: solve, match, train with the mid-run adjustment enabled."""
    owners, centers = realize_instance(config)
    true_qualities = {o.id: o.reported_quality for o in owners}
    solution, matching, datasets = _build_training_setup(config, owners, centers, true_qualities)
    history = run_federated(
        solution, owners, centers, matching, datasets, config.trainer, config.market,
        seed=config.seed,
    )
    rows = []
    for record in history.rounds:
        for client in record.clients:
            rows.append(
                (
                    record.round,
                    client.center_id,
                    client.owner_id,
                    client.loss_start,
                    client.loss_end,
                    client.quality_delta,
                    record.global_loss,
                )
            )
    table = SweepResult(
        columns=(
            "round", "center", "owner", "loss_start", "loss_end", "quality_delta", "global_loss",
        ),
        rows=rows,
        metadata=_metadata(config, "simulate"),
    )
    return SimulateOutput(history=history, matching=matching, table=table)


def run_ablate(config: ExperimentConfig) -> SweepResult:
    """A/B the dynamic adjustment against always trusting reported quality.

    A fixed fraction of owners over-reports; both runs share every draw, so
    the only difference is whether realized quality replaces the reports.
    """
    params = config.market
    rows = []
    adjusted_cfg = config.trainer
    if adjusted_cfg.adjust_round is None:
        raise InvalidInputError("ablation needs trainer.adjust_round set")
    plain_cfg = replace(adjusted_cfg, adjust_round=None)

    n_liars = int(round(config.ablate.over_report_fraction * config.n_owners))
    for seed_index in range(config.ablate.seeds):
        instance_seed = [config.seed, seed_index]
        base_owners, centers = realize_instance(config, seed=instance_seed)
        true_qualities = {o.id: o.reported_quality for o in base_owners}
        liar_ids = set(
            int(oid)
            for oid in np.random.default_rng([config.seed, seed_index, 2]).choice(
                [o.id for o in base_owners], size=n_liars, replace=False
            )
        )
        reported = [
            replace(
                o,
                reported_quality=min(1.0, o.reported_quality * (1.0 + config.ablate.over_report_ratio))
                if o.id in liar_ids
                else o.reported_quality,
            )
            for o in base_owners
        ]
        final_losses = {}
        for label, trainer_cfg in (("adjusted", adjusted_cfg), ("reported_only", plain_cfg)):
            run_config = replace(config, trainer=trainer_cfg, seed=config.seed)
            owners_copy = [replace(o) for o in reported]
            solution, matching, datasets = _build_training_setup(
                run_config, owners_copy, centers, true_qualities
            )
            history = run_federated(
                solution, owners_copy, centers, matching, datasets, trainer_cfg, params,
                seed=config.seed + seed_index,
            )
            final_losses[label] = history.rounds[-1].global_loss
        rows.append(
            (
                seed_index,
                sorted(liar_ids),
                final_losses["adjusted"],
                final_losses["reported_only"],
                final_losses["adjusted"] <= final_losses["reported_only"],
            )
        )
    wins = sum(1 for row in rows if row[4])
    metadata = _metadata(config, "ablate")
    metadata["adjusted_wins"] = f"{wins}/{len(rows)}"
    return SweepResult(
        columns=("seed", "over_reporters", "adjusted_loss", "reported_only_loss", "adjusted_wins"),
        rows=[(r[0], "|".join(map(str, r[1])), r[2], r[3], r[4]) for r in rows],
        metadata=metadata,
    )
