"""Simulated federated training over synthetic per-owner datasets.

Each owner holds a pool of class-blob samples whose feature noise controls an
initial data quality of one minus the mean squared perturbation.  Matched
centers run local updates on a shared model, record the training-loss drop of
every round as the realized quality signal, and the coordinator aggregates,
re-solves strategies once mid-run, and logs everything into a run history.

Two trainers are available: a multinomial logistic model trained by
full-batch gradient descent, and an analytic stand-in whose loss follows a
closed-form exponential decay in round index and data quality (useful for
exact tests).
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, TrainingDivergenceError
from .market import ComputeCenter, DataOwner, MarketParams, quantity_shares
from .matching import Matching

if TYPE_CHECKING:
    from .dynamics import PaymentEntry, PaymentLedger, QualityAssessment
    from .equilibrium import SneSolution

logger = logging.getLogger(__name__)

AGGREGATION_MODES = ("unweighted", "weighted")
TRAINER_KINDS = ("gradient", "analytic")


@dataclass(frozen=True)
class OwnerDataset:
    """A pool of labeled samples with a measured initial quality.

    Features are normalized to [0, 1] per dimension before Gaussian noise is
    applied, so the mean squared perturbation is comparable across owners and
    ``initial_quality = 1 - MSE(noisy, clean)`` lands in [0, 1] for any
    reasonable noise level.
    """

    owner_id: int
    features: np.ndarray
    labels: np.ndarray
    noise_intensity: float
    initial_quality: float
    n_classes: int

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices: np.ndarray) -> "OwnerDataset":
        return OwnerDataset(
            owner_id=self.owner_id,
            features=self.features[indices],
            labels=self.labels[indices],
            noise_intensity=self.noise_intensity,
            initial_quality=self.initial_quality,
            n_classes=self.n_classes,
        )


@dataclass(frozen=True)
class ModelState:
    """Flat parameter vector of the shared model and the round it came from."""

    weights: np.ndarray
    round: int = 0


@dataclass(frozen=True)
class TrainerConfig:
    """Knobs of the simulated training loop.

    ``adjust_round`` is the single round after which realized qualities
    replace reported ones and strategies are re-solved; ``None`` disables the
    adjustment entirely.
    """

    rounds: int = 10
    local_epochs: int = 3
    learning_rate: float = 0.01
    adjust_round: int | None = 3
    aggregation: str = "unweighted"
    trainer_kind: str = "gradient"
    analytic_base_loss: float = 1.0
    analytic_decay: float = 1.0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise InvalidInputError(f"at least one round is required, got {self.rounds}")
        if self.local_epochs < 1:
            raise InvalidInputError(f"at least one local epoch is required, got {self.local_epochs}")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be positive")
        if self.adjust_round is not None and not 1 <= self.adjust_round <= self.rounds:
            raise InvalidInputError(
                f"adjustment round {self.adjust_round} outside [1, {self.rounds}]"
            )
        if self.aggregation not in AGGREGATION_MODES:
            raise InvalidInputError(f"unknown aggregation mode {self.aggregation!r}")
        if self.trainer_kind not in TRAINER_KINDS:
            raise InvalidInputError(f"unknown trainer kind {self.trainer_kind!r}")
        if not self.analytic_base_loss > 0 or not self.analytic_decay > 0:
            raise InvalidInputError("analytic loss constants must be positive")


@dataclass(frozen=True)
class ClientRecord:
    """One center's contribution to a round: updated weights and loss bracket."""

    center_id: int
    owner_id: int
    weights: np.ndarray
    loss_start: float
    loss_end: float
    quality_delta: float


@dataclass(frozen=True)
class RoundRecord:
    round: int
    clients: tuple[ClientRecord, ...]
    global_loss: float
    payments: tuple["PaymentEntry", ...] = ()


@dataclass
class RunHistory:
    """Everything a federated run produced, a pure function of its inputs."""

    rounds: list[RoundRecord] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    final_model: ModelState | None = None
    ledger: "PaymentLedger | None" = None
    initial_solution: "SneSolution | None" = None
    adjusted_solution: "SneSolution | None" = None
    assessment: "QualityAssessment | None" = None


def generate_owner_data(
    seed: int,
    owner: DataOwner,
    noise_intensity: float,
    samples: int,
    dims: int = 10,
    classes: int = 3,
) -> OwnerDataset:
    """Draw a class-blob dataset for one owner, deterministic in (seed, owner id).

    All owners under one seed share the same class geometry (one global task);
    the per-owner draw controls which samples they hold and how noisy their
    features are.
    """
    if samples < 1:
        raise InvalidInputError(f"at least one sample is required, got {samples}")
    if classes < 2:
        raise InvalidInputError(f"at least two classes are required, got {classes}")
    if noise_intensity < 0:
        raise InvalidInputError("noise intensity must be nonnegative")

    task_rng = np.random.default_rng([seed, 0])
    centers = task_rng.uniform(0.0, 1.0, size=(classes, dims))
    rng = np.random.default_rng([seed, owner.id])
    labels = rng.permutation(np.arange(samples) % classes)
    clean = centers[labels] + rng.normal(0.0, 0.08, size=(samples, dims))

    lo = clean.min(axis=0)
    span = clean.max(axis=0) - lo
    span[span < 1e-12] = 1.0
    clean = (clean - lo) / span

    noisy = clean + rng.normal(0.0, noise_intensity, size=clean.shape)
    mse = float(np.mean((noisy - clean) ** 2))
    quality = 1.0 - mse
    if quality < 0.0:
        logger.warning("owner %d: noise drove MSE above 1; quality clamped to 0", owner.id)
        quality = 0.0
    return OwnerDataset(
        owner_id=owner.id,
        features=noisy,
        labels=labels,
        noise_intensity=noise_intensity,
        initial_quality=quality,
        n_classes=classes,
    )


def initial_model(dims: int, classes: int) -> ModelState:
    """Zero-initialized multinomial model (one weight row plus bias per class)."""
    return ModelState(weights=np.zeros(classes * (dims + 1)), round=0)


def _design_matrix(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def local_loss(weights: np.ndarray, dataset: OwnerDataset) -> float:
    """Mean cross-entropy of the multinomial model on one dataset."""
    x = _design_matrix(dataset.features)
    w = weights.reshape(dataset.n_classes, x.shape[1])
    log_probs = _log_softmax(x @ w.T)
    return float(-np.mean(log_probs[np.arange(len(dataset)), dataset.labels]))


def local_gradient(weights: np.ndarray, dataset: OwnerDataset) -> np.ndarray:
    """Gradient of ``local_loss`` with respect to the flat weights."""
    x = _design_matrix(dataset.features)
    w = weights.reshape(dataset.n_classes, x.shape[1])
    probs = np.exp(_log_softmax(x @ w.T))
    probs[np.arange(len(dataset)), dataset.labels] -= 1.0
    return (probs.T @ x / len(dataset)).ravel()


def analytic_loss(config: TrainerConfig, quality: float, t: float) -> float:
    """Closed-form loss curve: exponential decay in time scaled by data quality."""
    return config.analytic_base_loss * math.exp(-config.analytic_decay * quality * t)


@dataclass(frozen=True)
class ClientUpdate:
    weights: np.ndarray
    loss_start: float
    loss_end: float
    quality_delta: float


def client_update(dataset: OwnerDataset, model: ModelState, config: TrainerConfig) -> ClientUpdate:
    """Run one center's local epochs and report the loss drop they achieved.

    The loss bracket spans the whole round: before the first local epoch and
    after the last.
    """
    if len(dataset) == 0:
        raise InvalidInputError(f"owner {dataset.owner_id}: dataset is empty")

    if config.trainer_kind == "analytic":
        loss_start = analytic_loss(config, dataset.initial_quality, model.round)
        loss_end = analytic_loss(config, dataset.initial_quality, model.round + 1)
        weights = model.weights
    else:
        weights = model.weights.copy()
        loss_start = local_loss(weights, dataset)
        for _ in range(config.local_epochs):
            weights -= config.learning_rate * local_gradient(weights, dataset)
        loss_end = local_loss(weights, dataset)

    if not (math.isfinite(loss_start) and math.isfinite(loss_end)):
        raise TrainingDivergenceError(
            f"owner {dataset.owner_id}: non-finite loss ({loss_start}, {loss_end})"
        )
    return ClientUpdate(
        weights=weights,
        loss_start=loss_start,
        loss_end=loss_end,
        quality_delta=loss_start - loss_end,
    )


def aggregate(
    local_weights: Sequence[np.ndarray], quantities: Sequence[float], mode: str
) -> np.ndarray:
    """Merge local parameter vectors into the next global model.

    ``unweighted`` takes the plain mean; ``weighted`` weights each vector by
    its share of the total data quantity.
    """
    if not local_weights:
        raise InvalidInputError("at least one local update is required")
    dims = {w.shape for w in local_weights}
    if len(dims) != 1:
        raise InvalidInputError(f"local parameter shapes differ: {sorted(dims)}")
    if mode not in AGGREGATION_MODES:
        raise InvalidInputError(f"unknown aggregation mode {mode!r}")
    stacked = np.stack(local_weights)
    if mode == "unweighted":
        return stacked.mean(axis=0)
    shares = np.asarray(quantity_shares(list(quantities)))
    return (shares[:, None] * stacked).sum(axis=0)


def _global_loss(
    model: ModelState,
    datasets: Sequence[OwnerDataset],
    quantities: Sequence[float],
    config: TrainerConfig,
) -> float:
    """Quantity-weighted global objective after aggregation."""
    shares = quantity_shares(list(quantities))
    if config.trainer_kind == "analytic":
        losses = [analytic_loss(config, ds.initial_quality, model.round) for ds in datasets]
    else:
        losses = [local_loss(model.weights, ds) for ds in datasets]
    return float(sum(p * l for p, l in zip(shares, losses)))


def run_federated(
    solution: "SneSolution",
    owners: Sequence[DataOwner],
    centers: Sequence[ComputeCenter],
    matching: Matching,
    datasets: Mapping[int, OwnerDataset],
    config: TrainerConfig,
    params: MarketParams,
    seed: int,
    max_workers: int = 1,
) -> RunHistory:
    """Drive the full training loop, re-solving strategies once mid-run.

    Every participating owner's pool is subsampled to the floor of its solved
    quantity and shipped to its matched center.  After the adjustment round
    the realized loss-drop qualities replace the reported ones, strategies are
    re-solved, and owners whose quantity grew draw extra samples from their
    remaining pool and pay the incremental fee.  The history is a pure
    function of the inputs regardless of ``max_workers``.
    """
    from .dynamics import PaymentLedger, evaluate_quality, readjust

    profile = solution.profile
    owners_by_id = {o.id: o for o in owners}
    active_ids = [c.owner_id for c in profile.contributions]
    missing = [oid for oid in active_ids if oid not in matching.pairs]
    if missing:
        raise InvalidInputError(f"matching does not cover owners {missing}")

    history = RunHistory(initial_solution=solution)
    ledger = PaymentLedger()
    history.ledger = ledger

    used_indices: dict[int, np.ndarray] = {}
    active: dict[int, OwnerDataset] = {}
    for contrib in sorted(profile.contributions, key=lambda c: c.owner_id):
        oid = contrib.owner_id
        pool = datasets[oid]
        take = int(math.floor(contrib.quantity))
        if take < 1:
            # Marginal participants can solve to less than one sample; they
            # sit out the training run and their matched center idles.
            history.events.append(
                f"round 0: owner {oid} ships no data "
                f"(quantity {contrib.quantity:.4f} is below one sample)"
            )
            continue
        if take > len(pool):
            raise InvalidInputError(f"owner {oid}: pool has {len(pool)} samples, needs {take}")
        rng = np.random.default_rng([seed, oid, 0])
        chosen = np.sort(rng.choice(len(pool), size=take, replace=False))
        used_indices[oid] = chosen
        active[oid] = pool.subset(chosen)
        owners_by_id[oid].chosen_quantity = contrib.quantity
        center_id = matching.pairs[oid]
        ledger.add(0, oid, center_id, params.rho * contrib.quantity)
        history.events.append(
            f"round 0: secure transfer of {take} samples from owner {oid} to center {center_id}"
        )

    if not active:
        raise InvalidInputError(
            "no owner's solved quantity reaches one sample; rescale the market"
        )
    order = sorted(active, key=lambda oid: matching.pairs[oid])
    dims = next(iter(active.values())).features.shape[1]
    classes = next(iter(active.values())).n_classes
    model = initial_model(dims, classes)

    def update_one(oid: int) -> ClientRecord:
        result = client_update(active[oid], model, config)
        return ClientRecord(
            center_id=matching.pairs[oid],
            owner_id=oid,
            weights=result.weights,
            loss_start=result.loss_start,
            loss_end=result.loss_end,
            quality_delta=result.quality_delta,
        )

    current_solution = solution
    for t in range(1, config.rounds + 1):
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool_exec:
                clients = list(pool_exec.map(update_one, order))
        else:
            clients = [update_one(oid) for oid in order]
        clients.sort(key=lambda r: r.center_id)

        payments: tuple = ()
        if config.adjust_round is not None and t == config.adjust_round:
            partial = RoundRecord(round=t, clients=tuple(clients), global_loss=math.nan)
            assessment = evaluate_quality(partial, params)
            history.assessment = assessment
            new_solution, delta = readjust(
                current_solution, assessment, matching, owners, centers, params, round_index=t
            )
            if new_solution is current_solution:
                history.events.append(f"round {t}: adjustment aborted, market no longer viable")
            else:
                history.events.append(f"round {t}: strategies re-solved from realized quality")
                old_x = {c.owner_id: c.quantity for c in current_solution.profile.contributions}
                for contrib in new_solution.profile.contributions:
                    oid = contrib.owner_id
                    if oid not in used_indices:
                        continue
                    prev = old_x.get(oid, 0.0)
                    owners_by_id[oid].chosen_quantity = contrib.quantity
                    target = int(math.floor(contrib.quantity))
                    extra = target - len(used_indices[oid])
                    if contrib.quantity > prev and extra > 0:
                        pool = datasets[oid]
                        remaining = np.setdiff1d(np.arange(len(pool)), used_indices[oid])
                        extra = min(extra, len(remaining))
                        rng = np.random.default_rng([seed, oid, 1])
                        drawn = np.sort(rng.choice(remaining, size=extra, replace=False))
                        used_indices[oid] = np.sort(np.concatenate([used_indices[oid], drawn]))
                        active[oid] = pool.subset(used_indices[oid])
                        history.events.append(
                            f"round {t}: owner {oid} ships {extra} extra samples to "
                            f"center {matching.pairs[oid]}"
                        )
                ledger.extend(delta.entries)
                payments = tuple(delta.entries)
                current_solution = new_solution
                history.adjusted_solution = new_solution

        quantities = [float(len(active[oid])) for oid in order]
        merged = aggregate([c.weights for c in clients], quantities, config.aggregation)
        model = ModelState(weights=merged, round=t)
        global_loss = _global_loss(model, [active[oid] for oid in order], quantities, config)
        history.rounds.append(
            RoundRecord(round=t, clients=tuple(clients), global_loss=global_loss, payments=payments)
        )

    history.final_model = model
    return history


def history_digest(history: RunHistory) -> str:
    """A stable fingerprint of a run history, for determinism checks."""
    h = hashlib.sha256()
    for record in history.rounds:
        h.update(f"round={record.round};loss={record.global_loss.hex()}".encode())
        for client in record.clients:
            h.update(f"c={client.center_id};o={client.owner_id}".encode())
            h.update(client.loss_start.hex().encode())
            h.update(client.loss_end.hex().encode())
            h.update(client.quality_delta.hex().encode())
            h.update(np.ascontiguousarray(client.weights).tobytes())
        for entry in record.payments:
            h.update(
                f"pay={entry.round},{entry.payer_owner},{entry.payee_center},"
                f"{entry.amount.hex()}".encode()
            )
    if history.final_model is not None:
        h.update(np.ascontiguousarray(history.final_model.weights).tobytes())
    for event in history.events:
        h.update(event.encode())
    return h.hexdigest()


def export_dataset_csv(dataset: OwnerDataset, path: str) -> None:
    """Write one row per sample: owner id, features, label."""
    dims = dataset.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["owner_id"] + [f"x{i}" for i in range(dims)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([dataset.owner_id] + [format(v, ".17g") for v in row] + [int(label)])
