"""Flat key-value experiment configuration.

Config files are plain text: one ``section.key = value`` pair per line with
``#`` comments, chosen for diff-friendliness.  Unknown keys are rejected and
every validation failure reports the offending line number.  A seed is
mandatory; nothing falls back to wall-clock randomness.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .market import ComputeCenter, DataOwner, MarketParams
from .training import TrainerConfig


@dataclass(frozen=True)
class DistributionSpec:
    """Either a fixed list of values or a seeded uniform draw over [low, high]."""

    values: tuple[float, ...] | None = None
    low: float = 0.0
    high: float = 1.0

    def draw(self, rng: np.random.Generator, count: int) -> list[float]:
        if self.values is not None:
            if len(self.values) != count:
                raise ConfigError(
                    f"fixed list has {len(self.values)} values but {count} are needed"
                )
            return list(self.values)
        return rng.uniform(self.low, self.high, size=count).tolist()


@dataclass(frozen=True)
class StrategySpec:
    mode: str = "optimal"
    fixed_eta: float = 1.0
    random_low: float = 0.0
    random_high: float = 2.0


@dataclass(frozen=True)
class SweepSpec:
    low: float | None = None
    high: float | None = None
    steps: int = 101
    owner: int = 1


@dataclass(frozen=True)
class DeviationSpec:
    owners: tuple[int, ...] = (1,)
    low: float = -0.6
    high: float = 0.6
    steps: int = 13


@dataclass(frozen=True)
class CompareSpec:
    n_values: tuple[int, ...] = (4, 8, 12, 16, 20)
    runs: int = 100


@dataclass(frozen=True)
class AblateSpec:
    seeds: int = 20
    over_report_fraction: float = 0.2
    over_report_ratio: float = 0.6


@dataclass(frozen=True)
class DataSpec:
    dims: int = 10
    classes: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    scenario: str = "experiment"
    n_owners: int = 10
    n_centers: int = 10
    market: MarketParams = field(default_factory=MarketParams)
    quality: DistributionSpec = field(default_factory=DistributionSpec)
    sigma: DistributionSpec = field(default_factory=DistributionSpec)
    owner_capacity: float = math.inf
    center_capacity: float = math.inf
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataSpec = field(default_factory=DataSpec)
    strategy: StrategySpec = field(default_factory=StrategySpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    deviation: DeviationSpec = field(default_factory=DeviationSpec)
    compare: CompareSpec = field(default_factory=CompareSpec)
    ablate: AblateSpec = field(default_factory=AblateSpec)
    match_owner_quantities: tuple[float, ...] | None = None
    match_center_undertakings: tuple[float, ...] | None = None
    config_hash: str = ""


class _Entries:
    """Raw key/value pairs with their line numbers, consumed one by one."""

    def __init__(self, text: str):
        self.pairs: dict[str, tuple[str, int]] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"line {lineno}: empty key")
            if key in self.pairs:
                first = self.pairs[key][1]
                raise ConfigError(f"line {lineno}: duplicate key {key!r} (first on line {first})")
            self.pairs[key] = (value, lineno)

    def take(self, key, default, cast):
        if key not in self.pairs:
            return default
        value, lineno = self.pairs.pop(key)
        try:
            return cast(value)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc

    def line_of(self, key: str) -> int | None:
        return self.pairs[key][1] if key in self.pairs else None

    def leftover(self) -> list[tuple[str, int]]:
        return [(key, lineno) for key, (_, lineno) in self.pairs.items()]


def _float(value: str) -> float:
    if value.lower() in ("inf", "infinity"):
        return math.inf
    return float(value)


def _int(value: str) -> int:
    return int(value)


def _float_list(value: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in value.split(",") if part.strip())


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in value.split(",") if part.strip())


def _distribution(value: str) -> DistributionSpec | str:
    return "uniform" if value.strip().lower() == "uniform" else value


def _maybe_round(value: str) -> int | None:
    return None if value.strip().lower() == "none" else int(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config; raises ``ConfigError`` with line numbers."""
    entries = _Entries(text)

    def fail(key: str, message: str) -> ConfigError:
        lineno = entries.line_of(key)
        where = f"line {lineno}: " if lineno is not None else ""
        return ConfigError(f"{where}{message}")

    if "seed" not in entries.pairs:
        raise ConfigError("a seed is required; add 'seed = <integer>'")
    scenario = entries.take("scenario", "experiment", str)
    seed = entries.take("seed", None, _int)

    n_owners = entries.take("owners.count", 10, _int)
    n_centers = entries.take("centers.count", 10, _int)
    if n_owners < 2:
        raise fail("owners.count", f"at least two data owners are required, got {n_owners}")
    if n_centers < n_owners:
        raise fail(
            "centers.count",
            f"at least as many centers as owners are required, got {n_centers} < {n_owners}",
        )

    def dist(prefix: str) -> DistributionSpec:
        raw = entries.take(prefix, "uniform", str)
        low = entries.take(f"{prefix}_low", 0.0, _float)
        high = entries.take(f"{prefix}_high", 1.0, _float)
        if raw.strip().lower() == "uniform":
            if not low < high:
                raise fail(f"{prefix}_low", f"empty draw range [{low}, {high}]")
            return DistributionSpec(values=None, low=low, high=high)
        return DistributionSpec(values=_float_list(raw))

    quality = dist("owners.quality")
    sigma = dist("centers.sigma")
    if quality.values is not None and len(quality.values) != n_owners:
        raise fail("owners.quality", f"{len(quality.values)} values for {n_owners} owners")
    if quality.values is not None and any(not 0 < f <= 1 for f in quality.values):
        raise fail("owners.quality", "qualities must lie in (0, 1]")
    if sigma.values is not None and len(sigma.values) != n_centers:
        raise fail("centers.sigma", f"{len(sigma.values)} values for {n_centers} centers")
    if sigma.values is not None and any(s <= 0 for s in sigma.values):
        raise fail("centers.sigma", "power factors must be positive")

    owner_capacity = entries.take("owners.capacity", math.inf, _float)
    center_capacity = entries.take("centers.capacity", math.inf, _float)
    if owner_capacity <= 0 or center_capacity <= 0:
        raise fail("owners.capacity", "capacities must be positive")

    try:
        market = MarketParams(
            lam=entries.take("market.lambda", 1.0, _float),
            rho=entries.take("market.rho", 1.0, _float),
            epsilon=entries.take("market.epsilon", 1.0, _float),
            alpha=entries.take("market.alpha", 5.0, _float),
            xi=entries.take("market.xi", 0.05, _float),
        )
        trainer = TrainerConfig(
            rounds=entries.take("trainer.rounds", 10, _int),
            local_epochs=entries.take("trainer.local_epochs", 3, _int),
            learning_rate=entries.take("trainer.learning_rate", 0.01, _float),
            adjust_round=entries.take("trainer.adjust_round", 3, _maybe_round),
            aggregation=entries.take("trainer.aggregation", "unweighted", str),
            trainer_kind=entries.take("trainer.kind", "gradient", str),
            analytic_base_loss=entries.take("trainer.analytic_base_loss", 1.0, _float),
            analytic_decay=entries.take("trainer.analytic_decay", 1.0, _float),
        )
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc

    data = DataSpec(
        dims=entries.take("data.dims", 10, _int),
        classes=entries.take("data.classes", 3, _int),
    )
    if data.dims < 1 or data.classes < 2:
        raise fail("data.dims", "need at least one dimension and two classes")

    strategy = StrategySpec(
        mode=entries.take("strategy.mode", "optimal", str),
        fixed_eta=entries.take("strategy.fixed_eta", 1.0, _float),
        random_low=entries.take("strategy.random_low", 0.0, _float),
        random_high=entries.take("strategy.random_high", 2.0, _float),
    )
    if strategy.mode not in ("optimal", "fixed", "random"):
        raise fail("strategy.mode", f"unknown strategy mode {strategy.mode!r}")
    if strategy.fixed_eta < 0:
        raise fail("strategy.fixed_eta", "fixed payment must be nonnegative")
    if not 0 <= strategy.random_low < strategy.random_high:
        raise fail("strategy.random_low", "random payment range must be nonnegative and nonempty")

    sweep = SweepSpec(
        low=entries.take("sweep.low", None, _float),
        high=entries.take("sweep.high", None, _float),
        steps=entries.take("sweep.steps", 101, _int),
        owner=entries.take("sweep.owner", 1, _int),
    )
    if sweep.steps < 3:
        raise fail("sweep.steps", "at least three sweep steps are required")
    if not 1 <= sweep.owner <= n_owners:
        raise fail("sweep.owner", f"sweep owner {sweep.owner} outside [1, {n_owners}]")

    deviation = DeviationSpec(
        owners=entries.take("deviation.owners", (1,), _int_list),
        low=entries.take("deviation.low", -0.6, _float),
        high=entries.take("deviation.high", 0.6, _float),
        steps=entries.take("deviation.steps", 13, _int),
    )
    if any(not 1 <= oid <= n_owners for oid in deviation.owners):
        raise fail("deviation.owners", "deviating owner ids must be valid owner ids")
    if deviation.low <= -1.0:
        raise fail("deviation.low", "deviation ratio must stay above -100%")
    if deviation.steps < 2:
        raise fail("deviation.steps", "at least two deviation steps are required")

    compare = CompareSpec(
        n_values=entries.take("compare.n_values", (4, 8, 12, 16, 20), _int_list),
        runs=entries.take("compare.runs", 100, _int),
    )
    if any(n < 2 for n in compare.n_values):
        raise fail("compare.n_values", "comparison sizes must be at least 2")
    if compare.runs < 1:
        raise fail("compare.runs", "at least one comparison run is required")

    ablate = AblateSpec(
        seeds=entries.take("ablate.seeds", 20, _int),
        over_report_fraction=entries.take("ablate.over_report_fraction", 0.2, _float),
        over_report_ratio=entries.take("ablate.over_report_ratio", 0.6, _float),
    )
    if not 0 <= ablate.over_report_fraction <= 1:
        raise fail("ablate.over_report_fraction", "fraction must lie in [0, 1]")

    match_x = entries.take("match.owner_quantities", None, _float_list)
    match_d = entries.take("match.center_undertakings", None, _float_list)
    if match_x is not None and len(match_x) != n_owners:
        raise fail("match.owner_quantities", f"{len(match_x)} values for {n_owners} owners")
    if match_d is not None and len(match_d) != n_centers:
        raise fail("match.center_undertakings", f"{len(match_d)} values for {n_centers} centers")

    leftover = entries.leftover()
    if leftover:
        key, lineno = leftover[0]
        raise ConfigError(f"line {lineno}: unknown key {key!r}")

    canonical = "\n".join(
        f"{k} = {v}" for k, v in sorted((k, v) for k, (v, _) in _Entries(text).pairs.items())
    )
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:16]

    return ExperimentConfig(
        seed=seed,
        scenario=scenario,
        n_owners=n_owners,
        n_centers=n_centers,
        market=market,
        quality=quality,
        sigma=sigma,
        owner_capacity=owner_capacity,
        center_capacity=center_capacity,
        trainer=trainer,
        data=data,
        strategy=strategy,
        sweep=sweep,
        deviation=deviation,
        compare=compare,
        ablate=ablate,
        match_owner_quantities=match_x,
        match_center_undertakings=match_d,
        config_hash=digest,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def realize_instance(
    config: ExperimentConfig, seed: int | None = None
) -> tuple[list[DataOwner], list[ComputeCenter]]:
    """Draw the owner and center populations for one seeded instance.

    Qualities are drawn before power factors, always from a fresh generator,
    so instances are reproducible from (config, seed) alone.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    qualities = config.quality.draw(rng, config.n_owners)
    sigmas = config.sigma.draw(rng, config.n_centers)
    owners = [
        DataOwner(i + 1, min(max(f, 1e-9), 1.0), capacity=config.owner_capacity)
        for i, f in enumerate(qualities)
    ]
    centers = [
        ComputeCenter(j + 1, max(s, 1e-9), capacity=config.center_capacity)
        for j, s in enumerate(sigmas)
    ]
    return owners, centers
