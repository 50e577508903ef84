"""Three-sided federated-learning data market: equilibrium strategies, stable
matching of data to compute, and a simulated training loop with quality-aware
mid-run readjustment."""

from .dynamics import PaymentEntry, PaymentLedger, QualityAssessment, evaluate_quality, readjust
from .equilibrium import (
    SneSolution,
    SolverIntermediates,
    VerificationReport,
    best_response_quality,
    nash_total_quality,
    optimal_payment,
    optimal_undertaking,
    solve_sne,
    verify_sne,
)
from .errors import (
    ConfigError,
    DegenerateMarketError,
    FedMarketError,
    InsufficientCentersError,
    InsufficientParticipantsError,
    InvalidInputError,
    InvalidQualityError,
    NoViableMarketError,
    TrainingDivergenceError,
)
from .market import (
    ComputeCenter,
    DataOwner,
    MarketParams,
    OwnerContribution,
    StrategyProfile,
    UtilityReport,
    evaluate_profile,
    utility_center,
    utility_owner,
    utility_server,
)
from .matching import Matching, PreferenceTables, build_preferences, gale_shapley, is_stable
from .training import (
    ModelState,
    OwnerDataset,
    RoundRecord,
    RunHistory,
    TrainerConfig,
    aggregate,
    client_update,
    generate_owner_data,
    history_digest,
    run_federated,
)

__version__ = "0.1.0"

__all__ = [
    "ComputeCenter",
    "ConfigError",
    "DataOwner",
    "DegenerateMarketError",
    "FedMarketError",
    "InsufficientCentersError",
    "InsufficientParticipantsError",
    "InvalidInputError",
    "InvalidQualityError",
    "MarketParams",
    "Matching",
    "ModelState",
    "NoViableMarketError",
    "OwnerContribution",
    "OwnerDataset",
    "PaymentEntry",
    "PaymentLedger",
    "PreferenceTables",
    "QualityAssessment",
    "RoundRecord",
    "RunHistory",
    "SneSolution",
    "SolverIntermediates",
    "StrategyProfile",
    "TrainerConfig",
    "TrainingDivergenceError",
    "UtilityReport",
    "VerificationReport",
    "aggregate",
    "best_response_quality",
    "build_preferences",
    "client_update",
    "evaluate_profile",
    "evaluate_quality",
    "gale_shapley",
    "generate_owner_data",
    "history_digest",
    "is_stable",
    "nash_total_quality",
    "optimal_payment",
    "optimal_undertaking",
    "readjust",
    "run_federated",
    "solve_sne",
    "utility_center",
    "utility_owner",
    "utility_server",
    "verify_sne",
]
