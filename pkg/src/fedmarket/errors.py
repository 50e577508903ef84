"""Exception types used across the market, solver, and simulation layers."""


class FedMarketError(Exception):
    """Base class for all library errors."""


class InvalidInputError(FedMarketError):
    """An argument violates a documented precondition."""


class InvalidQualityError(InvalidInputError):
    """A data-quality value is outside its admissible range."""


class DegenerateMarketError(FedMarketError):
    """A revenue share is undefined because the market-wide total is zero."""


class InsufficientParticipantsError(FedMarketError):
    """Fewer data owners than the closed-form strategies require."""


class InsufficientCentersError(FedMarketError):
    """Fewer computing centers than the closed-form strategies require."""


class NoViableMarketError(FedMarketError):
    """No strategy profile with at least two active data owners exists."""


class TrainingDivergenceError(FedMarketError):
    """A local trainer produced a non-finite loss."""


class ConfigError(FedMarketError):
    """An experiment configuration failed validation."""
