"""Shared exception types."""


class InputDomainError(ValueError):
    """An argument is outside its documented domain."""


class CalibrationError(RuntimeError):
    """Not enough (or unusable) data to calibrate a model or controller."""


class TrainingStepError(RuntimeError):
    """A training step received non-finite gradients; the batch should be skipped."""


class InfeasibleScenarioError(RuntimeError):
    """No allocation can satisfy the QoS target for the given scenario."""
