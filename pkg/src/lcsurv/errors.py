"""Exception types shared across the package.

Every error raised by library code derives from :class:`LcsurvError` so
callers (and the CLI) can map failures onto coarse categories: data
loading, numerical fitting, validation, and simulation.
"""

from __future__ import annotations


class LcsurvError(Exception):
    """Base class for all package errors."""


# --- data loading / dataset construction ---------------------------------


class DataError(LcsurvError):
    """Base class for dataset construction and CSV loading failures."""


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    pass


class NegativeTime(DataError):
    pass


class EventNotBinary(DataError):
    pass


class EmptyFile(DataError):
    pass


class KTooLarge(DataError):
    pass


# --- numerical fitting ----------------------------------------------------


class FitError(LcsurvError):
    """Base class for estimation failures."""


class NonFiniteValue(FitError):
    pass


class NoEvents(FitError):
    pass


class SingularHessian(FitError):
    pass


class SeparationDetected(FitError):
    pass


class DegenerateRecord(FitError):
    pass


class AllStartsFailed(FitError):
    pass


# --- evaluation -----------------------------------------------------------


class EvaluationError(LcsurvError):
    pass


class NoCases(EvaluationError):
    pass


class NoControls(EvaluationError):
    pass


class FoldDegenerate(EvaluationError):
    """A cross-validation fold could not produce a per-fold AUC."""


class InsufficientReplicates(EvaluationError):
    """Fewer than half of the requested validation replicates succeeded."""


# --- simulation -----------------------------------------------------------


class SimulationError(LcsurvError):
    pass


class CyclicGraph(SimulationError):
    pass


class NotPositiveDefinite(SimulationError):
    pass


class CalibrationFailed(SimulationError):
    pass


# --- CLI ------------------------------------------------------------------


class ConfigError(LcsurvError):
    pass


class MissingArtifacts(LcsurvError):
    pass
