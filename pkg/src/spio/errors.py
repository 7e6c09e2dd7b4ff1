"""Exception hierarchy for the engine.

Every concrete error belongs to exactly one of four families, and each
family carries the process exit code the CLI maps it to. Keeping the
mapping on the class makes the CLI translation total by construction.
"""

from __future__ import annotations


class SpioError(Exception):
    """Base class for all engine errors."""

    exit_code: int | None = None


class ConfigError(SpioError):
    """Bad configuration or unusable input data (exit 2)."""

    exit_code = 2


class ExecutionError(SpioError):
    """Failure while running or validating generated code (exit 3)."""

    exit_code = 3


class SelectionError(SpioError):
    """Failure while rendering prompts or parsing model output (exit 4)."""

    exit_code = 4


class ProviderError(SpioError):
    """Failure in the text-generation transport layer (exit 5)."""

    exit_code = 5


# --- dataset ingestion -------------------------------------------------

class MalformedCsv(ConfigError):
    """Delimited file has ragged rows or no header."""


class EmptyDataset(ConfigError):
    """Delimited file has a header but zero data rows."""


class TooFewRows(ConfigError):
    """Dataset is too small to split."""


# --- plan/artifact ledger ----------------------------------------------

class OutOfOrderStage(ExecutionError):
    """Artifact recorded before its predecessor stages."""


class StageAlreadyRecorded(ExecutionError):
    """Artifact for this stage exists and no repair replacement was requested."""


class StageArtifactMissing(ExecutionError):
    """Candidate plans appended before the stage's artifact exists."""


class TooManyCandidates(ExecutionError):
    """Appending would exceed the per-stage candidate bound."""


class LedgerInvariantViolation(ExecutionError):
    """Internal run-ledger bookkeeping violated (non-contiguous attempts, duplicate ok)."""


# --- prompt rendering and output parsing --------------------------------

class MissingSlot(SelectionError):
    """A template variable was left unfilled; carries the variable name."""

    def __init__(self, slot: str):
        super().__init__(f"unfilled template variable: {slot}")
        self.slot = slot


class EmptyStagePlans(SelectionError):
    """A selection prompt was requested with zero plans for a stage."""

    def __init__(self, stage: str):
        super().__init__(f"no candidate plans for stage: {stage}")
        self.stage = stage


class NoCodeFound(SelectionError):
    """Model output contains neither a fenced block nor plausible code."""


class NoPlansFound(SelectionError):
    """Model output contains no recognizable enumerated plans."""


class PlanningFailed(SelectionError):
    """Plan proposal still unparseable after the single re-ask retry."""


class MalformedJson(SelectionError):
    """Top-k selection output is not valid JSON."""


class SchemaViolation(SelectionError):
    """Top-k selection JSON misses a required key or repeats a rank label."""

    def __init__(self, key: str, message: str | None = None):
        super().__init__(message or f"schema violation: {key}")
        self.key = key


class EmptySelection(SelectionError):
    """Top-k selection parsed to an empty array."""


class UnmappablePlan(SelectionError):
    """A selection response names a plan matching no recorded candidate."""


# --- providers ----------------------------------------------------------

class ProviderUnreachable(ProviderError):
    """Transport kept failing after the configured retries."""


class ProviderRefusal(ProviderError):
    """Provider returned an empty or blocked completion."""


class TokenBudgetExceeded(ProviderError):
    """The optional run-level token cap was exceeded."""


class FixtureExhausted(ProviderError):
    """Scripted provider ran out of fixtures."""


class FixturePromptMismatch(ProviderError):
    """Scripted fixture expected a different prompt digest."""

    def __init__(self, step_label: str):
        super().__init__(f"prompt digest mismatch at step: {step_label}")
        self.step_label = step_label


# --- cascade and path realization ----------------------------------------

class StageFailed(ExecutionError):
    """Attempt budget exhausted for one stage; carries the last error."""

    def __init__(self, stage: str, attempts: int, last_error: str):
        super().__init__(f"stage {stage} failed after {attempts} attempts: {last_error}")
        self.stage = stage
        self.attempts = attempts
        self.last_error = last_error


class PredictionShapeMismatch(ExecutionError):
    """Prediction file row count differs from the test row count."""


# --- ensembling and metrics ----------------------------------------------

class LabelSetMismatch(ExecutionError):
    """Probability matrices disagree on the class label set."""


class InstanceCountMismatch(ExecutionError):
    """Prediction collections disagree on instance count."""


class MetricKindMismatch(ExecutionError):
    """Metric asked for a prediction kind it cannot score."""


class DegenerateTruth(ExecutionError):
    """ROC AUC requested against single-class truth."""


# --- analytics ------------------------------------------------------------

class EmptyTraces(ConfigError):
    """Failure-rate computation over an empty trace list."""


class DegenerateBatch(ExecutionError):
    """All embedding vectors identical; covariance is zero."""


class DimensionMismatch(ExecutionError):
    """Embedding vectors in one batch differ in dimension."""
