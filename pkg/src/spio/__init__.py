"""Cascaded plan-and-code agents over a four-stage tabular ML pipeline."""

from .model import (
    CandidatePlan,
    DataDescription,
    PipelinePath,
    PlanLedger,
    RunLedger,
    Stage,
    StageArtifact,
    TaskDescription,
    append_candidates,
    describe_dataset,
    plans_before,
    record_artifact,
)

__all__ = [
    "CandidatePlan",
    "DataDescription",
    "PipelinePath",
    "PlanLedger",
    "RunLedger",
    "Stage",
    "StageArtifact",
    "TaskDescription",
    "append_candidates",
    "describe_dataset",
    "plans_before",
    "record_artifact",
]

__version__ = "0.1.0"
