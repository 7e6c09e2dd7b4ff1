"""Domain types and the append-only plan/artifact ledger.

All values are immutable snapshots; operations that extend the ledger
return a new snapshot. Serialization uses JSON with a fixed key order so
persisted documents are byte-stable.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import (
    EmptyDataset,
    LedgerInvariantViolation,
    MalformedCsv,
    OutOfOrderStage,
    StageAlreadyRecorded,
    StageArtifactMissing,
    TooManyCandidates,
)

FORMAT_VERSION = 1

DTYPES = ("numeric", "categorical", "boolean", "text", "datetime")

TASK_KINDS = ("binary_classification", "multiclass_classification", "regression")
METRICS = ("ACC", "ROC_AUC", "RMSE")

ATTEMPT_STATUSES = ("ok", "exec_error", "parse_error", "whitelist_violation", "timeout")

DEFAULT_SAMPLE_SIZE = 5


class Stage(str, Enum):
    """The four pipeline stages, in their fixed execution order."""

    PREPROCESS = "preprocess"
    FEATURE_ENGINEERING = "feature_engineering"
    MODEL_SELECTION = "model_selection"
    HYPERPARAMETER_TUNING = "hyperparameter_tuning"

    @property
    def index(self) -> int:
        return STAGES.index(self)

    @property
    def carries_summary(self) -> bool:
        """First two stages describe processed data; the last two score it."""
        return self in (Stage.PREPROCESS, Stage.FEATURE_ENGINEERING)


STAGES: tuple[Stage, ...] = (
    Stage.PREPROCESS,
    Stage.FEATURE_ENGINEERING,
    Stage.MODEL_SELECTION,
    Stage.HYPERPARAMETER_TUNING,
)

STAGE_PHRASES: dict[Stage, str] = {
    Stage.PREPROCESS: "data preprocessing",
    Stage.FEATURE_ENGINEERING: "feature engineering",
    Stage.MODEL_SELECTION: "model selection",
    Stage.HYPERPARAMETER_TUNING: "hyperparameter tuning",
}


@dataclass(frozen=True)
class DataDescription:
    """Profile of a delimited tabular dataset: shape, types, nulls, head rows."""

    row_count: int
    column_specs: tuple[tuple[str, str], ...]
    null_ratio: dict[str, float]
    sample_records: tuple[dict[str, str | None], ...]
    source_path: str

    def __post_init__(self) -> None:
        if self.row_count < 0:
            raise ValueError("row_count must be non-negative")
        names = [name for name, _ in self.column_specs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        for name, dtype in self.column_specs:
            if dtype not in DTYPES:
                raise ValueError(f"unknown dtype {dtype!r} for column {name!r}")
        if set(self.null_ratio) != set(names):
            raise ValueError("null_ratio keys must match column names")
        for name, ratio in self.null_ratio.items():
            if not 0.0 <= ratio <= 1.0:
                raise ValueError(f"null_ratio[{name!r}] outside [0, 1]")
        if self.row_count < len(self.sample_records):
            raise ValueError("more sample records than rows")
        for record in self.sample_records:
            if set(record) != set(names):
                raise ValueError("sample record columns differ from declared columns")

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.column_specs)

    @property
    def overall_null_ratio(self) -> float:
        """Total null cells over total cells (mean of per-column ratios)."""
        if not self.column_specs:
            return 0.0
        return sum(self.null_ratio[name] for name in self.column_names) / len(self.column_specs)

    def to_dict(self) -> dict[str, Any]:
        # Fixed field order keeps persisted documents byte-stable.
        return {
            "row_count": self.row_count,
            "column_specs": [[name, dtype] for name, dtype in self.column_specs],
            "null_ratio": {name: self.null_ratio[name] for name in self.column_names},
            "sample_records": [dict(rec) for rec in self.sample_records],
            "source_path": self.source_path,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DataDescription":
        return cls(
            row_count=int(data["row_count"]),
            column_specs=tuple((str(n), str(d)) for n, d in data["column_specs"]),
            null_ratio={str(k): float(v) for k, v in data["null_ratio"].items()},
            sample_records=tuple(dict(rec) for rec in data["sample_records"]),
            source_path=str(data["source_path"]),
        )


@dataclass(frozen=True)
class TaskDescription:
    """What to predict: kind, target column, metric, free-form background."""

    task_kind: str
    target_column: str
    metric: str
    background: str = ""

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task_kind {self.task_kind!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if (self.metric == "RMSE") != (self.task_kind == "regression"):
            raise ValueError("RMSE and regression imply each other")
        if self.metric == "ROC_AUC" and self.task_kind == "regression":
            raise ValueError("ROC_AUC requires a classification task")

    @property
    def is_classification(self) -> bool:
        return self.task_kind != "regression"

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_kind": self.task_kind,
            "target_column": self.target_column,
            "metric": self.metric,
            "background": self.background,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskDescription":
        return cls(
            task_kind=str(data["task_kind"]),
            target_column=str(data["target_column"]),
            metric=str(data["metric"]),
            background=str(data.get("background", "")),
        )


@dataclass(frozen=True)
class StageArtifact:
    """One stage's accepted output: code plus a data summary or a score."""

    stage: Stage
    code: str
    attempt_count: int
    summary: DataDescription | None = None
    validation_score: float | None = None

    def __post_init__(self) -> None:
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")
        has_summary = self.summary is not None
        has_score = self.validation_score is not None
        if has_summary == has_score:
            raise ValueError("exactly one of summary or validation_score must be set")
        if self.stage.carries_summary and not has_summary:
            raise ValueError(f"stage {self.stage.value} must carry a data summary")
        if not self.stage.carries_summary and not has_score:
            raise ValueError(f"stage {self.stage.value} must carry a validation score")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "stage": self.stage.value,
            "code": self.code,
            "attempt_count": self.attempt_count,
        }
        if self.summary is not None:
            out["summary"] = self.summary.to_dict()
        else:
            out["validation_score"] = self.validation_score
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StageArtifact":
        return cls(
            stage=Stage(data["stage"]),
            code=str(data["code"]),
            attempt_count=int(data["attempt_count"]),
            summary=DataDescription.from_dict(data["summary"]) if "summary" in data else None,
            validation_score=float(data["validation_score"])
            if "validation_score" in data
            else None,
        )


@dataclass(frozen=True)
class CandidatePlan:
    """One proposed alternative strategy for a stage."""

    stage: Stage
    ordinal: int
    plan_text: str
    rationale: str = ""
    scenario: str = ""

    def __post_init__(self) -> None:
        if self.ordinal < 1:
            raise ValueError("ordinal must be >= 1")
        if not self.plan_text.strip():
            raise ValueError("plan_text must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage.value,
            "ordinal": self.ordinal,
            "plan_text": self.plan_text,
            "rationale": self.rationale,
            "scenario": self.scenario,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CandidatePlan":
        return cls(
            stage=Stage(data["stage"]),
            ordinal=int(data["ordinal"]),
            plan_text=str(data["plan_text"]),
            rationale=str(data.get("rationale", "")),
            scenario=str(data.get("scenario", "")),
        )


@dataclass(frozen=True)
class PlanLedger:
    """Accumulated stage artifacts and candidate plans for one run.

    The ledger also carries the original dataset description and the task,
    so later selection and realization steps need nothing but the ledger.
    """

    max_candidates_per_stage: int = 2
    artifacts: Mapping[Stage, StageArtifact] = field(default_factory=dict)
    candidates: tuple[CandidatePlan, ...] = ()
    dataset: DataDescription | None = None
    task: TaskDescription | None = None

    def __post_init__(self) -> None:
        if self.max_candidates_per_stage < 1:
            raise ValueError("max_candidates_per_stage must be >= 1")

    def candidates_for(self, stage: Stage) -> tuple[CandidatePlan, ...]:
        return tuple(p for p in self.candidates if p.stage is stage)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "max_candidates_per_stage": self.max_candidates_per_stage,
            "task": self.task.to_dict() if self.task else None,
            "dataset": self.dataset.to_dict() if self.dataset else None,
            "artifacts": {
                stage.value: self.artifacts[stage].to_dict()
                for stage in STAGES
                if stage in self.artifacts
            },
            "candidates": [p.to_dict() for p in self.candidates],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlanLedger":
        return cls(
            max_candidates_per_stage=int(data["max_candidates_per_stage"]),
            artifacts={
                Stage(k): StageArtifact.from_dict(v) for k, v in data["artifacts"].items()
            },
            candidates=tuple(CandidatePlan.from_dict(p) for p in data["candidates"]),
            dataset=DataDescription.from_dict(data["dataset"]) if data.get("dataset") else None,
            task=TaskDescription.from_dict(data["task"]) if data.get("task") else None,
        )


@dataclass
class PipelinePath:
    """One chosen plan per stage plus a rank; the unit selection returns."""

    rank: int
    choice: dict[Stage, CandidatePlan]
    final_code: str | None = None

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if set(self.choice) != set(STAGES):
            raise ValueError("a pipeline path must choose exactly one plan per stage")

    def to_dict(self) -> dict[str, Any]:
        return {
            "rank": self.rank,
            "choice": {stage.value: self.choice[stage].to_dict() for stage in STAGES},
            "final_code": self.final_code,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelinePath":
        return cls(
            rank=int(data["rank"]),
            choice={Stage(k): CandidatePlan.from_dict(v) for k, v in data["choice"].items()},
            final_code=data.get("final_code"),
        )


@dataclass(frozen=True)
class TokenEvent:
    seq: int
    step_label: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class AttemptLog:
    seq: int
    label: str
    attempt: int
    status: str

    def __post_init__(self) -> None:
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")
        if self.status not in ATTEMPT_STATUSES:
            raise ValueError(f"unknown attempt status {self.status!r}")


class RunLedger:
    """Per-run token usage and attempt logs.

    Appends are thread-safe; an internal sequence number gives concurrent
    events a total order. Attempt logs are validated on append: attempt
    numbers per label-run are contiguous from 1 and each run ends at its
    first ok.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._seq = 0
        self.token_events: list[TokenEvent] = []
        self.attempt_logs: list[AttemptLog] = []

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def add_token_event(self, step_label: str, input_tokens: int, output_tokens: int) -> TokenEvent:
        with self._lock:
            event = TokenEvent(self._next_seq(), step_label, input_tokens, output_tokens)
            self.token_events.append(event)
            return event

    def add_attempt(self, label: str, attempt: int, status: str) -> AttemptLog:
        with self._lock:
            previous = [log for log in self.attempt_logs if log.label == label]
            if attempt == 1:
                pass  # a new run for this label may always start
            elif not previous:
                raise LedgerInvariantViolation(
                    f"first attempt for {label!r} must be 1, got {attempt}"
                )
            else:
                last = previous[-1]
                if last.status == "ok":
                    raise LedgerInvariantViolation(
                        f"attempt logged for {label!r} after its run already succeeded"
                    )
                if attempt != last.attempt + 1:
                    raise LedgerInvariantViolation(
                        f"non-contiguous attempt for {label!r}: {last.attempt} -> {attempt}"
                    )
            log = AttemptLog(self._next_seq(), label, attempt, status)
            self.attempt_logs.append(log)
            return log

    def total_tokens(self) -> tuple[int, int]:
        with self._lock:
            return (
                sum(e.input_tokens for e in self.token_events),
                sum(e.output_tokens for e in self.token_events),
            )

    def to_dict(self) -> dict[str, Any]:
        with self._lock:
            return {
                "format_version": FORMAT_VERSION,
                "token_events": [
                    {
                        "seq": e.seq,
                        "step_label": e.step_label,
                        "input_tokens": e.input_tokens,
                        "output_tokens": e.output_tokens,
                    }
                    for e in self.token_events
                ],
                "attempt_logs": [
                    {
                        "seq": a.seq,
                        "label": a.label,
                        "attempt": a.attempt,
                        "status": a.status,
                    }
                    for a in self.attempt_logs
                ],
            }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunLedger":
        run = cls()
        for e in data["token_events"]:
            run.token_events.append(
                TokenEvent(int(e["seq"]), str(e["step_label"]), int(e["input_tokens"]), int(e["output_tokens"]))
            )
        for a in data["attempt_logs"]:
            run.attempt_logs.append(
                AttemptLog(int(a["seq"]), str(a["label"]), int(a["attempt"]), str(a["status"]))
            )
        run._seq = max(
            [e.seq for e in run.token_events] + [a.seq for a in run.attempt_logs] + [0]
        )
        return run

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RunLedger):
            return NotImplemented
        return (
            self.token_events == other.token_events
            and self.attempt_logs == other.attempt_logs
        )


# --- dataset profiling ----------------------------------------------------

_NON_NUMBER_WORDS = {"nan", "inf", "-inf", "+inf", "infinity", "-infinity", "+infinity"}


def _is_number(cell: str) -> bool:
    text = cell.strip()
    if text.lower() in _NON_NUMBER_WORDS:
        return False
    try:
        value = float(text)
    except ValueError:
        return False
    return not (math.isnan(value) or math.isinf(value))


def _infer_dtype(values: list[str], row_count: int) -> str:
    non_null = [v for v in values if v != ""]
    if non_null:
        if all(_is_number(v) for v in non_null):
            return "numeric"
        if all(v.strip().lower() in ("true", "false", "0", "1") for v in non_null):
            return "boolean"
    distinct = len(set(non_null))
    if distinct <= max(20.0, 0.05 * row_count):
        return "categorical"
    return "text"


def describe_dataset(csv_path: str | Path, sample_size: int = DEFAULT_SAMPLE_SIZE) -> DataDescription:
    """Profile a comma-delimited file with a header row.

    Deterministic for fixed file bytes: dtypes are inferred as numeric
    when every non-null cell parses as a number, boolean when values stay
    within true/false/0/1, otherwise categorical or text by cardinality.
    Null cells are empty strings; sample records are the head rows.
    """
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    path = Path(csv_path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: empty file, no header row") from None
        rows: list[list[str]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MalformedCsv(
                    f"{path}: row at line {line_no} has {len(row)} cells, expected {len(header)}"
                )
            rows.append(row)
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")

    row_count = len(rows)
    columns = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    column_specs = tuple((name, _infer_dtype(columns[name], row_count)) for name in header)
    null_ratio = {
        name: sum(1 for v in columns[name] if v == "") / row_count for name in header
    }
    sample_records = tuple(
        {name: (row[i] if row[i] != "" else None) for i, name in enumerate(header)}
        for row in rows[:sample_size]
    )
    return DataDescription(
        row_count=row_count,
        column_specs=column_specs,
        null_ratio=null_ratio,
        sample_records=sample_records,
        source_path=str(path),
    )


# --- ledger operations ------------------------------------------------------

def record_artifact(
    ledger: PlanLedger, artifact: StageArtifact, *, repair: bool = False
) -> PlanLedger:
    """Return a new ledger containing the artifact.

    Preceding stages must already be recorded. An existing artifact may
    only be replaced under the explicit repair flag.
    """
    for earlier in STAGES[: artifact.stage.index]:
        if earlier not in ledger.artifacts:
            raise OutOfOrderStage(
                f"cannot record {artifact.stage.value} before {earlier.value}"
            )
    if artifact.stage in ledger.artifacts and not repair:
        raise StageAlreadyRecorded(
            f"artifact for {artifact.stage.value} already recorded; pass repair=True to replace"
        )
    artifacts = dict(ledger.artifacts)
    artifacts[artifact.stage] = artifact
    return replace(ledger, artifacts=artifacts)


def append_candidates(
    ledger: PlanLedger, stage: Stage, plans: Iterable[CandidatePlan]
) -> PlanLedger:
    """Return a new ledger with the plans appended for the stage."""
    plans = tuple(plans)
    if stage not in ledger.artifacts:
        raise StageArtifactMissing(
            f"no artifact recorded for {stage.value}; plans may not be appended yet"
        )
    existing = ledger.candidates_for(stage)
    if len(existing) + len(plans) > ledger.max_candidates_per_stage:
        raise TooManyCandidates(
            f"{stage.value}: {len(existing)} + {len(plans)} plans exceeds "
            f"n={ledger.max_candidates_per_stage}"
        )
    seen = {p.ordinal for p in existing}
    for plan in plans:
        if plan.stage is not stage:
            raise ValueError(f"plan for {plan.stage.value} appended under {stage.value}")
        if plan.ordinal in seen:
            raise ValueError(f"duplicate ordinal {plan.ordinal} for {stage.value}")
        seen.add(plan.ordinal)
    return replace(ledger, candidates=ledger.candidates + plans)


def plans_before(ledger: PlanLedger, stage: Stage) -> list[CandidatePlan]:
    """All candidates whose stage strictly precedes `stage`, in insertion order."""
    return [p for p in ledger.candidates if p.stage.index < stage.index]


# --- persistence -------------------------------------------------------------

def dumps_json(data: Mapping[str, Any]) -> str:
    """Serialize with the repo-wide conventions: 2-space indent, LF, final newline."""
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def save_ledger(ledger: PlanLedger, path: str | Path) -> None:
    Path(path).write_text(dumps_json(ledger.to_dict()), encoding="utf-8", newline="\n")


def load_ledger(path: str | Path) -> PlanLedger:
    return PlanLedger.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_run_ledger(run: RunLedger, path: str | Path) -> None:
    Path(path).write_text(dumps_json(run.to_dict()), encoding="utf-8", newline="\n")


def load_run_ledger(path: str | Path) -> RunLedger:
    return RunLedger.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
