"""Path selection and optimization: single best path, top-k ensemble,
final-code realization, soft voting, metrics, and data splitting.

Selection responses are mapped back to recorded candidate plans by
normalized containment first, then token overlap (threshold 0.6, unique
best required).
"""

from __future__ import annotations

import csv
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .cascade import CascadeConfig, Workdir, check_identifiers, whitelist_union
from .errors import (
    DegenerateTruth,
    EmptySelection,
    InstanceCountMismatch,
    LabelSetMismatch,
    MetricKindMismatch,
    PredictionShapeMismatch,
    StageFailed,
    TooFewRows,
    UnmappablePlan,
    NoCodeFound,
)
from .gateway import GenerationRequest, ProviderConfig, complete
from .model import (
    STAGES,
    CandidatePlan,
    PipelinePath,
    PlanLedger,
    RunLedger,
    Stage,
)
from .prompts import (
    compose_task_text,
    extract_code,
    parse_topk,
    render_data_description,
    render_final,
    render_select_single,
    render_select_topk,
)
from .sandbox import RunnerInvocationError, ScriptRunner, save_manifest

OVERLAP_THRESHOLD = 0.6

PREDICTION_KINDS = ("class_labels", "class_probabilities", "regression_values")

ROW_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ProbabilityMatrix:
    """Per-instance class probabilities over an ordered label set."""

    labels: tuple[str, ...]
    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("label set must be non-empty")
        for row in self.rows:
            if len(row) != len(self.labels):
                raise ValueError("row length differs from label count")
            if any(p < 0.0 or p > 1.0 for p in row):
                raise ValueError("probabilities must lie in [0, 1]")
            if abs(sum(row) - 1.0) > ROW_SUM_TOLERANCE:
                raise ValueError(f"row sums to {sum(row)!r}, not 1")

    @property
    def instance_count(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class PredictionSet:
    """Per-instance outputs of one realized pipeline."""

    kind: str
    values: tuple | ProbabilityMatrix
    instance_count: int

    def __post_init__(self) -> None:
        if self.kind not in PREDICTION_KINDS:
            raise ValueError(f"unknown prediction kind {self.kind!r}")
        if self.instance_count < 1:
            raise ValueError("instance_count must be positive")
        if self.kind == "class_probabilities":
            if not isinstance(self.values, ProbabilityMatrix):
                raise ValueError("probability predictions need a ProbabilityMatrix")
            count = self.values.instance_count
        else:
            count = len(self.values)
        if count != self.instance_count:
            raise ValueError("values length differs from instance_count")


@dataclass(frozen=True)
class SplitScheme:
    kind: str
    seed: int = 0

    FRACTIONS = {
        "holdout_70_30": (0.7, 0.3),
        "three_way_70_10_20": (0.7, 0.1, 0.2),
    }

    def __post_init__(self) -> None:
        if self.kind not in self.FRACTIONS:
            raise ValueError(f"unknown split scheme {self.kind!r}")


# --- plan mapping ---------------------------------------------------------

def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip()


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def token_overlap(text: str, candidate: str) -> float:
    """Fraction of the candidate's tokens that appear in the text."""
    candidate_tokens = _tokens(candidate)
    if not candidate_tokens:
        return 0.0
    return len(candidate_tokens & _tokens(text)) / len(candidate_tokens)


def match_plan(text: str, candidates: list[CandidatePlan]) -> CandidatePlan:
    """Resolve a selection response excerpt to exactly one candidate plan."""
    if not candidates:
        raise UnmappablePlan("no candidates to match against")
    normalized = _normalize(text)
    contained = [
        c for c in candidates if _normalize(c.plan_text) and _normalize(c.plan_text) in normalized
    ]
    if len(contained) == 1:
        return contained[0]

    scored = sorted(
        ((token_overlap(text, c.plan_text), c) for c in candidates),
        key=lambda pair: pair[0],
        reverse=True,
    )
    best_score, best = scored[0]
    runner_up = scored[1][0] if len(scored) > 1 else -1.0
    if best_score >= OVERLAP_THRESHOLD and best_score > runner_up:
        return best
    excerpt = text if len(text) <= 200 else text[:200] + "..."
    names = [f"[{c.stage.value} #{c.ordinal}] {c.plan_text}" for c in candidates]
    raise UnmappablePlan(
        f"no unique plan match (best overlap {best_score:.2f}); candidates: {names}; "
        f"response excerpt: {excerpt!r}"
    )


def _selection_inputs(ledger: PlanLedger) -> tuple[dict[Stage, list[CandidatePlan]], str, str]:
    plans_by_stage = {stage: list(ledger.candidates_for(stage)) for stage in STAGES}
    data = render_data_description(ledger.dataset)
    task = compose_task_text(None, ledger.task)
    return plans_by_stage, data, task


def select_single(ledger: PlanLedger, run: RunLedger, provider: ProviderConfig) -> PipelinePath:
    """Ask the model for one best plan per stage; return the rank-1 path."""
    plans_by_stage, data, task = _selection_inputs(ledger)
    prompt = render_select_single(plans_by_stage, data, task)
    response = complete(GenerationRequest(step_label="select_single", prompt=prompt), provider, run)
    choice = {
        stage: match_plan(response.text, plans_by_stage[stage]) for stage in STAGES
    }
    return PipelinePath(rank=1, choice=choice)


def select_topk(
    ledger: PlanLedger, run: RunLedger, provider: ProviderConfig, k: int
) -> list[PipelinePath]:
    """Ask the model for the top-k stage combinations, ranked."""
    if k < 1:
        raise ValueError("k must be >= 1")
    plans_by_stage, data, task = _selection_inputs(ledger)
    prompt = render_select_topk(plans_by_stage, data, task, k)
    response = complete(GenerationRequest(step_label="select_topk", prompt=prompt), provider, run)
    selection = parse_topk(response.text, k)
    if not selection.entries:
        raise EmptySelection("selection contained no entries")
    paths = []
    for rank, entry in enumerate(selection.entries, start=1):
        choice = {
            stage: match_plan(entry.field_for(stage), plans_by_stage[stage]) for stage in STAGES
        }
        paths.append(PipelinePath(rank=rank, choice=choice))
    return paths


# --- path realization --------------------------------------------------------

def _read_predictions(path: Path, classification: bool, expected_rows: int) -> PredictionSet:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise PredictionShapeMismatch(f"{path}: empty predictions file") from None
        rows = list(reader)
    if len(rows) != expected_rows:
        raise PredictionShapeMismatch(
            f"{path}: {len(rows)} prediction rows for {expected_rows} test rows"
        )
    if header and all(name.startswith("proba_") for name in header):
        raw_labels = [name[len("proba_"):] for name in header]
        order = sorted(range(len(raw_labels)), key=lambda i: raw_labels[i])
        labels = tuple(raw_labels[i] for i in order)
        matrix = ProbabilityMatrix(
            labels=labels,
            rows=tuple(tuple(float(row[i]) for i in order) for row in rows),
        )
        return PredictionSet("class_probabilities", matrix, len(rows))
    if header == ["prediction"]:
        if classification:
            return PredictionSet("class_labels", tuple(r[0] for r in rows), len(rows))
        return PredictionSet("regression_values", tuple(float(r[0]) for r in rows), len(rows))
    raise PredictionShapeMismatch(
        f"{path}: unrecognized prediction columns {header}; expected proba_<label> "
        "columns or a single prediction column"
    )


def realize_path(
    path: PipelinePath,
    ledger: PlanLedger,
    run: RunLedger,
    cfg: CascadeConfig,
    provider: ProviderConfig,
    runner: ScriptRunner,
    workdir: Workdir,
) -> PredictionSet:
    """Generate and execute the end-to-end program for one selected path."""
    classification = ledger.task.is_classification
    predictions_path = workdir.path_predictions(path.rank)
    io_paths = {
        "train_input": str(workdir.train_path),
        "test_input": str(workdir.test_path),
        "predictions_output": str(predictions_path),
    }
    data = render_data_description(ledger.dataset)
    task = compose_task_text(None, ledger.task)
    allow = whitelist_union(cfg)
    label = f"final_rank{path.rank}"

    repair_note = ""
    last_note = "no attempts made"
    for attempt in range(1, cfg.attempt_budget + 1):
        prompt = render_final(path.choice, data, task, io_paths, classification, repair_note)
        response = complete(GenerationRequest(step_label="final_codegen", prompt=prompt), provider, run)
        try:
            code = extract_code(response.text)
        except NoCodeFound as exc:
            run.add_attempt(label, attempt, "parse_error")
            last_note = repair_note = str(exc)
            continue

        violations = check_identifiers(code, allow, stage=None)
        if violations:
            run.add_attempt(label, attempt, "whitelist_violation")
            listing = ", ".join(f"{v.identifier} (line {v.line_number})" for v in violations)
            last_note = f"whitelisted-library violation: {listing}"
            repair_note = f"disallowed imports: {listing}. Use only the allowed libraries."
            continue

        attempt_dir = workdir.path_attempt_dir(path.rank, attempt)
        attempt_dir.mkdir(parents=True, exist_ok=True)
        source = attempt_dir / "code.src"
        source.write_text(code, encoding="utf-8", newline="\n")
        try:
            manifest = runner.exec_script(
                source=source,
                inputs=[io_paths["train_input"], io_paths["test_input"]],
                outputs=[str(predictions_path)],
                timeout_s=cfg.per_stage_timeout,
                log_dir=attempt_dir,
            )
        except RunnerInvocationError as exc:
            run.add_attempt(label, attempt, "exec_error")
            last_note = repair_note = str(exc)
            continue
        save_manifest(manifest, attempt_dir / "manifest.json")

        if manifest.status != "ok":
            status = "timeout" if manifest.status == "timeout" else "exec_error"
            run.add_attempt(label, attempt, status)
            last_note = f"{manifest.status}: {manifest.stderr_tail[-500:]}"
            repair_note = last_note
            continue

        run.add_attempt(label, attempt, "ok")
        path.final_code = code
        return _read_predictions(predictions_path, classification, workdir.expected_test_rows)

    raise StageFailed(label, cfg.attempt_budget, last_note)


# --- ensembling ---------------------------------------------------------------

def ensemble_soft_vote(matrices: list[ProbabilityMatrix]) -> PredictionSet:
    """Uniform-mean soft vote; ties go to the earliest label in the set order."""
    if not matrices:
        raise ValueError("need at least one probability matrix")
    labels = matrices[0].labels
    count = matrices[0].instance_count
    for matrix in matrices[1:]:
        if matrix.labels != labels:
            raise LabelSetMismatch(f"{matrix.labels} != {labels}")
        if matrix.instance_count != count:
            raise InstanceCountMismatch(f"{matrix.instance_count} != {count}")

    k = len(matrices)
    winners = []
    for i in range(count):
        means = [sum(m.rows[i][j] for m in matrices) / k for j in range(len(labels))]
        best = 0
        for j in range(1, len(labels)):
            if means[j] > means[best]:
                best = j
        winners.append(labels[best])
    return PredictionSet("class_labels", tuple(winners), count)


def ensemble_mean(vectors: list[PredictionSet]) -> PredictionSet:
    """Elementwise mean of regression prediction vectors."""
    if not vectors:
        raise ValueError("need at least one prediction vector")
    for prediction_set in vectors:
        if prediction_set.kind != "regression_values":
            raise MetricKindMismatch("ensemble_mean needs regression predictions")
        if prediction_set.instance_count != vectors[0].instance_count:
            raise InstanceCountMismatch(
                f"{prediction_set.instance_count} != {vectors[0].instance_count}"
            )
    k = len(vectors)
    count = vectors[0].instance_count
    means = tuple(sum(v.values[i] for v in vectors) / k for i in range(count))
    return PredictionSet("regression_values", means, count)


# --- metrics --------------------------------------------------------------------

def _average_ranks(scores: list[float]) -> list[float]:
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        average = (i + j) / 2 + 1  # 1-based average rank over the tie block
        for position in range(i, j + 1):
            ranks[order[position]] = average
        i = j + 1
    return ranks


def score(metric: str, predictions: PredictionSet, truth: PredictionSet) -> float:
    """ACC, RMSE, or rank-sum ROC_AUC (ties contribute one half)."""
    if predictions.instance_count != truth.instance_count:
        raise InstanceCountMismatch(
            f"{predictions.instance_count} predictions vs {truth.instance_count} truths"
        )
    if metric == "ACC":
        if predictions.kind != "class_labels" or truth.kind != "class_labels":
            raise MetricKindMismatch("ACC requires class labels on both sides")
        hits = sum(1 for p, t in zip(predictions.values, truth.values) if str(p) == str(t))
        return hits / truth.instance_count
    if metric == "RMSE":
        if predictions.kind != "regression_values" or truth.kind != "regression_values":
            raise MetricKindMismatch("RMSE requires regression values on both sides")
        total = sum((p - t) ** 2 for p, t in zip(predictions.values, truth.values))
        return math.sqrt(total / truth.instance_count)
    if metric == "ROC_AUC":
        if predictions.kind != "class_probabilities":
            raise MetricKindMismatch("ROC_AUC requires class probabilities")
        if truth.kind != "class_labels":
            raise MetricKindMismatch("ROC_AUC requires class-label truth")
        matrix = predictions.values
        distinct = sorted({str(t) for t in truth.values})
        if len(distinct) == 1:
            raise DegenerateTruth("ROC_AUC undefined for single-class truth")
        if len(distinct) != 2:
            raise MetricKindMismatch("ROC_AUC requires binary truth")
        positive = distinct[1]
        if positive not in matrix.labels:
            raise MetricKindMismatch(f"no probability column for positive label {positive!r}")
        column = matrix.labels.index(positive)
        scores = [row[column] for row in matrix.rows]
        flags = [str(t) == positive for t in truth.values]
        n_pos = sum(flags)
        n_neg = len(flags) - n_pos
        ranks = _average_ranks(scores)
        rank_sum = sum(r for r, flag in zip(ranks, flags) if flag)
        return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    raise MetricKindMismatch(f"unknown metric {metric!r}")


# --- splitting ---------------------------------------------------------------------

def split(row_count: int, scheme: SplitScheme) -> list[list[int]]:
    """Seed-deterministic shuffled partition; remainder rows go to train."""
    if row_count < 10:
        raise TooFewRows(f"need at least 10 rows, got {row_count}")
    fractions = SplitScheme.FRACTIONS[scheme.kind]
    sizes = [math.floor(f * row_count) for f in fractions]
    sizes[0] += row_count - sum(sizes)

    indices = list(range(row_count))
    random.Random(scheme.seed).shuffle(indices)
    parts = []
    start = 0
    for size in sizes:
        parts.append(indices[start : start + size])
        start += size
    return parts
