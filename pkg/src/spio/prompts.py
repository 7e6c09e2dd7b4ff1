"""Prompt templates and parsers for the three structured output kinds.

Templates live as package files and are rendered by plain slot
substitution, so identical contexts produce byte-identical prompts. The
parsers cover fenced code blocks, enumerated plan proposals, and the
top-k JSON selection format.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import (
    EmptySelection,
    EmptyStagePlans,
    MalformedJson,
    MissingSlot,
    NoCodeFound,
    NoPlansFound,
    SchemaViolation,
)
from .model import STAGE_PHRASES, CandidatePlan, DataDescription, Stage, TaskDescription

TOPK_FIELDS = ("preprocess", "feature_engineering", "model_selection", "optimal_hyper_tool")

_NUMBER_WORDS = {
    1: "one", 2: "two", 3: "three", 4: "four", 5: "five",
    6: "six", 7: "seven", 8: "eight", 9: "nine", 10: "ten",
}

_SAVE_CSV_INSTRUCTION = "Your final output should save the preprocessed data as CSV files."
_SENTINEL_INSTRUCTION = (
    "Your final output should print exactly one line of the form "
    "VALIDATION_SCORE: <score> with the validation score."
)
_PROBA_INSTRUCTION = (
    "Write the predictions as a CSV file with a header row and one probability "
    "column per class, named proba_<label>, with classes in ascending label order."
)
_REGRESSION_INSTRUCTION = (
    "Write the predictions as a CSV file with a header row and a single column named prediction."
)


def _number_word(n: int) -> str:
    return _NUMBER_WORDS.get(n, str(n))


def load_template(name: str) -> str:
    return resources.files("spio.templates").joinpath(f"{name}.tmpl").read_text(encoding="utf-8")


def _render(template: str, slots: dict[str, str]) -> str:
    rendered = template
    for name, value in slots.items():
        rendered = rendered.replace("{" + name + "}", value)
    leftover = re.search(r"\{(" + "|".join(map(re.escape, slots)) + r")\}", rendered)
    if leftover:  # a slot value itself re-introduced a token; treat as unfilled
        raise MissingSlot(leftover.group(1))
    if not rendered.endswith("\n"):
        rendered += "\n"
    return rendered


def _require(value: str | None, slot: str) -> str:
    if value is None or not str(value).strip():
        raise MissingSlot(slot)
    return str(value)


@dataclass
class PromptContext:
    """Everything a code-generation or planning prompt can embed."""

    task_text: str = ""
    data_summary: str = ""
    io_paths: dict[str, str] = field(default_factory=dict)
    prior_code: str | None = None
    prior_score: float | None = None
    plan_ledger_view: str = ""
    repair_note: str = ""


def render_data_description(desc: DataDescription) -> str:
    """Deterministic plain-text rendering of a dataset profile."""
    lines = [f"shape: {desc.row_count} rows x {len(desc.column_specs)} columns", "columns:"]
    for name, dtype in desc.column_specs:
        lines.append(f"- {name} ({dtype}, null ratio {desc.null_ratio[name]:.4f})")
    lines.append("sample records:")
    for i, record in enumerate(desc.sample_records, 1):
        cells = ", ".join(f"{k}={'' if v is None else v}" for k, v in record.items())
        lines.append(f"{i}) {cells}")
    return "\n".join(lines)


def compose_task_text(stage: Stage | None, task: TaskDescription) -> str:
    """The {task} slot value: a noun phrase naming the stage and prediction task."""
    phrase = STAGE_PHRASES[stage] if stage is not None else "an end-to-end modeling pipeline"
    text = (
        f"{phrase} for a {task.task_kind.replace('_', ' ')} task "
        f"predicting '{task.target_column}' (metric: {task.metric}"
    )
    if task.background:
        text += f"; background: {task.background.rstrip('.')}"
    return text + ")"


def _repair_block(note: str) -> str:
    if not note:
        return ""
    return f"\nPrevious attempt failed:\n{note}\nFix the issue and regenerate the full code.\n"


def render_codegen(stage: Stage, ctx: PromptContext) -> str:
    """Baseline code-generation prompt for one stage."""
    task = _require(ctx.task_text, "task")
    data = _require(ctx.data_summary, "data")
    train_in = _require(ctx.io_paths.get("train_input"), "train_input_path")
    test_in = _require(ctx.io_paths.get("test_input"), "test_input_path")

    if stage.carries_summary:
        train_out = _require(ctx.io_paths.get("train_output"), "train_output_path")
        test_out = _require(ctx.io_paths.get("test_output"), "test_output_path")
        output_block = (
            "Output files (save using to_csv) - only for preprocessing or feature engineering:\n"
            f"- Train data output path: {train_out}\n"
            f"- Test data output path: {test_out}\n\n"
        )
        final_instruction = _SAVE_CSV_INSTRUCTION
    else:
        output_block = ""
        final_instruction = _SENTINEL_INSTRUCTION

    if stage is Stage.PREPROCESS:
        previous_block = ""
    else:
        code = _require(ctx.prior_code, "code")
        previous_block = f"\nPrevious Code (excluding preprocessing): {code}\n"

    return _render(
        load_template("codegen"),
        {
            "task": task,
            "final_instruction": final_instruction,
            "train_input_path": train_in,
            "test_input_path": test_in,
            "output_files_block": output_block,
            "data": data,
            "previous_code_block": previous_block,
            "repair_block": _repair_block(ctx.repair_note),
        },
    )


def render_planning(stage: Stage, ctx: PromptContext, n: int) -> str:
    """Plan-proposal prompt: up to n alternatives for the stage just executed."""
    task = _require(ctx.task_text, "task")
    code = _require(ctx.prior_code, "code")
    if stage.carries_summary:
        summary_or_score = _require(ctx.data_summary, "data")
    else:
        if ctx.prior_score is None:
            raise MissingSlot("validation_score")
        summary_or_score = f"Validation Score: {ctx.prior_score}"

    prior_block = ""
    if ctx.plan_ledger_view:
        prior_block = f"\nPreviously Generated Candidate Plans:\n{ctx.plan_ledger_view}\n"

    return _render(
        load_template("planning"),
        {
            "task": task,
            "n_word": _number_word(n),
            "code": code,
            "summary_or_score": summary_or_score,
            "prior_plans_block": prior_block,
        },
    )


def render_plan_list(plans: list[CandidatePlan]) -> str:
    """Numbered one-line-per-plan rendering used by both selection prompts."""
    parts = []
    for plan in plans:
        line = f"\n{plan.ordinal}. {plan.plan_text}"
        extras = []
        if plan.scenario:
            extras.append(f"scenario: {plan.scenario}")
        if plan.rationale:
            extras.append(f"rationale: {plan.rationale}")
        if extras:
            line += f" ({'; '.join(extras)})"
        parts.append(line)
    return "".join(parts)


def _plan_slots(plans_by_stage: dict[Stage, list[CandidatePlan]]) -> dict[str, str]:
    for stage in Stage:
        if not plans_by_stage.get(stage):
            raise EmptyStagePlans(stage.value)
    return {
        "preprocess_plan": render_plan_list(plans_by_stage[Stage.PREPROCESS]),
        "feature_engineer_plan": render_plan_list(plans_by_stage[Stage.FEATURE_ENGINEERING]),
        "model_select_plan": render_plan_list(plans_by_stage[Stage.MODEL_SELECTION]),
        "hyper_opt_plan": render_plan_list(plans_by_stage[Stage.HYPERPARAMETER_TUNING]),
    }


def render_select_single(
    plans_by_stage: dict[Stage, list[CandidatePlan]], data: str, task: str
) -> str:
    """Single-best-path selection prompt over all candidate plans."""
    slots = {"data": _require(data, "data"), "task": _require(task, "task")}
    slots.update(_plan_slots(plans_by_stage))
    return _render(load_template("select_single"), slots)


def render_select_topk(
    plans_by_stage: dict[Stage, list[CandidatePlan]], data: str, task: str, k: int
) -> str:
    """Top-k selection prompt; the response must follow the JSON schema block."""
    if k < 1:
        raise ValueError("k must be >= 1")
    slots = {
        "data": _require(data, "data"),
        "task": _require(task, "task"),
        "k_word": _number_word(k),
        "pipeline_word": "pipeline" if k == 1 else "pipelines",
    }
    slots.update(_plan_slots(plans_by_stage))
    return _render(load_template("select_topk"), slots)


def render_final(
    choice: dict[Stage, CandidatePlan],
    data: str,
    task: str,
    io_paths: dict[str, str],
    classification: bool,
    repair_note: str = "",
) -> str:
    """End-to-end code prompt for one selected pipeline path."""
    slots = {
        "task": _require(task, "task"),
        "data": _require(data, "data"),
        "train_input_path": _require(io_paths.get("train_input"), "train_input_path"),
        "test_input_path": _require(io_paths.get("test_input"), "test_input_path"),
        "predictions_output_path": _require(
            io_paths.get("predictions_output"), "predictions_output_path"
        ),
        "prediction_format_instruction": _PROBA_INSTRUCTION if classification else _REGRESSION_INSTRUCTION,
        "preprocess_plan": _require(choice[Stage.PREPROCESS].plan_text, "preprocess_plan"),
        "feature_engineer_plan": _require(
            choice[Stage.FEATURE_ENGINEERING].plan_text, "feature_engineer_plan"
        ),
        "model_select_plan": _require(choice[Stage.MODEL_SELECTION].plan_text, "model_select_plan"),
        "hyper_opt_plan": _require(
            choice[Stage.HYPERPARAMETER_TUNING].plan_text, "hyper_opt_plan"
        ),
        "repair_block": _repair_block(repair_note),
    }
    return _render(load_template("final"), slots)


# --- output parsing ---------------------------------------------------------

_FENCE = re.compile(r"```[A-Za-z0-9_+-]*\r?\n(.*?)```", re.DOTALL)
_CODE_LINE = re.compile(r"^\s*(import\s+\w|from\s+[\w.]+\s+import\s|\w[\w.\[\]\"' ]*=[^=])")


def extract_code(llm_text: str) -> str:
    """Contents of the first fenced block, or the full text if it looks like code."""
    match = _FENCE.search(llm_text)
    if match:
        return match.group(1)
    if any(_CODE_LINE.match(line) for line in llm_text.splitlines()):
        return llm_text
    raise NoCodeFound("response contains neither a fenced code block nor plausible code")


@dataclass(frozen=True)
class PlanProposal:
    plan_text: str
    rationale: str = ""
    scenario: str = ""


@dataclass(frozen=True)
class ParsedPlanSet:
    plans: tuple[PlanProposal, ...]
    recommended_index: int | None = None


_SECTION_HEADER = re.compile(r"^(?:Method|Plan|Option)\s*(\d+)\s*[:.)-]?\s*(.*)$", re.IGNORECASE)
_LIST_HEADER = re.compile(r"^(\d+)[.)]\s+(.*)$")
_SCENARIO_LINE = re.compile(r"^Scenario\s*:\s*(.*)$", re.IGNORECASE)
_RATIONALE_LINE = re.compile(r"^(?:Rationale|Why(?: it is recommended)?)\s*:\s*(.*)$", re.IGNORECASE)
_RECOMMEND_LINE = re.compile(
    r"recommend(?:ation)?\b[^\d]*?(?:method|plan|option)?\s*(\d+)", re.IGNORECASE
)


def extract_plans(llm_text: str, n: int) -> ParsedPlanSet:
    """Parse enumerated method sections into at most n plan proposals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sections: list[dict[str, list[str] | str]] = []
    current: dict | None = None
    recommendation_zone = False
    for raw_line in llm_text.splitlines():
        line = raw_line.strip()
        if re.match(r"^Recommendation\b", line, re.IGNORECASE):
            recommendation_zone = True
            current = None
            continue
        if recommendation_zone:
            continue
        header = _SECTION_HEADER.match(line) or _LIST_HEADER.match(line)
        if header:
            current = {"text": [header.group(2).strip()], "scenario": "", "rationale": ""}
            sections.append(current)
            continue
        if current is None or not line:
            continue
        scenario = _SCENARIO_LINE.match(line)
        if scenario:
            current["scenario"] = scenario.group(1).strip()
            continue
        rationale = _RATIONALE_LINE.match(line)
        if rationale:
            current["rationale"] = rationale.group(1).strip()
            continue
        current["text"].append(line)

    proposals = []
    for section in sections:
        text = " ".join(part for part in section["text"] if part).strip()
        if text:
            proposals.append(
                PlanProposal(plan_text=text, rationale=section["rationale"], scenario=section["scenario"])
            )
    if not proposals:
        raise NoPlansFound("no enumerated methods found in response")
    proposals = proposals[:n]

    recommended = None
    match = _RECOMMEND_LINE.search(llm_text)
    if match:
        index = int(match.group(1))
        if 1 <= index <= len(proposals):
            recommended = index
    return ParsedPlanSet(plans=tuple(proposals), recommended_index=recommended)


@dataclass(frozen=True)
class TopKEntry:
    rank_label: str
    preprocess: str
    feature_engineering: str
    model_selection: str
    optimal_hyper_tool: str

    def field_for(self, stage: Stage) -> str:
        return {
            Stage.PREPROCESS: self.preprocess,
            Stage.FEATURE_ENGINEERING: self.feature_engineering,
            Stage.MODEL_SELECTION: self.model_selection,
            Stage.HYPERPARAMETER_TUNING: self.optimal_hyper_tool,
        }[stage]


@dataclass(frozen=True)
class TopKSelection:
    entries: tuple[TopKEntry, ...]

    def to_json(self) -> str:
        payload = [
            {
                "rank": entry.rank_label,
                "best_combine": {name: getattr(entry, name) for name in TOPK_FIELDS},
            }
            for entry in self.entries
        ]
        return json.dumps(payload, indent=2, ensure_ascii=False)


def parse_topk(llm_text: str, k: int) -> TopKSelection:
    """Parse the top-k JSON selection; returns the first k entries in order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    text = llm_text
    match = _FENCE.search(text)
    if match:
        text = match.group(1)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"selection output is not valid JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise MalformedJson("selection output must be a JSON array")
    if not payload:
        raise EmptySelection("selection output is an empty array")

    entries: list[TopKEntry] = []
    seen_ranks: set[str] = set()
    for obj in payload[:k]:
        if not isinstance(obj, dict):
            raise MalformedJson("selection entries must be JSON objects")
        if "rank" not in obj:
            raise SchemaViolation("rank")
        if "best_combine" not in obj or not isinstance(obj["best_combine"], dict):
            raise SchemaViolation("best_combine")
        combine = obj["best_combine"]
        values = {}
        for name in TOPK_FIELDS:
            if name not in combine:
                raise SchemaViolation(name)
            value = str(combine[name])
            if not value.strip():
                raise SchemaViolation(name, f"empty field: {name}")
            values[name] = value
        rank = str(obj["rank"])
        if rank in seen_ranks:
            raise SchemaViolation("rank", f"duplicate rank label: {rank}")
        seen_ranks.add(rank)
        entries.append(TopKEntry(rank_label=rank, **values))
    return TopKSelection(entries=tuple(entries))
