"""The four-stage cascade: per stage, generate baseline code, execute it
under the sandbox runner with bounded repair retries, then propose
candidate plans into the ledger.

Stages run strictly in order; a stage that exhausts its attempt budget
fails the whole cascade. Static whitelist rejections consume an attempt
without a sandbox dispatch.
"""

from __future__ import annotations

import ast
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    NoCodeFound,
    NoPlansFound,
    OutOfOrderStage,
    PlanningFailed,
    StageArtifactMissing,
    StageFailed,
)
from .gateway import GenerationRequest, ProviderConfig, complete
from .model import (
    STAGE_PHRASES,
    STAGES,
    CandidatePlan,
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
from .prompts import (
    PromptContext,
    compose_task_text,
    extract_code,
    extract_plans,
    render_codegen,
    render_data_description,
    render_planning,
)
from .sandbox import Manifest, RunnerInvocationError, ScriptRunner, save_manifest

STDERR_TAIL_LIMIT = 2000

_PRE_ALLOW = frozenset({"numpy", "pandas"})
_FEAT_ALLOW = _PRE_ALLOW | frozenset(
    {
        "warnings",
        "sklearn.impute.SimpleImputer",
        "sklearn.preprocessing.LabelEncoder",
        "sklearn.preprocessing.MinMaxScaler",
        "sklearn.preprocessing.PolynomialFeatures",
        "sklearn.preprocessing.RobustScaler",
        "sklearn.preprocessing.StandardScaler",
    }
)
_MODEL_ALLOW = _PRE_ALLOW | frozenset(
    {
        "sklearn.compose.ColumnTransformer",
        "sklearn.ensemble.GradientBoostingRegressor",
        "sklearn.ensemble.RandomForestClassifier",
        "sklearn.ensemble.RandomForestRegressor",
        "sklearn.impute.SimpleImputer",
        "sklearn.linear_model.Lasso",
        "sklearn.linear_model.LinearRegression",
        "sklearn.linear_model.LogisticRegression",
        "sklearn.linear_model.Ridge",
        "sklearn.metrics.accuracy_score",
        "sklearn.metrics.classification_report",
        "sklearn.metrics.mean_absolute_error",
        "sklearn.metrics.mean_squared_error",
        "sklearn.metrics.r2_score",
        "sklearn.metrics.roc_auc_score",
        "sklearn.model_selection.train_test_split",
        "sklearn.multioutput.MultiOutputClassifier",
        "sklearn.pipeline.Pipeline",
        "sklearn.preprocessing.LabelEncoder",
        "sklearn.preprocessing.OneHotEncoder",
        "sklearn.preprocessing.StandardScaler",
    }
)
_HYPER_ALLOW = _FEAT_ALLOW | _MODEL_ALLOW | frozenset(
    {
        "sklearn.model_selection.GridSearchCV",
        "sklearn.svm.SVC",
        "xgboost.XGBClassifier",
    }
)

DEFAULT_WHITELIST: dict[Stage, frozenset[str]] = {
    Stage.PREPROCESS: _PRE_ALLOW,
    Stage.FEATURE_ENGINEERING: _FEAT_ALLOW,
    Stage.MODEL_SELECTION: _MODEL_ALLOW,
    Stage.HYPERPARAMETER_TUNING: _HYPER_ALLOW,
}

FULL_PIPELINE_ALLOW = frozenset().union(*DEFAULT_WHITELIST.values())


@dataclass(frozen=True)
class WhitelistViolation:
    # stage is None when checking against the full-pipeline union allow-set
    stage: Stage | None
    identifier: str
    line_number: int
    fallback: bool = False


@dataclass
class CascadeConfig:
    max_candidates: int = 2
    attempt_budget: int = 10
    per_stage_timeout: float = 600.0
    whitelist: dict[Stage, frozenset[str]] = field(
        default_factory=lambda: dict(DEFAULT_WHITELIST)
    )
    workdir: Path = Path("work")

    def __post_init__(self) -> None:
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if self.attempt_budget < 1:
            raise ValueError("attempt_budget must be >= 1")
        missing = [s.value for s in STAGES if s not in self.whitelist]
        if missing:
            raise ValueError(f"whitelist must cover all stages, missing: {missing}")
        self.workdir = Path(self.workdir)


# --- whitelist enforcement ---------------------------------------------------

def _is_stdlib(identifier: str) -> bool:
    return identifier.split(".", 1)[0] in sys.stdlib_module_names


def _within_allowed(identifier: str, allow: frozenset[str]) -> bool:
    return any(identifier == entry or identifier.startswith(entry + ".") for entry in allow)


def _container_of_allowed(identifier: str, allow: frozenset[str]) -> bool:
    return any(entry.startswith(identifier + ".") for entry in allow)


def _import_allowed(identifier: str, allow: frozenset[str]) -> bool:
    # Importing inside an allowed tree is fine; importing a module that
    # merely contains allowed entries is fine too, because every attribute
    # reached through it is checked separately.
    return (
        _is_stdlib(identifier)
        or _within_allowed(identifier, allow)
        or _container_of_allowed(identifier, allow)
    )


def _attribute_chain(node: ast.Attribute) -> tuple[str, list[str]] | None:
    parts: list[str] = []
    current: ast.expr = node
    while isinstance(current, ast.Attribute):
        parts.append(current.attr)
        current = current.value
    if isinstance(current, ast.Name):
        return current.id, list(reversed(parts))
    return None


_IMPORT_LINE = re.compile(r"^\s*import\s+(.+)$")
_FROM_LINE = re.compile(r"^\s*from\s+([\w.]+)\s+import\s+(.+)$")


def _regex_scan(code: str, stage: Stage | None, allow: frozenset[str]) -> list[WhitelistViolation]:
    violations = []
    for lineno, line in enumerate(code.splitlines(), start=1):
        from_match = _FROM_LINE.match(line)
        if from_match:
            module = from_match.group(1)
            for name in from_match.group(2).split(","):
                name = name.strip().split(" as ")[0].strip()
                if not name:
                    continue
                target = f"{module}.{name}" if name != "*" else f"{module}.*"
                checkable = module if name == "*" else target
                ok = (
                    _is_stdlib(module)
                    or (_within_allowed(checkable, allow) if name == "*" else _import_allowed(target, allow))
                )
                if not ok:
                    violations.append(WhitelistViolation(stage, target, lineno, fallback=True))
            continue
        import_match = _IMPORT_LINE.match(line)
        if import_match:
            for name in import_match.group(1).split(","):
                module = name.strip().split(" as ")[0].strip()
                if module and not _import_allowed(module, allow):
                    violations.append(WhitelistViolation(stage, module, lineno, fallback=True))
    return violations


def whitelist_union(cfg: CascadeConfig) -> frozenset[str]:
    """Union of all per-stage allow-sets; used for full-pipeline code."""
    return frozenset().union(*cfg.whitelist.values())


def check_whitelist(code: str, stage: Stage, cfg: CascadeConfig) -> list[WhitelistViolation]:
    """All identifiers the code imports or reaches that sit outside the
    stage's allow-set plus the standard library. Empty means compliant."""
    return check_identifiers(code, cfg.whitelist[stage], stage)


def check_identifiers(
    code: str, allow: frozenset[str], stage: Stage | None
) -> list[WhitelistViolation]:
    if not code.strip():
        raise ValueError("code must be non-empty")
    try:
        tree = ast.parse(code)
    except SyntaxError:
        return _regex_scan(code, stage, allow)

    violations: list[WhitelistViolation] = []
    seen: set[tuple[str, int]] = set()

    def report(identifier: str, lineno: int) -> None:
        if (identifier, lineno) not in seen:
            seen.add((identifier, lineno))
            violations.append(WhitelistViolation(stage, identifier, lineno))

    bindings: dict[str, str] = {}
    attribute_nodes = [n for n in ast.walk(tree) if isinstance(n, ast.Attribute)]
    inner_ids = {id(n.value) for n in attribute_nodes}

    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                module = alias.name
                if not _import_allowed(module, allow):
                    report(module, node.lineno)
                if alias.asname:
                    bindings[alias.asname] = module
                else:
                    root = module.split(".", 1)[0]
                    bindings[root] = root
        elif isinstance(node, ast.ImportFrom):
            if node.level:
                report("." * node.level + (node.module or ""), node.lineno)
                continue
            module = node.module or ""
            for alias in node.names:
                if alias.name == "*":
                    if not (_is_stdlib(module) or _within_allowed(module, allow)):
                        report(f"{module}.*", node.lineno)
                    continue
                target = f"{module}.{alias.name}"
                if not _import_allowed(target, allow):
                    report(target, node.lineno)
                bindings[alias.asname or alias.name] = target

    for node in attribute_nodes:
        if id(node) in inner_ids:
            continue  # only the outermost link of each chain
        chain = _attribute_chain(node)
        if chain is None:
            continue
        root, attrs = chain
        base = bindings.get(root)
        if base is None:
            continue
        resolved = ".".join([base, *attrs])
        if not _import_allowed(resolved, allow):
            report(resolved, node.lineno)

    return violations


# --- workdir layout -----------------------------------------------------------

@dataclass
class Workdir:
    """Filesystem layout for one cascade run."""

    root: Path
    train_path: Path
    test_path: Path
    expected_test_rows: int

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def stage_dir(self, stage: Stage) -> Path:
        return self.root / f"stage_{stage.index + 1}"

    def attempt_dir(self, stage: Stage, attempt: int) -> Path:
        return self.stage_dir(stage) / f"attempt_{attempt}"

    def stage_outputs(self, stage: Stage) -> dict[str, Path]:
        base = self.stage_dir(stage)
        return {"train": base / "train.csv", "test": base / "test.csv"}

    def io_paths(self, stage: Stage) -> dict[str, str]:
        if stage is Stage.PREPROCESS:
            inputs = {"train": self.train_path, "test": self.test_path}
        elif stage is Stage.FEATURE_ENGINEERING:
            inputs = self.stage_outputs(Stage.PREPROCESS)
        else:
            inputs = self.stage_outputs(Stage.FEATURE_ENGINEERING)
        paths = {
            "train_input": str(inputs["train"]),
            "test_input": str(inputs["test"]),
        }
        if stage.carries_summary:
            outputs = self.stage_outputs(stage)
            paths["train_output"] = str(outputs["train"])
            paths["test_output"] = str(outputs["test"])
        return paths

    def path_dir(self, rank: int) -> Path:
        return self.root / f"path_{rank}"

    def path_predictions(self, rank: int) -> Path:
        return self.path_dir(rank) / "predictions.csv"

    def path_attempt_dir(self, rank: int, attempt: int) -> Path:
        return self.path_dir(rank) / f"attempt_{attempt}"


# --- the cascade ----------------------------------------------------------------

def _codegen_data_text(ledger: PlanLedger, stage: Stage) -> str:
    parts = [render_data_description(ledger.dataset)]
    latest: StageArtifact | None = None
    for earlier in STAGES[: stage.index]:
        artifact = ledger.artifacts.get(earlier)
        if artifact is not None and artifact.summary is not None:
            latest = artifact
    if latest is not None:
        parts.append(
            f"Latest processed data summary (after {STAGE_PHRASES[latest.stage]}):\n"
            + render_data_description(latest.summary)
        )
    return "\n\n".join(parts)


def _dispatch(
    runner: ScriptRunner,
    workdir: Workdir,
    stage: Stage,
    attempt: int,
    code: str,
    cfg: CascadeConfig,
) -> Manifest:
    attempt_dir = workdir.attempt_dir(stage, attempt)
    attempt_dir.mkdir(parents=True, exist_ok=True)
    source = attempt_dir / "code.src"
    source.write_text(code, encoding="utf-8", newline="\n")
    io = workdir.io_paths(stage)
    inputs = [io["train_input"], io["test_input"]]
    outputs = [io["train_output"], io["test_output"]] if stage.carries_summary else []
    manifest = runner.exec_script(
        source=source,
        inputs=inputs,
        outputs=outputs,
        timeout_s=cfg.per_stage_timeout,
        log_dir=attempt_dir,
    )
    save_manifest(manifest, attempt_dir / "manifest.json")
    return manifest


def _classify_manifest(
    manifest: Manifest, stage: Stage, workdir: Workdir
) -> tuple[StageArtifact | None, str]:
    """Map a manifest to (artifact-or-None, failure note)."""
    if manifest.status == "timeout":
        return None, f"execution timed out after {manifest.wall_time:.1f}s"
    if manifest.status == "nonzero_exit":
        return None, f"exit code {manifest.exit_code}\n{manifest.stderr_tail[-STDERR_TAIL_LIMIT:]}"
    if manifest.status == "missing_output":
        missing = [p for p, doc in manifest.outputs.items() if "error" in doc]
        return None, f"declared outputs missing or unreadable: {missing}"

    if stage.carries_summary:
        outputs = workdir.stage_outputs(stage)
        try:
            test_profile = manifest.output_profile(outputs["test"])
            train_profile = manifest.output_profile(outputs["train"])
        except (KeyError, RunnerInvocationError) as exc:
            return None, str(exc)
        if test_profile.row_count != workdir.expected_test_rows:
            return None, (
                f"test row count changed: expected {workdir.expected_test_rows}, "
                f"got {test_profile.row_count}; the length of the test set must remain unchanged"
            )
        return ("summary", train_profile), ""
    if manifest.score_error is not None:
        return None, "multiple VALIDATION_SCORE lines printed"
    if manifest.validation_score is None:
        return None, "no VALIDATION_SCORE line found in stdout"
    return ("score", manifest.validation_score), ""


def execute_stage(
    stage: Stage,
    ledger: PlanLedger,
    run: RunLedger,
    cfg: CascadeConfig,
    provider: ProviderConfig,
    runner: ScriptRunner,
    workdir: Workdir,
) -> tuple[PlanLedger, StageArtifact]:
    """Generate, vet, and execute baseline code for one stage.

    Returns the extended ledger and the recorded artifact. Every attempt
    is logged; at most `attempt_budget` attempts (and at most that many
    sandbox dispatches) are made before StageFailed.
    """
    for earlier in STAGES[: stage.index]:
        if earlier not in ledger.artifacts:
            raise OutOfOrderStage(f"cannot execute {stage.value} before {earlier.value}")

    prior_code = None
    if stage is not Stage.PREPROCESS:
        prior_code = ledger.artifacts[STAGES[stage.index - 1]].code

    repair_note = ""
    last_note = "no attempts made"
    for attempt in range(1, cfg.attempt_budget + 1):
        ctx = PromptContext(
            task_text=compose_task_text(stage, ledger.task),
            data_summary=_codegen_data_text(ledger, stage),
            io_paths=workdir.io_paths(stage),
            prior_code=prior_code,
            repair_note=repair_note,
        )
        prompt = render_codegen(stage, ctx)
        response = complete(
            GenerationRequest(step_label=f"codegen_{stage.value}", prompt=prompt), provider, run
        )

        try:
            code = extract_code(response.text)
        except NoCodeFound as exc:
            run.add_attempt(stage.value, attempt, "parse_error")
            last_note = str(exc)
            repair_note = f"{exc}"
            continue

        violations = check_whitelist(code, stage, cfg)
        if violations:
            run.add_attempt(stage.value, attempt, "whitelist_violation")
            listing = ", ".join(f"{v.identifier} (line {v.line_number})" for v in violations)
            last_note = f"whitelisted-library violation: {listing}"
            repair_note = (
                f"disallowed imports for this stage: {listing}. "
                "Use only the allowed libraries."
            )
            continue

        try:
            manifest = _dispatch(runner, workdir, stage, attempt, code, cfg)
        except RunnerInvocationError as exc:
            run.add_attempt(stage.value, attempt, "exec_error")
            last_note = str(exc)
            repair_note = last_note[:STDERR_TAIL_LIMIT]
            continue

        outcome, note = _classify_manifest(manifest, stage, workdir)
        if outcome is None:
            status = "timeout" if manifest.status == "timeout" else "exec_error"
            run.add_attempt(stage.value, attempt, status)
            last_note = note
            repair_note = note[:STDERR_TAIL_LIMIT]
            continue

        run.add_attempt(stage.value, attempt, "ok")
        kind, value = outcome
        artifact = StageArtifact(
            stage=stage,
            code=code,
            attempt_count=attempt,
            summary=value if kind == "summary" else None,
            validation_score=value if kind == "score" else None,
        )
        ledger = record_artifact(ledger, artifact, repair=stage in ledger.artifacts)
        return ledger, artifact

    raise StageFailed(stage.value, cfg.attempt_budget, last_note)


def _plans_view(ledger: PlanLedger, stage: Stage) -> str:
    lines = [
        f"- [{STAGE_PHRASES[p.stage]} plan {p.ordinal}] {p.plan_text}"
        for p in plans_before(ledger, stage)
    ]
    return "\n".join(lines)


def plan_stage(
    stage: Stage,
    ledger: PlanLedger,
    run: RunLedger,
    cfg: CascadeConfig,
    provider: ProviderConfig,
) -> tuple[PlanLedger, list[CandidatePlan]]:
    """Propose up to n alternative strategies for an executed stage."""
    artifact = ledger.artifacts.get(stage)
    if artifact is None:
        raise StageArtifactMissing(f"no artifact recorded for {stage.value}")
    existing = ledger.candidates_for(stage)
    remaining = ledger.max_candidates_per_stage - len(existing)

    if artifact.summary is not None:
        data_summary = (
            render_data_description(artifact.summary)
            + "\n\nOriginal data summary:\n"
            + render_data_description(ledger.dataset)
        )
        prior_score = None
    else:
        data_summary = ""
        prior_score = artifact.validation_score

    ctx = PromptContext(
        task_text=compose_task_text(stage, ledger.task),
        data_summary=data_summary,
        prior_code=artifact.code,
        prior_score=prior_score,
        plan_ledger_view=_plans_view(ledger, stage),
    )
    prompt = render_planning(stage, ctx, n=remaining)

    parsed = None
    for _ in range(2):  # one re-ask retry on unparseable output
        response = complete(
            GenerationRequest(step_label=f"planning_{stage.value}", prompt=prompt), provider, run
        )
        try:
            parsed = extract_plans(response.text, n=remaining)
            break
        except NoPlansFound:
            continue
    if parsed is None:
        raise PlanningFailed(f"no parseable plans for {stage.value} after one retry")

    plans = [
        CandidatePlan(
            stage=stage,
            ordinal=len(existing) + i + 1,
            plan_text=proposal.plan_text,
            rationale=proposal.rationale,
            scenario=proposal.scenario,
        )
        for i, proposal in enumerate(parsed.plans)
    ]
    ledger = append_candidates(ledger, stage, plans)
    return ledger, plans


def run_cascade(
    train_path: str | Path,
    test_path: str | Path,
    task: TaskDescription,
    cfg: CascadeConfig,
    provider: ProviderConfig,
    runner: ScriptRunner,
) -> tuple[PlanLedger, RunLedger, Workdir]:
    """Run all four stages in order: execute baseline code, then plan."""
    train_path = Path(train_path)
    test_path = Path(test_path)
    dataset = describe_dataset(train_path)
    test_rows = describe_dataset(test_path).row_count

    workdir = Workdir(
        root=cfg.workdir,
        train_path=train_path,
        test_path=test_path,
        expected_test_rows=test_rows,
    )
    workdir.root.mkdir(parents=True, exist_ok=True)

    ledger = PlanLedger(
        max_candidates_per_stage=cfg.max_candidates, dataset=dataset, task=task
    )
    run = RunLedger()
    for stage in STAGES:
        ledger, _ = execute_stage(stage, ledger, run, cfg, provider, runner, workdir)
        ledger, _ = plan_stage(stage, ledger, run, cfg, provider)
    return ledger, run, workdir
