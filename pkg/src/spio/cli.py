"""Command-line entry point: `spio run`, `spio report`, `spio inspect-plans`.

A run reads one JSON config (flag overrides for mode/k/seed/provider
kind), executes the cascade plus selection, and leaves everything under
`<run-root>/<run-id>/`: ledgers, predictions, reports with figures, and
the per-attempt work tree. `SPIO_WORKDIR` overrides the run root.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .analytics import (
    HashingEmbedder,
    token_breakdown,
    traces_from_run,
    write_fr_tsv,
    write_pca_tsv,
    write_tokens_tsv,
)
from .cascade import CascadeConfig, run_cascade
from .errors import ConfigError, MetricKindMismatch, SpioError
from .gateway import Fixture, ProviderConfig, scripted_provider
from .model import (
    PipelinePath,
    PlanLedger,
    RunLedger,
    TaskDescription,
    dumps_json,
    load_ledger,
    load_run_ledger,
    save_ledger,
    save_run_ledger,
)
from .optimizer import (
    PredictionSet,
    ensemble_mean,
    ensemble_soft_vote,
    realize_path,
    select_single,
    select_topk,
)
from .sandbox import SubprocessRunner, default_runner_command

MODES = ("spio_s", "spio_e")

_ERROR_FAMILIES = {2: "config", 3: "execution", 4: "selection", 5: "provider"}


@dataclass
class RunConfig:
    train_path: Path
    test_path: Path
    task: TaskDescription
    mode: str
    k: int
    n: int
    seed: int
    run_id: str
    workers: int
    attempt_budget: int
    per_stage_timeout: float
    provider: ProviderConfig
    runner_cmd: list[str]
    transcripts: bool


def run_root() -> Path:
    return Path(os.environ.get("SPIO_WORKDIR", "runs"))


def _default_run_id() -> str:
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime()) + "-" + secrets.token_hex(2)


def _load_fixtures(spec: dict, base_dir: Path) -> list[Fixture]:
    if "fixtures" in spec:
        raw = spec["fixtures"]
    elif "fixtures_path" in spec:
        fixtures_path = Path(spec["fixtures_path"])
        if not fixtures_path.is_absolute():
            fixtures_path = base_dir / fixtures_path
        if not fixtures_path.is_file():
            raise ConfigError(f"fixtures file not found: {fixtures_path}")
        raw = json.loads(fixtures_path.read_text(encoding="utf-8"))
    else:
        raise ConfigError("scripted provider needs 'fixtures' or 'fixtures_path'")
    return [
        Fixture(
            response_text=item["text"],
            input_tokens=int(item.get("input_tokens", 0)),
            output_tokens=int(item.get("output_tokens", 0)),
            expected_prompt_digest=item.get("expected_prompt_digest"),
        )
        for item in raw
    ]


def _build_provider(spec: dict, base_dir: Path) -> ProviderConfig:
    kind = spec.get("kind", "scripted")
    if kind == "scripted":
        provider = scripted_provider(_load_fixtures(spec, base_dir))
    elif kind == "http_chat":
        provider = ProviderConfig(
            kind="http_chat",
            endpoint=spec.get("endpoint", ""),
            model_name=spec.get("model_name", ""),
            api_key_env=spec.get("api_key_env", ""),
            request_timeout=float(spec.get("request_timeout", 60.0)),
            max_retries=int(spec.get("max_retries", 3)),
        )
    else:
        raise ConfigError(f"unknown provider kind {kind!r}")
    if spec.get("token_budget") is not None:
        provider.token_budget = int(spec["token_budget"])
    return provider


def load_run_config(config_path: str | Path, overrides: argparse.Namespace) -> RunConfig:
    config_path = Path(config_path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    base_dir = config_path.parent

    try:
        provider_spec = dict(raw.get("provider", {}))
        if getattr(overrides, "provider_kind", None):
            provider_spec["kind"] = overrides.provider_kind

        mode = getattr(overrides, "mode", None) or raw.get("mode", "spio_s")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        k = int(overrides.k) if getattr(overrides, "k", None) is not None else int(raw.get("k", 2))
        if mode == "spio_e" and k < 1:
            raise ConfigError("k must be >= 1 in spio_e mode")

        def resolve(path_value: str) -> Path:
            path = Path(path_value)
            return path if path.is_absolute() else base_dir / path

        train_path = resolve(raw["train_path"])
        test_path = resolve(raw["test_path"])
        for path in (train_path, test_path):
            if not path.is_file():
                raise ConfigError(f"dataset file not found: {path}")

        seed = (
            int(overrides.seed)
            if getattr(overrides, "seed", None) is not None
            else int(raw.get("seed", 0))
        )
        cascade_spec = raw.get("cascade", {})
        config = RunConfig(
            train_path=train_path,
            test_path=test_path,
            task=TaskDescription.from_dict(raw["task"]),
            mode=mode,
            k=k,
            n=int(raw.get("n", 2)),
            seed=seed,
            run_id=getattr(overrides, "run_id", None) or raw.get("run_id") or _default_run_id(),
            workers=int(getattr(overrides, "workers", None) or raw.get("workers", 2)),
            attempt_budget=int(cascade_spec.get("attempt_budget", 10)),
            per_stage_timeout=float(cascade_spec.get("per_stage_timeout", 600.0)),
            provider=_build_provider(provider_spec, base_dir),
            runner_cmd=list(raw.get("runner_cmd") or default_runner_command()),
            transcripts=bool(provider_spec.get("transcripts", False)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc!r}") from exc
    return config


def write_predictions(predictions: PredictionSet, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if predictions.kind == "class_probabilities":
        matrix = predictions.values
        lines = [",".join(f"proba_{label}" for label in matrix.labels)]
        lines += [",".join(repr(p) for p in row) for row in matrix.rows]
    else:
        lines = ["prediction"] + [str(v) for v in predictions.values]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def generate_reports(
    run_dir: Path, ledger: PlanLedger, run: RunLedger, attempt_budget: int
) -> dict[str, Path]:
    from . import figures

    reports = run_dir / "reports"
    reports.mkdir(parents=True, exist_ok=True)

    token_rows = token_breakdown(run)
    write_tokens_tsv(token_rows, reports / "tokens.tsv")
    figures.render_tokens_figure(token_rows, reports / "tokens.png")

    traces = traces_from_run(run)
    k_values = list(range(1, attempt_budget + 1))
    if traces:
        write_fr_tsv(traces, reports / "fr.tsv", k_values)
        from .analytics import failure_rate_at_k

        figures.render_fr_figure(
            k_values, [failure_rate_at_k(traces, k) for k in k_values], reports / "fr.png"
        )
    else:
        (reports / "fr.tsv").write_text("k\tfailure_rate\ttraces\n", encoding="utf-8")

    write_pca_tsv(ledger, reports / "plan_pca.tsv", HashingEmbedder())
    pca_rows = []
    for line in (reports / "plan_pca.tsv").read_text(encoding="utf-8").splitlines()[1:]:
        stage, ordinal, x, y = line.split("\t")
        pca_rows.append((stage, int(ordinal), float(x), float(y)))
    figures.render_pca_figure(pca_rows, reports / "plan_pca.png")

    return {
        "tokens": reports / "tokens.tsv",
        "fr": reports / "fr.tsv",
        "pca": reports / "plan_pca.tsv",
    }


def _realize_all(
    paths: list[PipelinePath],
    ledger: PlanLedger,
    run: RunLedger,
    cascade_cfg: CascadeConfig,
    provider: ProviderConfig,
    runner,
    workdir,
    workers: int,
) -> list[PredictionSet]:
    # Scripted fixture consumption is strictly ordered, so scripted
    # providers always realize sequentially; the pool is for live providers.
    if provider.kind == "scripted" or workers <= 1 or len(paths) == 1:
        return [
            realize_path(p, ledger, run, cascade_cfg, provider, runner, workdir) for p in paths
        ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(realize_path, p, ledger, run, cascade_cfg, provider, runner, workdir)
            for p in paths
        ]
        return [f.result() for f in futures]


def cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args)
    run_dir = run_root() / config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    provider = config.provider
    if config.transcripts:
        provider.transcript_dir = run_dir / "transcripts"
    cascade_cfg = CascadeConfig(
        max_candidates=config.n,
        attempt_budget=config.attempt_budget,
        per_stage_timeout=config.per_stage_timeout,
        workdir=run_dir / "work",
    )
    runner = SubprocessRunner(command=config.runner_cmd)

    ledger, run, workdir = run_cascade(
        config.train_path, config.test_path, config.task, cascade_cfg, provider, runner
    )

    if config.mode == "spio_s":
        paths = [select_single(ledger, run, provider)]
        predictions = _realize_all(
            paths, ledger, run, cascade_cfg, provider, runner, workdir, workers=1
        )[0]
    else:
        paths = select_topk(ledger, run, provider, config.k)
        prediction_sets = _realize_all(
            paths, ledger, run, cascade_cfg, provider, runner, workdir, config.workers
        )
        if config.task.is_classification:
            for ps in prediction_sets:
                if ps.kind != "class_probabilities":
                    raise MetricKindMismatch(
                        "soft voting needs probability outputs from every path, "
                        f"got {ps.kind}"
                    )
            predictions = ensemble_soft_vote([ps.values for ps in prediction_sets])
        else:
            predictions = ensemble_mean(prediction_sets)

    write_predictions(predictions, run_dir / "predictions.csv")
    save_ledger(ledger, run_dir / "ledger.json")
    save_run_ledger(run, run_dir / "run_ledger.json")
    (run_dir / "paths.json").write_text(
        dumps_json({"paths": [p.to_dict() for p in paths]}), encoding="utf-8", newline="\n"
    )
    (run_dir / "run_config.json").write_text(
        dumps_json(
            {
                "run_id": config.run_id,
                "mode": config.mode,
                "k": config.k,
                "n": config.n,
                "seed": config.seed,
                "attempt_budget": config.attempt_budget,
                "train_path": str(config.train_path),
                "test_path": str(config.test_path),
                "task": config.task.to_dict(),
            }
        ),
        encoding="utf-8",
        newline="\n",
    )
    generate_reports(run_dir, ledger, run, config.attempt_budget)
    print(
        f"run {config.run_id} complete: mode={config.mode} "
        f"plans={len(ledger.candidates)} paths={len(paths)} "
        f"predictions={predictions.instance_count} -> {run_dir / 'predictions.csv'}"
    )
    return 0


def _open_run_dir(run_id: str) -> Path:
    run_dir = run_root() / run_id
    if not run_dir.is_dir():
        raise ConfigError(f"unknown run: {run_id}")
    return run_dir


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = _open_run_dir(args.run_id)
    if args.kind not in ("tokens", "fr", "pca"):
        raise ConfigError(f"unknown report kind: {args.kind}")
    ledger = load_ledger(run_dir / "ledger.json")
    run = load_run_ledger(run_dir / "run_ledger.json")
    budget = 10
    config_path = run_dir / "run_config.json"
    if config_path.is_file():
        budget = int(json.loads(config_path.read_text(encoding="utf-8")).get("attempt_budget", 10))
    files = generate_reports(run_dir, ledger, run, budget)
    sys.stdout.write(files[args.kind].read_text(encoding="utf-8"))
    return 0


def cmd_inspect_plans(args: argparse.Namespace) -> int:
    run_dir = _open_run_dir(args.run_id)
    ledger = load_ledger(run_dir / "ledger.json")
    for stage, artifact in ledger.artifacts.items():
        outcome = (
            f"validation_score={artifact.validation_score}"
            if artifact.validation_score is not None
            else f"summary={artifact.summary.row_count} rows"
        )
        print(f"[{stage.value}] attempts={artifact.attempt_count} {outcome}")
        for plan in ledger.candidates_for(stage):
            print(f"  plan {plan.ordinal}: {plan.plan_text}")
            if plan.scenario:
                print(f"    scenario: {plan.scenario}")
            if plan.rationale:
                print(f"    rationale: {plan.rationale}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spio", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="execute a cascade run from a config file")
    run_cmd.add_argument("--config", required=True)
    run_cmd.add_argument("--mode", choices=MODES, default=None)
    run_cmd.add_argument("--k", type=int, default=None)
    run_cmd.add_argument("--seed", type=int, default=None)
    run_cmd.add_argument("--provider.kind", dest="provider_kind", default=None)
    run_cmd.add_argument("--run-id", dest="run_id", default=None)
    run_cmd.add_argument("--workers", type=int, default=None)
    run_cmd.set_defaults(func=cmd_run)

    report_cmd = sub.add_parser("report", help="regenerate a report table from a finished run")
    report_cmd.add_argument("run_id")
    report_cmd.add_argument("kind", help="tokens, fr, or pca")
    report_cmd.set_defaults(func=cmd_report)

    inspect_cmd = sub.add_parser("inspect-plans", help="pretty-print a run's plan ledger")
    inspect_cmd.add_argument("run_id")
    inspect_cmd.set_defaults(func=cmd_inspect_plans)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpioError as exc:
        family = _ERROR_FAMILIES.get(exc.exit_code or 3, "execution")
        print(f"SPIO-ERR {family}: {exc}", file=sys.stderr)
        return exc.exit_code or 3
    except FileNotFoundError as exc:
        print(f"SPIO-ERR config: missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
