"""Shared fixtures: tiny datasets, fake runners, scripted fixture builders.

Also prints one PASS/FAIL line per acceptance criterion at the end of the
run (see pytest_terminal_summary below).
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spio.gateway import Fixture
from spio.model import Stage
from spio.sandbox import Manifest


def write_csv(path: Path, header, rows) -> Path:
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_dataset(directory: Path, train_rows: int = 14, test_rows: int = 6):
    """Tiny numeric binary-classification dataset as train/test files."""
    header = ["f1", "f2", "target"]
    train = write_csv(
        directory / "train.csv",
        header,
        [[i, i % 5, int(i % 2 == 0)] for i in range(train_rows)],
    )
    test = write_csv(
        directory / "test.csv", ["f1", "f2"], [[i, i % 5] for i in range(test_rows)]
    )
    return train, test


def profile_doc(source_path, row_count=10, columns=(("f1", "numeric"), ("f2", "numeric"))):
    return {
        "row_count": row_count,
        "column_specs": [[name, dtype] for name, dtype in columns],
        "null_ratio": {name: 0.0 for name, _ in columns},
        "sample_records": [],
        "source_path": str(source_path),
    }


def summary_manifest(workdir, stage, train_rows=14, test_rows=6) -> Manifest:
    outputs = workdir.stage_outputs(stage)
    return Manifest(
        status="ok",
        exit_code=0,
        wall_time=0.01,
        stderr_tail="",
        outputs={
            str(outputs["train"]): profile_doc(outputs["train"], train_rows),
            str(outputs["test"]): profile_doc(outputs["test"], test_rows),
        },
    )


def score_manifest(score=0.8) -> Manifest:
    return Manifest(status="ok", exit_code=0, wall_time=0.01, stderr_tail="", validation_score=score)


def fail_manifest(stderr="Traceback (most recent call last):\nRuntimeError: boom") -> Manifest:
    return Manifest(status="nonzero_exit", exit_code=1, wall_time=0.01, stderr_tail=stderr)


def timeout_manifest(wall=2.5) -> Manifest:
    return Manifest(status="timeout", exit_code=-1, wall_time=wall, stderr_tail="")


class FakeRunner:
    """Scripted stand-in for the sandbox runner CLI.

    Items may be Manifest instances or callables receiving the dispatch
    context and returning a Manifest.
    """

    def __init__(self, items):
        self.queue = list(items)
        self.calls: list[dict] = []

    def exec_script(self, source, inputs, outputs, timeout_s, log_dir=None):
        context = {
            "source": Path(source),
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "timeout_s": timeout_s,
        }
        self.calls.append(context)
        if not self.queue:
            raise AssertionError("FakeRunner queue exhausted")
        item = self.queue.pop(0)
        return item(context) if callable(item) else item


CODE_FIXTURE = "```python\nimport pandas as pd\nframe = pd.DataFrame()\n```"


def plans_text(stage: Stage, n: int = 2) -> str:
    lines = []
    for i in range(1, n + 1):
        lines += [
            f"Method {i}: {stage.value} strategy {i}",
            f"Scenario: when variant {i} fits the data",
            f"Rationale: reason {i}",
        ]
    lines.append("Recommendation: Method 1")
    return "\n".join(lines) + "\n"


def codegen_fixture(code_body: str | None = None) -> Fixture:
    text = CODE_FIXTURE if code_body is None else f"```python\n{code_body}```"
    return Fixture(text, 50, 20)


def planning_fixture(stage: Stage, n: int = 2) -> Fixture:
    return Fixture(plans_text(stage, n), 40, 15)


def cascade_fixtures(n: int = 2) -> list[Fixture]:
    fixtures = []
    for stage in Stage:
        fixtures.append(codegen_fixture())
        fixtures.append(planning_fixture(stage, n))
    return fixtures


# --- scripted end-to-end fixtures --------------------------------------------

DATA_DIR = Path(__file__).parent / "data"
SYNTH_TRAIN = DATA_DIR / "synth_train.csv"
SYNTH_TEST = DATA_DIR / "synth_test.csv"


def _clean_script(train_in, test_in, train_out, test_out) -> str:
    return f"""import csv

def clean(src, dst):
    with open(src, newline="") as handle:
        rows = list(csv.reader(handle))
    header, data = rows[0], rows[1:]
    for row in data:
        for i, cell in enumerate(row):
            if cell == "":
                row[i] = "0"
    with open(dst, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(data)

clean({str(train_in)!r}, {str(train_out)!r})
clean({str(test_in)!r}, {str(test_out)!r})
"""


def _feature_script(train_in, test_in, train_out, test_out) -> str:
    return f"""import csv

def enrich(src, dst):
    with open(src, newline="") as handle:
        rows = list(csv.reader(handle))
    header, data = rows[0], rows[1:]
    i1, i3 = header.index("f1"), header.index("f3")
    header = header + ["f_sum"]
    for row in data:
        row.append(str(float(row[i1]) + 2.0 * float(row[i3])))
    with open(dst, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(data)

enrich({str(train_in)!r}, {str(train_out)!r})
enrich({str(test_in)!r}, {str(test_out)!r})
"""


def _score_script(train_in, threshold: float) -> str:
    return f"""import csv

with open({str(train_in)!r}, newline="") as handle:
    rows = list(csv.reader(handle))
header, data = rows[0], rows[1:]
fi, ti = header.index("f_sum"), header.index("target")
hits = sum(1 for row in data if (float(row[fi]) > {threshold}) == (row[ti] == "1"))
print("VALIDATION_SCORE: %.4f" % (hits / len(data)))
"""


def _final_script(test_in, predictions_out, p_high: float, p_low: float) -> str:
    return f"""import csv

with open({str(test_in)!r}, newline="") as handle:
    rows = list(csv.reader(handle))
header, data = rows[0], rows[1:]
i1, i3 = header.index("f1"), header.index("f3")
lines = ["proba_0,proba_1"]
for row in data:
    signal = float(row[i1]) + 2.0 * float(row[i3])
    p1 = {p_high} if signal > 0 else {p_low}
    lines.append("%r,%r" % (1.0 - p1, p1))
with open({str(predictions_out)!r}, "w") as handle:
    handle.write("\\n".join(lines) + "\\n")
"""


def select_single_response() -> str:
    lines = ["The strongest pipeline combines:"]
    for stage in Stage:
        lines.append(f"- {stage.value}: {stage.value} strategy 1")
    return "\n".join(lines)


def select_topk_response(k: int = 2) -> str:
    import json

    payload = []
    for rank in range(1, k + 1):
        payload.append(
            {
                "rank": f"top{rank}",
                "best_combine": {
                    "preprocess": f"preprocess strategy {rank}",
                    "feature_engineering": f"feature_engineering strategy {rank}",
                    "model_selection": f"model_selection strategy {rank}",
                    "optimal_hyper_tool": f"hyperparameter_tuning strategy {rank}",
                },
            }
        )
    return json.dumps(payload, indent=2)


def build_e2e_fixtures(run_dir: Path, train: Path, test: Path, mode: str = "spio_e") -> list[Fixture]:
    """Fixtures for a full scripted run against the real sandbox runner."""
    from spio.cascade import Workdir

    wd = Workdir(Path(run_dir) / "work", Path(train), Path(test), expected_test_rows=0)
    s1 = wd.stage_outputs(Stage.PREPROCESS)
    s2 = wd.stage_outputs(Stage.FEATURE_ENGINEERING)

    stage_scripts = {
        Stage.PREPROCESS: _clean_script(train, test, s1["train"], s1["test"]),
        Stage.FEATURE_ENGINEERING: _feature_script(s1["train"], s1["test"], s2["train"], s2["test"]),
        Stage.MODEL_SELECTION: _score_script(s2["train"], 0.0),
        Stage.HYPERPARAMETER_TUNING: _score_script(s2["train"], 0.25),
    }
    fixtures = []
    for stage in Stage:
        fixtures.append(codegen_fixture(stage_scripts[stage]))
        fixtures.append(planning_fixture(stage))

    if mode == "spio_e":
        fixtures.append(Fixture(select_topk_response(), 120, 60))
        fixtures.append(codegen_fixture(_final_script(test, wd.path_predictions(1), 0.75, 0.25)))
        fixtures.append(codegen_fixture(_final_script(test, wd.path_predictions(2), 0.625, 0.375)))
    else:
        fixtures.append(Fixture(select_single_response(), 120, 60))
        fixtures.append(codegen_fixture(_final_script(test, wd.path_predictions(1), 0.75, 0.25)))
    return fixtures


def write_e2e_config(
    directory: Path, run_id: str, mode: str = "spio_e", attempt_budget: int = 10
) -> Path:
    """Config + fixtures files for a CLI run on the bundled dataset."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    run_dir = Path(run_root_for_test(directory)) / run_id
    fixtures = build_e2e_fixtures(run_dir, SYNTH_TRAIN, SYNTH_TEST, mode)
    fixtures_path = directory / "fixtures.json"
    fixtures_path.write_text(
        json.dumps(
            [
                {
                    "text": f.response_text,
                    "input_tokens": f.input_tokens,
                    "output_tokens": f.output_tokens,
                }
                for f in fixtures
            ]
        ),
        encoding="utf-8",
    )
    config = {
        "run_id": run_id,
        "mode": mode,
        "k": 2,
        "n": 2,
        "seed": 7,
        "train_path": str(SYNTH_TRAIN),
        "test_path": str(SYNTH_TEST),
        "task": {
            "task_kind": "binary_classification",
            "target_column": "target",
            "metric": "ACC",
            "background": "Synthetic benchmark for offline runs.",
        },
        "cascade": {"attempt_budget": attempt_budget, "per_stage_timeout": 120.0},
        "provider": {"kind": "scripted", "fixtures_path": str(fixtures_path)},
    }
    config_path = directory / "run_config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config_path


def run_root_for_test(directory: Path) -> Path:
    return Path(directory) / "runs"


# --- acceptance criterion reporting -----------------------------------------

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and (report.failed or report.skipped):
        _ACCEPTANCE_RESULTS[name] = "FAIL" if report.failed else "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{outcome}  {name}")
