import json
import random

import pytest

from spio.errors import (
    EmptyDataset,
    MalformedCsv,
    OutOfOrderStage,
    StageAlreadyRecorded,
    StageArtifactMissing,
    TooManyCandidates,
)
from spio.model import (
    STAGES,
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
    dumps_json,
    plans_before,
    record_artifact,
)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_summary(source="mem"):
    return DataDescription(
        row_count=3,
        column_specs=(("a", "numeric"), ("b", "categorical")),
        null_ratio={"a": 0.0, "b": 0.0},
        sample_records=({"a": "1", "b": "x"},),
        source_path=source,
    )


def make_artifact(stage, attempt_count=1, score=0.5):
    if stage.carries_summary:
        return StageArtifact(stage=stage, code="print('hi')", attempt_count=attempt_count, summary=make_summary())
    return StageArtifact(stage=stage, code="print('hi')", attempt_count=attempt_count, validation_score=score)


def full_ledger(n=2):
    ledger = PlanLedger(max_candidates_per_stage=n)
    for stage in STAGES:
        ledger = record_artifact(ledger, make_artifact(stage))
        plans = [
            CandidatePlan(stage=stage, ordinal=i + 1, plan_text=f"{stage.value} plan {i + 1}")
            for i in range(n)
        ]
        ledger = append_candidates(ledger, stage, plans)
    return ledger


class TestDescribeDataset:
    def test_no_null_file(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["a", "b", "c"], [[i, i * 2, f"t{i}"] for i in range(100)])
        desc = describe_dataset(path)
        assert desc.row_count == 100
        assert all(v == 0.0 for v in desc.null_ratio.values())

    def test_null_ratio_direct_count(self, tmp_path):
        rows = [[i, "" if i < 30 else "x"] for i in range(100)]
        desc = describe_dataset(write_csv(tmp_path / "d.csv", ["a", "b"], rows))
        assert desc.null_ratio["b"] == pytest.approx(0.30)
        assert desc.null_ratio["a"] == 0.0

    def test_overall_null_ratio_matches_cell_count(self, tmp_path):
        # 2 columns x 100 rows, 30 null cells in one column: 30/200 overall
        rows = [[i, "" if i < 30 else "x"] for i in range(100)]
        desc = describe_dataset(write_csv(tmp_path / "d.csv", ["a", "b"], rows))
        assert desc.overall_null_ratio == pytest.approx(30 / 200)

    def test_dtype_inference(self, tmp_path):
        rows = []
        for i in range(100):
            rows.append([i, f"{i}.5", "true" if i % 2 else "false", f"cat{i % 3}", f"unique text {i} not repeating"])
        desc = describe_dataset(write_csv(tmp_path / "d.csv", ["i", "f", "flag", "cat", "blob"], rows))
        types = dict(desc.column_specs)
        assert types == {
            "i": "numeric",
            "f": "numeric",
            "flag": "boolean",
            "cat": "categorical",
            "blob": "text",
        }

    def test_zero_one_column_is_numeric(self, tmp_path):
        desc = describe_dataset(write_csv(tmp_path / "d.csv", ["x"], [[i % 2] for i in range(50)]))
        assert dict(desc.column_specs)["x"] == "numeric"

    def test_sample_records_head_rows(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["a"], [[i] for i in range(10)])
        desc = describe_dataset(path, sample_size=3)
        assert [r["a"] for r in desc.sample_records] == ["0", "1", "2"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            describe_dataset(tmp_path / "absent.csv")

    def test_ragged_rows(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n3\n", encoding="utf-8")
        with pytest.raises(MalformedCsv):
            describe_dataset(tmp_path / "d.csv")

    def test_empty_dataset(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n", encoding="utf-8")
        with pytest.raises(EmptyDataset):
            describe_dataset(tmp_path / "d.csv")

    def test_deterministic(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", ["a", "b"], [[i, i % 3] for i in range(40)])
        assert describe_dataset(path) == describe_dataset(path)


class TestLedgerOps:
    def test_record_first_artifact(self):
        ledger = record_artifact(PlanLedger(), make_artifact(Stage.PREPROCESS))
        assert Stage.PREPROCESS in ledger.artifacts

    def test_out_of_order(self):
        ledger = record_artifact(PlanLedger(), make_artifact(Stage.PREPROCESS))
        with pytest.raises(OutOfOrderStage):
            record_artifact(ledger, make_artifact(Stage.MODEL_SELECTION))

    def test_duplicate_without_repair(self):
        ledger = record_artifact(PlanLedger(), make_artifact(Stage.PREPROCESS))
        with pytest.raises(StageAlreadyRecorded):
            record_artifact(ledger, make_artifact(Stage.PREPROCESS))

    def test_repair_replacement_increments_attempts(self):
        ledger = record_artifact(PlanLedger(), make_artifact(Stage.PREPROCESS, attempt_count=1))
        ledger = record_artifact(ledger, make_artifact(Stage.PREPROCESS, attempt_count=2), repair=True)
        assert ledger.artifacts[Stage.PREPROCESS].attempt_count == 2

    def test_append_two_plans(self):
        ledger = record_artifact(PlanLedger(max_candidates_per_stage=2), make_artifact(Stage.PREPROCESS))
        plans = [CandidatePlan(Stage.PREPROCESS, i + 1, f"p{i}") for i in range(2)]
        ledger = append_candidates(ledger, Stage.PREPROCESS, plans)
        assert len(ledger.candidates_for(Stage.PREPROCESS)) == 2

    def test_too_many_candidates(self):
        ledger = record_artifact(PlanLedger(max_candidates_per_stage=2), make_artifact(Stage.PREPROCESS))
        ledger = append_candidates(
            ledger, Stage.PREPROCESS, [CandidatePlan(Stage.PREPROCESS, i + 1, f"p{i}") for i in range(2)]
        )
        with pytest.raises(TooManyCandidates):
            append_candidates(ledger, Stage.PREPROCESS, [CandidatePlan(Stage.PREPROCESS, 3, "p3")])

    def test_plans_before_artifact(self):
        ledger = record_artifact(PlanLedger(), make_artifact(Stage.PREPROCESS))
        with pytest.raises(StageArtifactMissing):
            append_candidates(ledger, Stage.FEATURE_ENGINEERING, [CandidatePlan(Stage.FEATURE_ENGINEERING, 1, "f")])

    def test_plans_before_ordering(self):
        ledger = full_ledger(n=2)
        assert plans_before(ledger, Stage.PREPROCESS) == []
        before_model = plans_before(ledger, Stage.MODEL_SELECTION)
        assert [p.stage for p in before_model] == [Stage.PREPROCESS] * 2 + [Stage.FEATURE_ENGINEERING] * 2
        assert len(plans_before(ledger, Stage.HYPERPARAMETER_TUNING)) == 6

    def test_plans_before_monotone_in_stage(self):
        ledger = full_ledger(n=2)
        previous: list = []
        for stage in STAGES:
            current = plans_before(ledger, stage)
            assert current[: len(previous)] == previous
            previous = current

    def test_replay_reproduces_ledger(self):
        # Pure append semantics: replaying the same call log gives an equal ledger.
        rng = random.Random(7)
        for _ in range(20):
            n = rng.randint(1, 4)
            calls = []
            for stage in STAGES:
                calls.append(("record", make_artifact(stage)))
                for i in range(rng.randint(0, n)):
                    calls.append(
                        ("append", stage, CandidatePlan(stage, i + 1, f"{stage.value} v{i}"))
                    )

            def replay():
                ledger = PlanLedger(max_candidates_per_stage=n)
                for call in calls:
                    if call[0] == "record":
                        ledger = record_artifact(ledger, call[1])
                    else:
                        ledger = append_candidates(ledger, call[1], [call[2]])
                return ledger

            assert replay() == replay()


class TestSerialization:
    def test_round_trips(self, tmp_path):
        ledger = full_ledger(n=2)
        ledger_dict = ledger.to_dict()
        assert PlanLedger.from_dict(json.loads(dumps_json(ledger_dict))) == ledger

        task = TaskDescription("binary_classification", "y", "ACC", "demo")
        assert TaskDescription.from_dict(task.to_dict()) == task

        desc = make_summary()
        assert DataDescription.from_dict(desc.to_dict()) == desc

        path = PipelinePath(
            rank=1,
            choice={s: CandidatePlan(s, 1, f"{s.value} plan") for s in STAGES},
            final_code="print(1)",
        )
        assert PipelinePath.from_dict(path.to_dict()) == path

        run = RunLedger()
        run.add_token_event("plan", 10, 5)
        run.add_attempt("preprocess", 1, "exec_error")
        run.add_attempt("preprocess", 2, "ok")
        assert RunLedger.from_dict(run.to_dict()) == run

    def test_data_description_field_order(self):
        keys = list(make_summary().to_dict().keys())
        assert keys == ["row_count", "column_specs", "null_ratio", "sample_records", "source_path"]

    def test_metric_compatibility(self):
        with pytest.raises(ValueError):
            TaskDescription("regression", "y", "ACC")
        with pytest.raises(ValueError):
            TaskDescription("binary_classification", "y", "RMSE")
        with pytest.raises(ValueError):
            TaskDescription("regression", "y", "ROC_AUC")
        TaskDescription("regression", "y", "RMSE")

    def test_artifact_outcome_matches_stage(self):
        with pytest.raises(ValueError):
            StageArtifact(Stage.PREPROCESS, "c", 1, validation_score=0.5)
        with pytest.raises(ValueError):
            StageArtifact(Stage.MODEL_SELECTION, "c", 1, summary=make_summary())


class TestRunLedgerInvariants:
    def test_contiguous_attempts_enforced(self):
        from spio.errors import LedgerInvariantViolation

        run = RunLedger()
        run.add_attempt("preprocess", 1, "exec_error")
        with pytest.raises(LedgerInvariantViolation):
            run.add_attempt("preprocess", 3, "ok")

    def test_no_attempt_after_ok(self):
        from spio.errors import LedgerInvariantViolation

        run = RunLedger()
        run.add_attempt("preprocess", 1, "ok")
        with pytest.raises(LedgerInvariantViolation):
            run.add_attempt("preprocess", 2, "exec_error")

    def test_new_run_restarts_at_one(self):
        run = RunLedger()
        run.add_attempt("preprocess", 1, "ok")
        run.add_attempt("preprocess", 1, "exec_error")
        run.add_attempt("preprocess", 2, "ok")
        assert [a.attempt for a in run.attempt_logs] == [1, 1, 2]
