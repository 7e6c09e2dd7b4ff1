"""Client side of the sandbox runner interface.

The engine never imports the runner; it spawns the configured command
(`<runner> exec --source ... --input ... --output ... --timeout ...`)
and parses the manifest document the runner prints to stdout.
"""

from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .errors import ExecutionError
from .model import DataDescription, dumps_json

RUNNER_LAUNCH_MARGIN_S = 30.0

MANIFEST_STATUSES = ("ok", "nonzero_exit", "timeout", "missing_output")


class RunnerInvocationError(ExecutionError):
    """The runner process itself failed to produce a manifest."""


@dataclass(frozen=True)
class Manifest:
    """Engine-side view of one runner execution."""

    status: str
    exit_code: int
    wall_time: float
    stderr_tail: str
    outputs: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    validation_score: float | None = None
    score_error: str | None = None

    def __post_init__(self) -> None:
        if self.status not in MANIFEST_STATUSES:
            raise ValueError(f"unknown manifest status {self.status!r}")

    def output_profile(self, path: str | Path) -> DataDescription:
        document = self.outputs.get(str(path))
        if document is None:
            raise KeyError(f"no profile for declared output {path}")
        if "error" in document:
            raise RunnerInvocationError(f"output {path} unprofiled: {document['error']}")
        return DataDescription.from_dict(document)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": 1,
            "status": self.status,
            "exit_code": self.exit_code,
            "wall_time": self.wall_time,
            "stderr_tail": self.stderr_tail,
            "outputs": {k: dict(v) for k, v in self.outputs.items()},
            "validation_score": self.validation_score,
            "score_error": self.score_error,
        }

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RunnerInvocationError(f"unparseable manifest: {exc}") from exc
        if not isinstance(document, dict) or "status" not in document:
            raise RunnerInvocationError("manifest document missing status")
        return cls(
            status=str(document["status"]),
            exit_code=int(document.get("exit_code", -1)),
            wall_time=float(document.get("wall_time", 0.0)),
            stderr_tail=str(document.get("stderr_tail", "")),
            outputs=document.get("outputs", {}),
            validation_score=(
                float(document["validation_score"])
                if document.get("validation_score") is not None
                else None
            ),
            score_error=document.get("score_error"),
        )


class ScriptRunner(Protocol):
    def exec_script(
        self,
        source: Path,
        inputs: Sequence[str | Path],
        outputs: Sequence[str | Path],
        timeout_s: float,
        log_dir: Path | None = None,
    ) -> Manifest: ...


def default_runner_command() -> list[str]:
    return [sys.executable, "-m", "spio_runner"]


@dataclass
class SubprocessRunner:
    """Spawns the runner CLI and parses the manifest from its stdout."""

    command: list[str] = field(default_factory=default_runner_command)

    def exec_script(
        self,
        source: Path,
        inputs: Sequence[str | Path],
        outputs: Sequence[str | Path],
        timeout_s: float,
        log_dir: Path | None = None,
    ) -> Manifest:
        argv = [*self.command, "exec", "--source", str(source), "--timeout", str(timeout_s)]
        for path in inputs:
            argv += ["--input", str(path)]
        for path in outputs:
            argv += ["--output", str(path)]
        if log_dir is not None:
            argv += ["--log-dir", str(log_dir)]
        try:
            completed = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=timeout_s + RUNNER_LAUNCH_MARGIN_S,
            )
        except subprocess.TimeoutExpired as exc:
            raise RunnerInvocationError(f"runner did not return within margin: {exc}") from exc
        if completed.returncode != 0:
            tail = (completed.stderr or "")[-500:]
            raise RunnerInvocationError(
                f"runner exited {completed.returncode} without a manifest: {tail}"
            )
        return Manifest.from_json(completed.stdout)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text(dumps_json(manifest.to_dict()), encoding="utf-8", newline="\n")
