"""Run one generated script in a fresh subprocess and build a manifest.

The script is never imported or evaluated in-process. It runs with its
working directory set to a throwaway scratch dir; inputs are read from
the absolute paths baked into the script, outputs must appear at the
declared paths, and everything else left in scratch is discarded.
"""

from __future__ import annotations

import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from .profile import summarize_csv
from .sentinel import AmbiguousScore, extract_score

STDERR_TAIL_LIMIT = 2000
FORMAT_VERSION = 1


def _write_log(directory: Path | None, name: str, content: str) -> None:
    if directory is None:
        return
    directory.mkdir(parents=True, exist_ok=True)
    (directory / name).write_text(content, encoding="utf-8", newline="\n")


def run_script(
    source_path: str | Path,
    input_paths: list[str],
    declared_output_paths: list[str],
    timeout_s: float,
    sample_size: int = 5,
    log_dir: str | Path | None = None,
) -> dict:
    """Execute the script and return its manifest document."""
    source = Path(source_path).resolve()
    if not source.is_file():
        raise FileNotFoundError(str(source))
    for input_path in input_paths:
        if not Path(input_path).is_file():
            raise FileNotFoundError(str(input_path))

    scratch = Path(tempfile.mkdtemp(prefix="runner-scratch-"))
    log_dir = Path(log_dir) if log_dir is not None else scratch.parent / f"{scratch.name}.logs"
    started = time.monotonic()
    timed_out = False
    try:
        completed = subprocess.run(
            [sys.executable, str(source)],
            cwd=scratch,
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
        stdout = completed.stdout or ""
        stderr = completed.stderr or ""
        exit_code = completed.returncode
    except subprocess.TimeoutExpired as exc:
        timed_out = True
        stdout = _as_text(exc.stdout)
        stderr = _as_text(exc.stderr)
        exit_code = -1
    finally:
        wall_time = time.monotonic() - started
        shutil.rmtree(scratch, ignore_errors=True)

    _write_log(log_dir, "stdout.log", stdout)
    _write_log(log_dir, "stderr.log", stderr)

    outputs: dict[str, dict] = {}
    missing_output = False
    for declared in declared_output_paths:
        document = summarize_csv(declared, sample_size=sample_size)
        outputs[declared] = document
        if "error" in document:
            missing_output = True

    if timed_out:
        status = "timeout"
    elif exit_code != 0:
        status = "nonzero_exit"
    elif missing_output:
        status = "missing_output"
    else:
        status = "ok"

    score: float | None = None
    score_error: str | None = None
    try:
        score = extract_score(stdout)
    except AmbiguousScore:
        score_error = "ambiguous_sentinel"

    return {
        "format_version": FORMAT_VERSION,
        "status": status,
        "exit_code": exit_code,
        "wall_time": wall_time,
        "stderr_tail": stderr[-STDERR_TAIL_LIMIT:],
        "outputs": outputs,
        "validation_score": score,
        "score_error": score_error,
    }


def _as_text(raw: str | bytes | None) -> str:
    if raw is None:
        return ""
    if isinstance(raw, bytes):
        return raw.decode("utf-8", errors="replace")
    return raw
