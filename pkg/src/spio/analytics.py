"""Post-run analytics: failure rate at K, token breakdown, and plan
diversity via embedding plus a 2-component PCA.

All reports are tab-separated files with a header row and 6-decimal
fixed-point floats, so regenerating them from the same ledgers is
byte-identical.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import DegenerateBatch, DimensionMismatch, EmptyTraces
from .gateway import usage_report
from .model import CandidatePlan, PlanLedger, RunLedger, Stage

POWER_ITERATION_TOL = 1e-10
POWER_ITERATION_MAX_STEPS = 10_000
DEFAULT_EMBEDDING_DIM = 256


@dataclass(frozen=True)
class AttemptTrace:
    """How many attempts one task needed; infinity when it never succeeded."""

    task_id: str
    attempts_to_success: float
    stage: Stage | None = None

    def __post_init__(self) -> None:
        finite = math.isfinite(self.attempts_to_success)
        if finite and self.attempts_to_success < 1:
            raise ValueError("attempts_to_success must be >= 1 or infinite")


def failure_rate_at_k(traces: Sequence[AttemptTrace], k: int) -> float:
    """Fraction of traces not completed within at most k attempts."""
    if not traces:
        raise EmptyTraces("failure rate over an empty trace list")
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for t in traces if t.attempts_to_success > k) / len(traces)


def traces_from_run(run: RunLedger) -> list[AttemptTrace]:
    """One trace per label-run in the attempt logs (repair reruns count separately)."""
    traces: list[AttemptTrace] = []
    open_runs: dict[str, tuple[int, float]] = {}

    def close(label: str) -> None:
        block, result = open_runs.pop(label)
        stage = Stage(label) if label in Stage._value2member_map_ else None
        traces.append(AttemptTrace(f"{label}#{block}", result, stage))

    block_counter: dict[str, int] = {}
    for log in run.attempt_logs:
        if log.attempt == 1:
            if log.label in open_runs:
                close(log.label)
            block_counter[log.label] = block_counter.get(log.label, 0) + 1
            open_runs[log.label] = (block_counter[log.label], math.inf)
        if log.status == "ok":
            block, _ = open_runs[log.label]
            open_runs[log.label] = (block, float(log.attempt))
    for label in list(open_runs):
        close(label)
    traces.sort(key=lambda t: t.task_id)
    return traces


def token_breakdown(
    run: RunLedger, report_path: str | Path | None = None
) -> list[tuple[str, int, int]]:
    """Per-step token table (delegates to the gateway's usage report)."""
    rows = usage_report(run)
    if report_path is not None:
        write_tokens_tsv(rows, report_path)
    return rows


# --- embeddings -----------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingVector:
    plan_ref: tuple[str, int]
    components: tuple[float, ...]


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class HashingEmbedder:
    """Deterministic offline fallback: token hashing into a bag vector."""

    def __init__(self, dim: int = DEFAULT_EMBEDDING_DIM):
        if dim < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = []
        for text in texts:
            counts = [0.0] * self.dim
            for token in re.findall(r"[a-z0-9]+", text.lower()):
                digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
                counts[int.from_bytes(digest, "big") % self.dim] += 1.0
            norm = math.sqrt(sum(c * c for c in counts))
            if norm > 0:
                counts = [c / norm for c in counts]
            vectors.append(counts)
        return vectors


def embed_plans(plans: Sequence[CandidatePlan], embedder: Embedder) -> list[EmbeddingVector]:
    """One fixed-dimension vector per plan, in plan order."""
    raw = embedder.embed([p.plan_text for p in plans])
    return [
        EmbeddingVector(plan_ref=(p.stage.value, p.ordinal), components=tuple(vec))
        for p, vec in zip(plans, raw)
    ]


# --- PCA ---------------------------------------------------------------------

def _power_iteration(matrix: np.ndarray, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    dim = matrix.shape[0]
    vector = rng.standard_normal(dim)
    vector /= np.linalg.norm(vector)
    eigenvalue = 0.0
    for _ in range(POWER_ITERATION_MAX_STEPS):
        product = matrix @ vector
        norm = np.linalg.norm(product)
        if norm < 1e-300:
            return 0.0, vector
        vector = product / norm
        eigenvalue = float(vector @ matrix @ vector)
        if np.linalg.norm(matrix @ vector - eigenvalue * vector) <= POWER_ITERATION_TOL:
            break
    return eigenvalue, vector


def _fix_sign(vector: np.ndarray) -> np.ndarray:
    # the largest-magnitude loading is made positive
    index = int(np.argmax(np.abs(vector)))
    return -vector if vector[index] < 0 else vector


def _orthogonal_unit(reference: np.ndarray) -> np.ndarray:
    index = int(np.argmin(np.abs(reference)))
    candidate = np.zeros_like(reference)
    candidate[index] = 1.0
    candidate -= (candidate @ reference) * reference
    return candidate / np.linalg.norm(candidate)


def pca_components(vectors: Sequence[EmbeddingVector]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered data matrix plus the top-2 covariance eigenvectors."""
    if len(vectors) < 3:
        raise ValueError("need at least 3 vectors")
    dim = len(vectors[0].components)
    if dim < 2:
        raise ValueError("vector dimension must be >= 2")
    for vector in vectors:
        if len(vector.components) != dim:
            raise DimensionMismatch(
                f"vector {vector.plan_ref} has dimension {len(vector.components)}, expected {dim}"
            )
    data = np.array([v.components for v in vectors], dtype=float)
    if np.all(data == data[0]):
        raise DegenerateBatch("all embedding vectors are identical")

    centered = data - data.mean(axis=0)
    covariance = centered.T @ centered / (len(vectors) - 1)
    rng = np.random.default_rng(0)
    first_value, first = _power_iteration(covariance, rng)
    deflated = covariance - first_value * np.outer(first, first)
    if np.max(np.abs(deflated)) <= 1e-12 * max(1.0, abs(first_value)):
        second = _orthogonal_unit(first)
    else:
        _, second = _power_iteration(deflated, rng)
    return centered, _fix_sign(first), _fix_sign(second)


def pca_project(vectors: Sequence[EmbeddingVector]) -> list[tuple[float, float]]:
    """Project onto the top-2 principal components (power iteration + deflation)."""
    centered, first, second = pca_components(vectors)
    xs = centered @ first
    ys = centered @ second
    return [(float(x), float(y)) for x, y in zip(xs, ys)]


# --- report files -----------------------------------------------------------

def _fixed6(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def _write_tsv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_tokens_tsv(rows: list[tuple[str, int, int]], path: str | Path) -> None:
    _write_tsv(path, ["step", "input_tokens", "output_tokens"], rows)


def write_fr_tsv(
    traces: Sequence[AttemptTrace], path: str | Path, k_values: Sequence[int]
) -> None:
    rows = [
        (k, _fixed6(failure_rate_at_k(traces, k)), len(traces)) for k in k_values
    ]
    _write_tsv(path, ["k", "failure_rate", "traces"], rows)


def write_pca_tsv(
    ledger: PlanLedger, path: str | Path, embedder: Embedder | None = None
) -> int:
    """Project all candidate plans to 2-D; header-only file when under 3 plans."""
    embedder = embedder or HashingEmbedder()
    plans = list(ledger.candidates)
    if len(plans) < 3:
        _write_tsv(path, ["stage", "ordinal", "x", "y"], [])
        return 0
    points = pca_project(embed_plans(plans, embedder))
    rows = [
        (plan.stage.value, plan.ordinal, _fixed6(x), _fixed6(y))
        for plan, (x, y) in zip(plans, points)
    ]
    _write_tsv(path, ["stage", "ordinal", "x", "y"], rows)
    return len(rows)
