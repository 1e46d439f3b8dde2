"""Run orchestration: fan a dataset out over a worker pool, time and
persist each record, and assemble a deterministic result.

Records are flushed to records.jsonl strictly in response_id order (a
reorder buffer holds out-of-order completions), so the file on disk is
always a prefix of the final ordering and two runs of the same config are
byte-identical regardless of parallelism. Failures go to failures.jsonl
under the same ordering discipline, which makes the set of persisted ids
a prefix of the sorted id list; resuming skips exactly that prefix.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

from . import agents
from .core import AutoscoreError, ScoredRecord, StudentResponse, TaskContext
from .ingest import Dataset
from .schema import ComponentSchema

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 25


class ManifestMismatch(AutoscoreError):
    """The run directory belongs to an incompatible run."""


class RunDirConflict(AutoscoreError):
    """score_dataset refuses to write into an already-started run dir."""


@dataclass
class TemplateSet:
    """Per-run prompt templates; None falls back to the shipped defaults."""

    extraction: agents.PromptTemplate = agents.DEFAULT_EXTRACTION_TEMPLATE
    scoring: agents.PromptTemplate = agents.DEFAULT_SCORING_TEMPLATE
    baseline: agents.PromptTemplate = agents.DEFAULT_BASELINE_TEMPLATE


@dataclass
class RunConfig:
    """Everything one scoring run needs: the mode, the backend handle, the
    task context (and schema for autoscore), and execution knobs.

    imputation controls what an exhausted retry budget produces: "fail"
    (default) records a failure; "floor" records the minimum rubric score
    instead. Imputed floors silently flatten error metrics, so "fail" is
    the honest default. Extraction failures always register as failures
    even under "floor", because an autoscore record requires a validated
    representation.
    """

    mode: str  # "autoscore" | "baseline"
    run_dir: Path
    backend: object
    context: TaskContext
    schema: ComponentSchema | None = None
    parallelism: int = 1
    max_retries: int = agents.DEFAULT_MAX_RETRIES
    seed: int = 0
    templates: TemplateSet = field(default_factory=TemplateSet)
    dataset_ref: str = ""
    imputation: str = "fail"
    max_output_tokens: int | None = None  # None keeps per-agent defaults

    def __post_init__(self) -> None:
        self.run_dir = Path(self.run_dir)
        if self.mode not in ("autoscore", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.mode == "autoscore" and self.schema is None:
            raise ValueError("autoscore runs need a compiled schema")
        if self.imputation not in ("fail", "floor"):
            raise ValueError(f"unknown imputation policy {self.imputation!r}")


@dataclass
class RunResult:
    """All records (sorted by response_id), all failures, and the manifest."""

    records: list[ScoredRecord]
    failures: list[tuple[str, str]]
    manifest: dict

    def mean_wall_time_ms(self) -> float | None:
        if not self.records:
            return None
        return sum(r.wall_time_ms for r in self.records) / len(self.records)


def _manifest_for(config: RunConfig, dataset: Dataset) -> dict:
    rng = config.context.score_range
    return {
        "mode": config.mode,
        "item_id": config.context.item_id,
        "dataset_ref": config.dataset_ref or config.context.item_id,
        "dataset_digest": dataset.digest(),
        "n_responses": len(dataset),
        "backend_identity": config.backend.identity,
        "model_name": config.backend.model_name,
        "score_range": {"min": rng.min, "max": rng.max},
        "parallelism": config.parallelism,
        "max_retries": config.max_retries,
        "seed": config.seed,
        "imputation": config.imputation,
        "context": {
            "item_id": config.context.item_id,
            "question": config.context.question,
            "reference_material": config.context.reference_material,
            "rubric_text": config.context.rubric_text,
        },
        "schema": (
            config.schema.to_definition() if config.schema is not None else None
        ),
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "finished_at": None,
    }


def _records_path(run_dir: Path) -> Path:
    return run_dir / "records.jsonl"


def _failures_path(run_dir: Path) -> Path:
    return run_dir / "failures.jsonl"


def _manifest_path(run_dir: Path) -> Path:
    return run_dir / "manifest.json"


def _timing_path(run_dir: Path) -> Path:
    return run_dir / "timing.csv"


def _score_one(config: RunConfig, response: StudentResponse):
    """Run both agents (or the baseline) for one response. Domain errors
    become failure entries (or floor-imputed records, if configured);
    anything else propagates and aborts the run."""
    token_caps = (
        {"max_output_tokens": config.max_output_tokens}
        if config.max_output_tokens
        else {}
    )
    try:
        if config.mode == "autoscore":
            extraction = agents.run_extraction(
                config.backend,
                config.context,
                response,
                config.schema,
                template=config.templates.extraction,
                max_retries=config.max_retries,
                **token_caps,
            )
            try:
                scoring = agents.run_scoring(
                    config.backend,
                    extraction.value,
                    config.context,
                    response,
                    template=config.templates.scoring,
                    max_retries=config.max_retries,
                    **token_caps,
                )
            except agents.ScoringFailed as exc:
                if config.imputation != "floor":
                    raise
                return ("record", _floor_record(config, response, exc, extraction))
            record = ScoredRecord(
                response_id=response.response_id,
                mode="autoscore",
                gold_score=response.gold_score,
                predicted_score=scoring.value.value,
                representation=extraction.value,
                transcripts=tuple(
                    extraction.transcripts("extraction")
                    + scoring.transcripts("scoring")
                ),
                wall_time_ms=extraction.wall_time_ms + scoring.wall_time_ms,
                retries=extraction.retries + scoring.retries,
            )
        else:
            try:
                baseline = agents.run_baseline(
                    config.backend,
                    config.context,
                    response,
                    template=config.templates.baseline,
                    max_retries=config.max_retries,
                    **token_caps,
                )
            except agents.ScoringFailed as exc:
                if config.imputation != "floor":
                    raise
                return ("record", _floor_record(config, response, exc, None))
            record = ScoredRecord(
                response_id=response.response_id,
                mode="baseline",
                gold_score=response.gold_score,
                predicted_score=baseline.value.value,
                representation=None,
                transcripts=tuple(baseline.transcripts("baseline")),
                wall_time_ms=baseline.wall_time_ms,
                retries=baseline.retries,
            )
        return ("record", record)
    except AutoscoreError as exc:
        return ("failure", f"{type(exc).__name__}: {exc}")


def _floor_record(
    config: RunConfig,
    response: StudentResponse,
    failure: agents.ScoringFailed,
    extraction: "agents.AgentOutcome | None",
) -> ScoredRecord:
    """Record the rubric's minimum score for a response whose scoring agent
    exhausted its retries; the failed attempts stay in the transcripts."""
    agent_name = "scoring" if config.mode == "autoscore" else "baseline"
    transcripts = list(
        extraction.transcripts("extraction") if extraction is not None else []
    )
    transcripts += failure.transcripts(agent_name)
    head_wall = extraction.wall_time_ms if extraction is not None else 0
    head_retries = extraction.retries if extraction is not None else 0
    return ScoredRecord(
        response_id=response.response_id,
        mode=config.mode,
        gold_score=response.gold_score,
        predicted_score=config.context.score_range.min,
        representation=extraction.value if extraction is not None else None,
        transcripts=tuple(transcripts),
        wall_time_ms=head_wall + failure.wall_time_ms,
        retries=head_retries + len(failure.attempts) - 1,
    )


class _OrderedWriter:
    """Flushes completed outcomes in response_id order, one fsync'd line per
    record, buffering anything that completes early."""

    def __init__(self, run_dir: Path, ordered_ids: list[str], skip: int):
        self._ordered_ids = ordered_ids
        self._next = skip
        self._pending: dict[str, tuple] = {}
        self._records = _records_path(run_dir).open("a", encoding="utf-8")
        self._failures = _failures_path(run_dir).open("a", encoding="utf-8")
        self._written = 0

    def offer(self, response_id: str, outcome) -> None:
        self._pending[response_id] = outcome
        while (
            self._next < len(self._ordered_ids)
            and self._ordered_ids[self._next] in self._pending
        ):
            rid = self._ordered_ids[self._next]
            kind, payload = self._pending.pop(rid)
            if kind == "record":
                self._records.write(payload.to_jsonl_line() + "\n")
                self._records.flush()
                os.fsync(self._records.fileno())
            else:
                self._failures.write(
                    json.dumps({"response_id": rid, "error": payload}) + "\n"
                )
                self._failures.flush()
                os.fsync(self._failures.fileno())
            self._next += 1
            self._written += 1
            if self._written % PROGRESS_EVERY == 0:
                logger.info(
                    "persisted %d/%d responses",
                    self._next,
                    len(self._ordered_ids),
                )

    def close(self) -> None:
        self._records.close()
        self._failures.close()


def _read_done(run_dir: Path) -> tuple[list[ScoredRecord], list[tuple[str, str]]]:
    """Read back persisted outcomes, tolerating one torn trailing record
    line (a crash mid-append); the torn line is dropped from disk."""
    records: list[ScoredRecord] = []
    failures: list[tuple[str, str]] = []
    records_file = _records_path(run_dir)
    if records_file.exists():
        lines = records_file.read_text(encoding="utf-8").splitlines()
        good: list[str] = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(ScoredRecord.from_jsonl_line(line))
                good.append(line)
            except (json.JSONDecodeError, KeyError):
                if i == len(lines) - 1:
                    logger.warning("dropping torn trailing record line")
                    records_file.write_text(
                        "".join(l + "\n" for l in good), encoding="utf-8"
                    )
                    break
                raise
    failures_file = _failures_path(run_dir)
    if failures_file.exists():
        for line in failures_file.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            failures.append((entry["response_id"], entry["error"]))
    return records, failures


def _execute(config: RunConfig, dataset: Dataset, manifest: dict) -> RunResult:
    done_records, done_failures = _read_done(config.run_dir)
    done_ids = {r.response_id for r in done_records} | {
        rid for rid, _ in done_failures
    }
    ordered = sorted(dataset.responses, key=lambda r: r.response_id)
    ordered_ids = [r.response_id for r in ordered]

    stale = done_ids - set(ordered_ids)
    if stale:
        raise ManifestMismatch(
            f"run dir contains ids not present in the dataset: "
            f"{sorted(stale)[:5]}"
        )
    # the ordered writer guarantees persisted ids form a prefix
    prefix_len = len(done_ids)
    if set(ordered_ids[:prefix_len]) != done_ids:
        raise ManifestMismatch(
            "persisted ids are not a prefix of the dataset ordering; "
            "the run dir is corrupt or belongs to another dataset"
        )

    todo = ordered[prefix_len:]
    writer = _OrderedWriter(config.run_dir, ordered_ids, prefix_len)
    try:
        if todo:
            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                futures = {
                    pool.submit(_score_one, config, response): response.response_id
                    for response in todo
                }
                done, not_done = wait(futures, return_when=FIRST_EXCEPTION)
                if any(f.exception() for f in done if not f.cancelled()):
                    for future in not_done:
                        future.cancel()
                pending_error = None
                # consume in submission (= response_id) order; completed
                # records beyond the first failure stay buffered, so the
                # persisted prefix never contains a gap
                for future, rid in futures.items():
                    if future.cancelled():
                        continue
                    exc = future.exception()
                    if exc is not None:
                        pending_error = exc
                        continue
                    writer.offer(rid, future.result())
                if pending_error is not None:
                    raise pending_error
    finally:
        writer.close()

    records, failures = _read_done(config.run_dir)
    records.sort(key=lambda r: r.response_id)
    failures.sort(key=lambda f: f[0])
    if len(records) + len(failures) != len(dataset):
        raise AutoscoreError(
            "conservation violated: "
            f"{len(records)} records + {len(failures)} failures "
            f"!= {len(dataset)} responses"
        )

    manifest = dict(manifest)
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _manifest_path(config.run_dir).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    _write_timing(config.run_dir, records)
    return RunResult(records=records, failures=failures, manifest=manifest)


def _write_timing(run_dir: Path, records: list[ScoredRecord]) -> None:
    lines = ["response_id,wall_time_ms,retries"]
    lines += [
        f"{r.response_id},{r.wall_time_ms},{r.retries}" for r in records
    ]
    _timing_path(run_dir).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )


def score_dataset(config: RunConfig, dataset: Dataset) -> RunResult:
    """Score every response exactly once and persist the run directory.

    Per-response agent and backend failures are captured, not fatal; the
    run aborts only on configuration errors or unexpected exceptions.
    """
    run_dir = config.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    if _manifest_path(run_dir).exists():
        raise RunDirConflict(
            f"{run_dir} already contains a run; use resume instead"
        )
    manifest = _manifest_for(config, dataset)
    _manifest_path(run_dir).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    logger.info(
        "scoring %d responses (mode=%s, parallelism=%d)",
        len(dataset),
        config.mode,
        config.parallelism,
    )
    return _execute(config, dataset, manifest)


def resume(run_dir, config: RunConfig, dataset: Dataset) -> RunResult:
    """Continue an interrupted run; already-persisted responses are skipped
    and the completed result is identical to an uninterrupted run (given a
    deterministic backend)."""
    run_dir = Path(run_dir)
    config.run_dir = run_dir
    manifest_file = _manifest_path(run_dir)
    if not manifest_file.exists():
        raise ManifestMismatch(f"{run_dir} has no manifest to resume from")
    manifest = json.loads(manifest_file.read_text(encoding="utf-8"))
    expected = {
        "mode": config.mode,
        "backend_identity": config.backend.identity,
        "dataset_digest": dataset.digest(),
    }
    for key, want in expected.items():
        got = manifest.get(key)
        if got != want:
            raise ManifestMismatch(
                f"manifest {key} is {got!r}, current run has {want!r}"
            )
    return _execute(config, dataset, manifest)


def load_run(run_dir) -> RunResult:
    """Read a completed run directory back into a RunResult."""
    run_dir = Path(run_dir)
    manifest_file = _manifest_path(run_dir)
    if not manifest_file.exists():
        raise ManifestMismatch(f"{run_dir} has no manifest")
    manifest = json.loads(manifest_file.read_text(encoding="utf-8"))
    records, failures = _read_done(run_dir)
    records.sort(key=lambda r: r.response_id)
    failures.sort(key=lambda f: f[0])
    return RunResult(records=records, failures=failures, manifest=manifest)
