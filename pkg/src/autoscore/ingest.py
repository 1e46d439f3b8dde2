"""Loaders for the tab-separated short-answer and essay scoring dumps, gold
score resolution, and reproducible subsampling.

Response text is taken verbatim (no cleaning), and every gold score must
validate against the item's score range or the row is rejected. Files are
decoded as UTF-8 with a per-line Latin-1 fallback, since the public dumps
mix encodings.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from .core import AutoscoreError, ScoreRange, StudentResponse


class DatasetError(AutoscoreError):
    """Base class for dataset loading failures."""


class MissingColumn(DatasetError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"required column {column!r} not found")


class MalformedRow(DatasetError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class EmptySelection(DatasetError):
    pass


SAS_COLUMNS = ("Id", "EssaySet", "Score1", "Score2", "EssayText")
AES_COLUMNS = (
    "essay_id",
    "essay_set",
    "essay",
    "rater1_domain1",
    "rater2_domain1",
    "domain1_score",
)

GOLD_RULES = ("first_rater", "resolved_column")


@dataclass(frozen=True)
class DatasetSpec:
    """Where one evaluation corpus lives and how to read its gold scores."""

    family: str  # "sas" | "aes"
    tsv_path: str
    essay_set: int
    item_id: str
    score_range: ScoreRange
    gold_rule: str = "first_rater"

    def __post_init__(self) -> None:
        if self.family not in ("sas", "aes"):
            raise ValueError(f"unknown dataset family {self.family!r}")
        if self.essay_set <= 0:
            raise ValueError("essay_set must be positive")
        if self.gold_rule not in GOLD_RULES:
            raise ValueError(f"unknown gold_rule {self.gold_rule!r}")


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    responses: tuple[StudentResponse, ...]

    def __len__(self) -> int:
        return len(self.responses)

    def response_ids(self) -> list[str]:
        return [r.response_id for r in self.responses]

    def digest(self) -> str:
        """Hash of all response ids and texts, in id order; guards resumed
        runs against silent dataset edits."""
        blob = "\x1e".join(
            f"{r.response_id}\x1f{r.text}"
            for r in sorted(self.responses, key=lambda r: r.response_id)
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _read_lines(path: Path) -> list[str]:
    raw = path.read_bytes()
    lines = []
    for chunk in raw.split(b"\n"):
        chunk = chunk.rstrip(b"\r")
        try:
            lines.append(chunk.decode("utf-8"))
        except UnicodeDecodeError:
            lines.append(chunk.decode("latin-1"))
    # trailing newline produces one empty tail entry
    while lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_int(text: str, line_no: int, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise MalformedRow(line_no, f"{what} is not an integer: {text!r}") from None


def _load_tsv(
    spec: DatasetSpec,
    required: tuple[str, ...],
    id_col: str,
    set_col: str,
    text_col: str,
    gold_col: str,
) -> Dataset:
    path = Path(spec.tsv_path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    lines = _read_lines(path)
    if not lines:
        raise DatasetError(f"dataset file is empty: {path}")

    header = lines[0].split("\t")
    index = {name: i for i, name in enumerate(header)}
    for column in required:
        if column not in index:
            raise MissingColumn(column)

    responses: list[StudentResponse] = []
    seen_ids: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(header):
            raise MalformedRow(
                line_no, f"expected {len(header)} fields, found {len(parts)}"
            )
        essay_set = _parse_int(parts[index[set_col]], line_no, set_col)
        if essay_set != spec.essay_set:
            continue
        response_id = parts[index[id_col]].strip()
        if response_id in seen_ids:
            raise MalformedRow(line_no, f"duplicate response id {response_id!r}")
        seen_ids.add(response_id)
        gold = _parse_int(parts[index[gold_col]], line_no, gold_col)
        if not spec.score_range.contains(gold):
            raise MalformedRow(
                line_no,
                f"gold score {gold} outside range "
                f"{spec.score_range.min}..{spec.score_range.max}",
            )
        text = parts[index[text_col]]
        if not text.strip():
            raise MalformedRow(line_no, "empty response text")
        responses.append(
            StudentResponse(
                response_id=response_id,
                item_id=spec.item_id,
                text=text,
                gold_score=gold,
            )
        )

    if not responses:
        raise EmptySelection(
            f"no rows with {set_col}={spec.essay_set} in {path}"
        )
    return Dataset(spec=spec, responses=tuple(responses))


def load_sas(spec: DatasetSpec) -> Dataset:
    """Load a short-answer subset; gold defaults to the first human rater."""
    if spec.gold_rule == "resolved_column":
        # the short-answer dump carries Score1/Score2 only
        raise MissingColumn("resolved score (not present in Score1/Score2 layout)")
    return _load_tsv(
        spec,
        required=SAS_COLUMNS,
        id_col="Id",
        set_col="EssaySet",
        text_col="EssayText",
        gold_col="Score1",
    )


def load_aes(spec: DatasetSpec) -> Dataset:
    """Load an essay set; gold is rater 1 or the resolved domain score."""
    gold_col = (
        "rater1_domain1" if spec.gold_rule == "first_rater" else "domain1_score"
    )
    return _load_tsv(
        spec,
        required=AES_COLUMNS,
        id_col="essay_id",
        set_col="essay_set",
        text_col="essay",
        gold_col=gold_col,
    )


def load_dataset(spec: DatasetSpec) -> Dataset:
    return load_sas(spec) if spec.family == "sas" else load_aes(spec)


def sample_size(total: int, fraction: float) -> int:
    """Round-half-up sample size, so 0.2 x 1850 = 370 exactly."""
    return int(math.floor(fraction * total + 0.5))


def sample_ids(ids: list[str], fraction: float, seed: int) -> set[str]:
    """Deterministic subset of ids: rank by a seeded hash, keep the first
    round(fraction * n). Depends only on (seed, ids), never on list order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    k = sample_size(len(ids), fraction)
    ranked = sorted(
        ids,
        key=lambda rid: hashlib.sha256(f"{seed}:{rid}".encode("utf-8")).hexdigest(),
    )
    return set(ranked[:k])


def sample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Reproducible subsample; the original response order is preserved."""
    chosen = sample_ids(dataset.response_ids(), fraction, seed)
    kept = tuple(r for r in dataset.responses if r.response_id in chosen)
    return Dataset(spec=dataset.spec, responses=kept)
