"""Comparison tables with signed percentage deltas, time/quality tradeoff
data, and per-response case-study audit records.

Delta convention: 100 * (new - base) / |base|, so the sign always tracks
the direction of change even when the baseline value is negative (a
correlation can be), and error metrics keep their raw sign: negative
means the error went down. Display rounding is two decimals, half away
from zero.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .core import AutoscoreError
from .metrics import MetricsReport

logger = logging.getLogger(__name__)

HIGHER_IS_BETTER = ("qwk", "accuracy", "pearson", "spearman")
LOWER_IS_BETTER = ("mae", "rmse")
METRIC_ORDER = ("qwk", "accuracy", "pearson", "spearman", "mae", "rmse")


class ReportError(AutoscoreError):
    pass


class ZeroBase(ReportError):
    pass


class NotFound(ReportError):
    pass


def delta_percent(base: float, new: float) -> float:
    """Signed relative change in percent (unrounded; see round2 for display)."""
    if base == 0:
        raise ZeroBase("cannot compute a relative delta from a zero base")
    return 100.0 * (new - base) / abs(base)


def round2(value: float) -> float:
    """Two decimals, ties away from zero, matching printed table precision."""
    return float(
        Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    )


@dataclass(frozen=True)
class ComparisonRow:
    """Baseline vs autoscore reports for one dataset/model pair, with the
    per-metric display deltas (None where either cell is undefined)."""

    dataset_label: str
    model_label: str
    baseline: MetricsReport
    autoscore: MetricsReport
    deltas: dict


def _metric_cells(report: MetricsReport) -> dict:
    return {
        "qwk": report.qwk,
        "accuracy": report.accuracy,
        "pearson": report.pearson,
        "spearman": report.spearman,
        "mae": report.mae,
        "rmse": report.rmse,
    }


def build_comparison_row(
    dataset_label: str,
    model_label: str,
    baseline: MetricsReport,
    autoscore: MetricsReport,
) -> ComparisonRow:
    if baseline.n != autoscore.n:
        logger.warning(
            "%s/%s: baseline n=%d but autoscore n=%d (failures differ); "
            "metrics are not computed over identical responses",
            dataset_label, model_label, baseline.n, autoscore.n,
        )
    base_cells = _metric_cells(baseline)
    new_cells = _metric_cells(autoscore)
    deltas = {}
    for metric in METRIC_ORDER:
        b, a = base_cells[metric], new_cells[metric]
        if b is None or a is None or b == 0:
            deltas[metric] = None
        else:
            deltas[metric] = round2(delta_percent(b, a))
    return ComparisonRow(dataset_label, model_label, baseline, autoscore, deltas)


def _better(metric: str, base, new) -> str:
    """'baseline' / 'autoscore' / 'tie' / 'undefined' for one metric pair."""
    if base is None or new is None:
        return "undefined"
    if base == new:
        return "tie"
    if metric in LOWER_IS_BETTER:
        return "autoscore" if new < base else "baseline"
    return "autoscore" if new > base else "baseline"


def _fmt(value, bold: bool) -> str:
    if value is None:
        return "—"
    text = f"{value:.3f}"
    return f"**{text}**" if bold else text


def _fmt_delta(delta) -> str:
    if delta is None:
        return "—"
    return f"{delta:+.2f}%"


def comparison_table(rows: list[ComparisonRow]) -> tuple[str, dict]:
    """Render comparison rows as markdown plus a machine-readable dict.

    The better cell of each metric pair is bolded; ties bold both; deltas
    follow the delta_percent convention rounded for display.
    """
    lines: list[str] = []
    payload_rows: list[dict] = []
    for row in rows:
        base_cells = _metric_cells(row.baseline)
        new_cells = _metric_cells(row.autoscore)
        lines.append(f"### {row.dataset_label} / {row.model_label}")
        lines.append("")
        lines.append("| metric | baseline | autoscore | Δ(%) |")
        lines.append("|---|---|---|---|")
        row_payload: dict = {
            "dataset": row.dataset_label,
            "model": row.model_label,
            "n_baseline": row.baseline.n,
            "n_autoscore": row.autoscore.n,
            "metrics": {},
        }
        for metric in METRIC_ORDER:
            b, a = base_cells[metric], new_cells[metric]
            winner = _better(metric, b, a)
            lines.append(
                f"| {metric} "
                f"| {_fmt(b, winner in ('baseline', 'tie'))} "
                f"| {_fmt(a, winner in ('autoscore', 'tie'))} "
                f"| {_fmt_delta(row.deltas[metric])} |"
            )
            row_payload["metrics"][metric] = {
                "baseline": b,
                "autoscore": a,
                "delta_pct": row.deltas[metric],
                "better": winner,
            }
        lines.append("")
        payload_rows.append(row_payload)
    return "\n".join(lines), {"rows": payload_rows}


@dataclass(frozen=True)
class TradeoffRow:
    model_label: str
    variant: str  # "baseline" | "autoscore"
    mean_wall_time_ms: float
    qwk: float


def tradeoff_data(results: list[tuple]) -> list[TradeoffRow]:
    """One row per (run result, metrics report) pair: the run's mean wall
    time per successfully scored instance against its QWK. Runs without
    records contribute no row."""
    rows = []
    for result, report in results:
        mean_ms = result.mean_wall_time_ms()
        if mean_ms is None:
            continue
        rows.append(
            TradeoffRow(
                model_label=result.manifest.get("model_name", "unknown"),
                variant=result.manifest.get("mode", "unknown"),
                mean_wall_time_ms=mean_ms,
                qwk=report.qwk,
            )
        )
    return rows


def tradeoff_csv(rows: list[TradeoffRow]) -> str:
    lines = ["model,variant,mean_ms,qwk"]
    for row in rows:
        lines.append(
            f"{row.model_label},{row.variant},"
            f"{row.mean_wall_time_ms!r},{row.qwk!r}"
        )
    return "".join(line + "\n" for line in lines)


def _excerpt(text: str, limit: int = 240) -> str:
    text = " ".join(text.split())
    if len(text) <= limit:
        return text
    return text[: limit - 1].rstrip() + "…"


@dataclass(frozen=True)
class CaseRecord:
    """Audit view of one response across the paired runs: both predictions,
    the gold score, and the extracted components that fed autoscore."""

    response_id: str
    question_excerpt: str
    response_text: str
    rubric_excerpt: str
    components: dict
    gold: int | None
    autoscore_prediction: int
    baseline_prediction: int

    def to_markdown(self) -> str:
        lines = [
            f"# Case {self.response_id}",
            "",
            f"Human score = {self.gold}, autoscore = "
            f"{self.autoscore_prediction}, baseline = {self.baseline_prediction}",
            "",
            f"**Assessment question:** {self.question_excerpt}",
            "",
            f"**Student response:** {self.response_text}",
            "",
            f"**Rubric excerpt:** {self.rubric_excerpt}",
            "",
            "**Extracted components:**",
            "",
        ]
        for name, value in self.components.items():
            if isinstance(value, list):
                lines.append(f"- {name}:" + (" (none)" if not value else ""))
                for entry in value:
                    lines.append(f"  - {entry}")
            else:
                lines.append(f"- {name}: {json.dumps(value)}")
        lines += [
            "",
            "```json",
            json.dumps(self.components, indent=2, ensure_ascii=True),
            "```",
            "",
        ]
        return "\n".join(lines)


def case_record(
    autoscore_dir,
    baseline_dir,
    response_id: str,
    response_text: str,
) -> CaseRecord:
    """Join one response's autoscore and baseline records into a CaseRecord.

    The response text is supplied by the caller (run directories persist
    predictions and transcripts, not the dataset itself); question and
    rubric come from the autoscore run's manifest.
    """
    from .pipeline import load_run

    autoscore_run = load_run(Path(autoscore_dir))
    baseline_run = load_run(Path(baseline_dir))

    def find(run, mode):
        for record in run.records:
            if record.response_id == response_id:
                return record
        raise NotFound(f"response {response_id!r} not scored in the {mode} run")

    auto_rec = find(autoscore_run, "autoscore")
    base_rec = find(baseline_run, "baseline")
    context = autoscore_run.manifest.get("context", {})
    return CaseRecord(
        response_id=response_id,
        question_excerpt=_excerpt(context.get("question", "")),
        response_text=response_text,
        rubric_excerpt=_excerpt(context.get("rubric_text", ""), limit=400),
        components=dict(auto_rec.representation.values),
        gold=auto_rec.gold_score,
        autoscore_prediction=auto_rec.predicted_score,
        baseline_prediction=base_rec.predicted_score,
    )
