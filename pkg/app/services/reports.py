"""CSV and markdown writers for every tabular output. UTF-8, comma, header row."""
import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.schemas.cost import CostRow
from app.schemas.taxonomy import Granularity, GranularityScores, ScoreReport
from app.schemas.training import CompareReport, TrainRun

logger = logging.getLogger(__name__)

COST_FIELDS = [
    "connector", "resolution", "tokens", "stage", "connector_flops", "llm_flops",
    "predicted_reduction_pct", "reference_reduction_pct", "in_model_range",
]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])
    logger.info("Wrote %s", path)
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def write_cost_rows(rows: List[CostRow], path) -> Path:
    return write_csv(path, COST_FIELDS, ([getattr(r, f) for f in COST_FIELDS] for r in rows))


def write_loss_curve(run: TrainRun, path) -> Path:
    return write_csv(path, ["step", "loss"], enumerate(run.loss_curve))


def write_train_summary(runs: List[TrainRun], path) -> Path:
    return write_csv(
        path,
        ["spec", "task", "seed", "final_accuracy", "final_loss", "diverged", "diverged_step"],
        ([r.spec.label, r.task.value, r.seed, r.final_accuracy, r.final_loss, r.diverged, r.diverged_step] for r in runs),
    )


def write_matrix(data: np.ndarray, path) -> Path:
    """One row per token, columns v0..v{d-1}."""
    header = ["row"] + [f"v{j}" for j in range(data.shape[1])]
    return write_csv(path, header, ([i] + [float(x) for x in row] for i, row in enumerate(data)))


def write_gradcheck(errors: Dict[str, Dict[str, float]], tolerance: float, path) -> Path:
    rows = []
    for connector, per_tensor in errors.items():
        for tensor, err in per_tensor.items():
            rows.append([connector, tensor, err, err < tolerance])
    return write_csv(path, ["connector", "tensor", "max_rel_error", "passed"], rows)


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "absent" if value is None else f"{value:.{digits}f}"


def ranking_markdown(report: CompareReport) -> str:
    """One table per task, ranked by mean accuracy, then by checkpoint loss."""
    lines = ["# Connector comparison", ""]
    tasks = []
    for row in report.rows:
        if row.task not in tasks:
            tasks.append(row.task)
    for task in tasks:
        rows = report.for_task(task)
        step = rows[0].checkpoint_step
        ranked = sorted(
            rows,
            key=lambda r: (
                r.mean_final_accuracy is None,
                -(r.mean_final_accuracy or 0.0),
                r.mean_checkpoint_loss if r.mean_checkpoint_loss is not None else float("inf"),
            ),
        )
        lines += [
            f"## {task.value}",
            "",
            f"| rank | connector | mean accuracy | mean loss @ step {step} | seeds | diverged |",
            "|---|---|---|---|---|---|",
        ]
        for rank, r in enumerate(ranked, start=1):
            diverged = ", ".join(map(str, r.diverged_seeds)) if r.flagged else "-"
            lines.append(
                f"| {rank} | {r.connector} | {_fmt(r.mean_final_accuracy)} | {_fmt(r.mean_checkpoint_loss)} "
                f"| {', '.join(map(str, r.seeds))} | {diverged} |"
            )
        lines.append("")
    return "\n".join(lines)


def _score_cells(scores: GranularityScores) -> List[Optional[float]]:
    return [scores.get(g) for g in Granularity]


def write_scores(report: ScoreReport, path) -> Path:
    rows = [["pooled"] + _score_cells(report.pooled)]
    rows += [[bench] + _score_cells(s) for bench, s in report.per_benchmark.items()]
    return write_csv(path, ["view"] + [g.value for g in Granularity], rows)


def write_radar(report: ScoreReport, path) -> Path:
    return write_csv(
        path,
        ["granularity", "sub_task", "score"],
        ([r.granularity.value, f"{r.benchmark}/{r.sub_task}", r.accuracy] for r in report.sub_tasks),
    )


def scores_markdown(report: ScoreReport) -> str:
    lines = [
        f"# Granularity scores ({report.mode.value})",
        "",
        "| view | coarse | fine | reasoning |",
        "|---|---|---|---|",
        "| pooled | " + " | ".join(_fmt(v) for v in _score_cells(report.pooled)) + " |",
    ]
    for bench, s in report.per_benchmark.items():
        lines.append(f"| {bench} | " + " | ".join(_fmt(v) for v in _score_cells(s)) + " |")
    lines += ["", "| benchmark | sub-task | granularity | correct | total | accuracy |", "|---|---|---|---|---|---|"]
    for r in report.sub_tasks:
        lines.append(f"| {r.benchmark} | {r.sub_task} | {r.granularity.value} | {r.correct} | {r.total} | {r.accuracy:.4f} |")
    lines.append("")
    return "\n".join(lines)
