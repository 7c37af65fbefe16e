"""
Runs the toy-training sweeps behind the qualitative connector findings on
the pinned seeds and reports whether each holds:

  coarse task: checkpoint loss avgpool <= convmap <= attnpool
  fine task:   mlp accuracy - attnpool accuracy >= FINE_GAP_MARGIN

Writes coarse.md, fine.md, calibration.md and calibration.env into --out.
calibration.env holds the measured values in Settings form; copy its lines
into .env (or app/core/config.py) to re-pin, then run `pytest -m calibration`.
"""
import argparse
import logging
import sys

import os
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from app.core.config import settings
from app.services import calibration, reports

logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)


def run(workers: int, out_dir: str) -> int:
    seeds = list(settings.CALIBRATION_SEEDS)
    coarse = calibration.coarse_ordering(seeds, workers=workers)
    fine = calibration.fine_gap(seeds, workers=workers)
    reports.write_text(os.path.join(out_dir, "coarse.md"), reports.ranking_markdown(coarse))
    reports.write_text(os.path.join(out_dir, "fine.md"), reports.ranking_markdown(fine))

    labels = [row.connector for row in coarse.rows]
    losses = [row.mean_checkpoint_loss for row in coarse.rows]
    ordering_holds = calibration.is_ordered(losses)
    held = calibration.ordered_steps(coarse, labels)
    step = calibration.suggested_step(held, settings.CALIBRATION_CHECKPOINT_STEP)
    logger.info("Coarse checkpoint losses %s at step %d: %s (ordering holds: %s)",
                "/".join(labels), settings.CALIBRATION_CHECKPOINT_STEP, losses, ordering_holds)
    logger.info("Ordering holds at %d of %d steps; suggested checkpoint %s", len(held), coarse.runs[0].steps, step)

    gap = calibration.accuracy_gap(fine)
    gap_holds = gap is not None and gap >= settings.FINE_GAP_MARGIN
    logger.info("Fine accuracy %s %s vs %s %s: gap %s (margin %.2f holds: %s)",
                fine.rows[0].connector, fine.rows[0].mean_final_accuracy,
                fine.rows[1].connector, fine.rows[1].mean_final_accuracy,
                gap, settings.FINE_GAP_MARGIN, gap_holds)

    margin = calibration.pinned_margin(gap) if gap is not None and gap > 0 else 0.0
    lines = calibration.env_lines(
        seeds, step if step is not None else settings.CALIBRATION_CHECKPOINT_STEP,
        settings.CALIBRATION_FINE_STEPS, margin,
    )
    reports.write_text(os.path.join(out_dir, "calibration.env"), "\n".join(lines) + "\n")
    summary = [
        "# Calibration",
        "",
        f"- seeds: {seeds}",
        f"- coarse checkpoint step {settings.CALIBRATION_CHECKPOINT_STEP}: "
        + ", ".join(f"{label} {loss}" for label, loss in zip(labels, losses)),
        f"- coarse ordering holds: {ordering_holds} (at {len(held)} of {coarse.runs[0].steps} steps)",
        f"- fine accuracy: "
        + ", ".join(f"{row.connector} {row.mean_final_accuracy}" for row in fine.rows),
        f"- fine gap: {gap} (margin {settings.FINE_GAP_MARGIN:.2f} holds: {gap_holds})",
        "",
        "```",
        *lines,
        "```",
        "",
    ]
    reports.write_text(os.path.join(out_dir, "calibration.md"), "\n".join(summary))
    print("\n".join(lines))
    return 0 if ordering_holds and gap_holds else 1


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=os.path.join(settings.OUTPUT_DIR, "calibration"))
    args = parser.parse_args()
    sys.exit(run(args.workers, args.out))
