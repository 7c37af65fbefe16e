"""
Pinned setup behind the two qualitative connector findings:

  coarse task   mean checkpoint loss   avgpool <= convmap <= attnpool
  fine task     mean accuracy          mlp - attnpool >= FINE_GAP_MARGIN

Both sweeps share a 12x12 grid compressed to 4 tokens. On that grid the
second convolution of convmap sees 4 of its 9 taps, so its initial class
signal sits between avgpool's (two layers) and attnpool's (three layers),
which is what separates the coarse losses early in training. The coarse
checkpoint is taken well before any run converges.

The fine task plants one patch at 12x the per-channel noise: any single
patch scan finds it, while the mean over all 144 patches carries it at
about one noise standard deviation. A connector that averages before its
nonlinearity is left with that mean until its queries learn to attend.

The seeds, checkpoint step, fine-task length and gap margin live in
Settings; scripts/calibrate.py measures them and prints the lines to pin.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.core.config import settings
from app.schemas.connector import ConnectorKind, ConnectorSpec
from app.schemas.training import CompareReport, DatasetConfig, HeadConfig, Task, TrainHyper
from app.services import training

logger = logging.getLogger(__name__)

GRID_SIDE = 12
D_V = 32
D_LLM = 64
TOKENS = 4
HEAD = HeadConfig(d_head=32)

COARSE_ORDER = (ConnectorKind.AVGPOOL, ConnectorKind.CONVMAP, ConnectorKind.ATTNPOOL)
FINE_PAIR = (ConnectorKind.MLP, ConnectorKind.ATTNPOOL)


def spec_for(kind) -> ConnectorSpec:
    kind = ConnectorKind(kind)
    return ConnectorSpec(kind=kind, d_v=D_V, d_llm=D_LLM, num_tokens=TOKENS if kind.is_compressing else None)


def coarse_data() -> DatasetConfig:
    return DatasetConfig(
        task=Task.COARSE, n=256, grid_side=GRID_SIDE, d_v=D_V, noise_scale=1.0, signal_scale=2.0,
    )


def fine_data() -> DatasetConfig:
    return DatasetConfig(
        task=Task.FINE, n=768, grid_side=GRID_SIDE, d_v=D_V, noise_scale=1.0, signal_scale=12.0,
    )


def coarse_hyper() -> TrainHyper:
    # Twice the checkpoint, so a re-run shows where the ordering holds on both sides of it.
    return TrainHyper(lr=0.05, steps=2 * settings.CALIBRATION_CHECKPOINT_STEP, batch=32)


def fine_hyper() -> TrainHyper:
    return TrainHyper(lr=0.1, steps=settings.CALIBRATION_FINE_STEPS, batch=32)


def coarse_ordering(seeds: Optional[Sequence[int]] = None, workers: int = 1) -> CompareReport:
    seeds = list(settings.CALIBRATION_SEEDS if seeds is None else seeds)
    return training.compare(
        [spec_for(k) for k in COARSE_ORDER], [Task.COARSE], seeds,
        data=coarse_data(), head=HEAD, hyper=coarse_hyper(),
        checkpoint_step=settings.CALIBRATION_CHECKPOINT_STEP, workers=workers,
    )


def fine_gap(seeds: Optional[Sequence[int]] = None, workers: int = 1) -> CompareReport:
    seeds = list(settings.CALIBRATION_SEEDS if seeds is None else seeds)
    return training.compare(
        [spec_for(k) for k in FINE_PAIR], [Task.FINE], seeds,
        data=fine_data(), head=HEAD, hyper=fine_hyper(), workers=workers,
    )


def mean_losses_at(report: CompareReport, step: int, window: int = training.DEFAULT_CHECKPOINT_WINDOW) -> Dict[str, float]:
    """Mean checkpoint loss per connector at `step`, diverged runs left out."""
    by_label: Dict[str, List[float]] = {}
    for run in report.runs:
        if not run.diverged:
            by_label.setdefault(run.spec.label, []).append(training.checkpoint_loss(run, step, window))
    return {label: float(np.mean(values)) for label, values in by_label.items()}


def is_ordered(losses: Sequence[Optional[float]]) -> bool:
    return None not in losses and all(a <= b for a, b in zip(losses, losses[1:]))


def ordered_steps(report: CompareReport, labels: Sequence[str], window: int = training.DEFAULT_CHECKPOINT_WINDOW) -> List[int]:
    """Every step at which the window-mean losses of `labels` are in non-decreasing order."""
    steps = min((len(r.loss_curve) for r in report.runs if not r.diverged), default=0)
    held = []
    for step in range(steps):
        losses = mean_losses_at(report, step, window)
        if is_ordered([losses.get(label) for label in labels]):
            held.append(step)
    return held


def accuracy_gap(report: CompareReport) -> Optional[float]:
    first, second = report.rows
    if first.mean_final_accuracy is None or second.mean_final_accuracy is None:
        return None
    return first.mean_final_accuracy - second.mean_final_accuracy


def pinned_margin(gap: float, resolution: float = 0.01) -> float:
    """The measured gap rounded down to `resolution`, so the pinned run still clears it."""
    return math.floor(round(gap / resolution, 9)) * resolution


def env_lines(seeds: Sequence[int], checkpoint_step: int, fine_steps: int, margin: float) -> List[str]:
    return [
        f"CALIBRATION_SEEDS=[{','.join(str(s) for s in seeds)}]",
        f"CALIBRATION_CHECKPOINT_STEP={checkpoint_step}",
        f"CALIBRATION_FINE_STEPS={fine_steps}",
        f"FINE_GAP_MARGIN={margin:.2f}",
    ]


def suggested_step(held: Sequence[int], current: int) -> Optional[int]:
    """Keeps `current` when the ordering holds there, otherwise the middle of the longest ordered stretch."""
    if current in held:
        return current
    best: List[int] = []
    run: List[int] = []
    for step in held:
        run = run + [step] if run and step == run[-1] + 1 else [step]
        if len(run) > len(best):
            best = run
    return best[len(best) // 2] if best else None
