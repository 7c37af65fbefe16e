"""
Synthetic patch-feature tasks with planted signals.

coarse     every patch sits around one of k prototype directions
fine       background noise, one random patch replaced by one of k signals
reasoning  two planted signals i and j, label (i + j) mod k

Prototypes and signals are orthonormal directions scaled by signal_scale,
so k may not exceed d_v.
"""
import logging
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np

from app.core.errors import ConfigError
from app.schemas.training import DatasetConfig, Task
from app.services.connectors import PatchGrid
from app.services.geometry import GridShape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSample:
    patches: PatchGrid
    coarse_label: Optional[int] = None
    fine_label: Optional[int] = None
    reasoning_label: Optional[int] = None

    def label(self, task: Task) -> int:
        return getattr(self, f"{Task(task).value}_label")


@dataclass(frozen=True)
class SyntheticDataset:
    config: DatasetConfig
    features: np.ndarray  # (n, P, d_v)
    labels: np.ndarray  # (n,)
    planted: np.ndarray  # (n, 2) patch positions of planted signals, -1 when unused
    signals: np.ndarray  # (k, d_v), unit rows

    @property
    def task(self) -> Task:
        return self.config.task

    @property
    def grid(self) -> GridShape:
        return GridShape.square(self.config.grid_side)

    @property
    def k(self) -> int:
        return self.config.k

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_test(self) -> int:
        return int(round(len(self) * self.config.eval_fraction))

    @property
    def train_indices(self) -> np.ndarray:
        return np.arange(len(self) - self.n_test)

    @property
    def test_indices(self) -> np.ndarray:
        """Held-out tail; falls back to the training set when eval_fraction rounds to zero."""
        if self.n_test == 0:
            return self.train_indices
        return np.arange(len(self) - self.n_test, len(self))

    def sample(self, i: int) -> SyntheticSample:
        patches = PatchGrid.from_array(self.features[i], self.grid)
        return SyntheticSample(patches, **{f"{self.task.value}_label": int(self.labels[i])})

    def samples(self) -> Iterator[SyntheticSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def with_shuffled_labels(self, seed: int) -> "SyntheticDataset":
        rng = np.random.default_rng(seed)
        return replace(self, labels=rng.permutation(self.labels))


def gen_dataset(config: DatasetConfig) -> SyntheticDataset:
    cfg = config
    if cfg.k > cfg.d_v:
        raise ConfigError(f"{cfg.k} classes need {cfg.k} orthogonal signals but d_v is only {cfg.d_v}")
    grid = GridShape.square(cfg.grid_side)
    P = grid.num_patches
    if cfg.task is Task.REASONING and P < 2:
        raise ConfigError("The reasoning task plants two signals and needs at least two patches")
    n_test = int(round(cfg.n * cfg.eval_fraction))
    if cfg.n - n_test < 1:
        raise ConfigError(f"No training samples left: n={cfg.n}, eval_fraction={cfg.eval_fraction}")

    rng = np.random.default_rng(cfg.seed)
    basis, _ = np.linalg.qr(rng.normal(size=(cfg.d_v, cfg.k)))
    signals = basis.T.copy()
    labels = rng.permutation(np.arange(cfg.n) % cfg.k)
    noise = cfg.noise_scale * rng.normal(size=(cfg.n, P, cfg.d_v))
    planted = np.full((cfg.n, 2), -1, dtype=np.int64)

    if cfg.task is Task.COARSE:
        features = cfg.signal_scale * signals[labels][:, None, :] + noise
    elif cfg.task is Task.FINE:
        features = noise
        planted[:, 0] = rng.integers(0, P, size=cfg.n)
        features[np.arange(cfg.n), planted[:, 0]] = cfg.signal_scale * signals[labels]
    else:
        features = noise
        first = rng.integers(0, cfg.k, size=cfg.n)
        second = (labels - first) % cfg.k
        for i in range(cfg.n):
            a, b = rng.choice(P, size=2, replace=False)
            planted[i] = (a, b)
            features[i, a] = cfg.signal_scale * signals[first[i]]
            features[i, b] = cfg.signal_scale * signals[second[i]]

    logger.debug("Generated %s dataset: n=%d grid=%dx%d d_v=%d k=%d", cfg.task.value, cfg.n, grid.height, grid.width, cfg.d_v, cfg.k)
    return SyntheticDataset(config=cfg, features=features, labels=labels, planted=planted, signals=signals)
