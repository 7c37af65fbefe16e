"""
Desk-scale training of a connector plus a small attention-reader head.

The head reads the connector's token sequence with one learned query:

    a      = softmax(q (X W_k)^T / sqrt(d_head))      (1 x Q)
    logits = (a X W_v) W_out + b_out                  (1 x k)

so it can pick out individual tokens instead of averaging them away.
Optimization is plain SGD with momentum and optional global-norm clipping.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, DivergedRunError, NonFiniteError
from app.schemas.connector import ConnectorSpec
from app.schemas.training import (
    CompareReport,
    CompareRow,
    DatasetConfig,
    FirstStepResult,
    HeadConfig,
    Task,
    TrainHyper,
    TrainRun,
)
from app.services import connectors
from app.services.connectors import ConnectorParams, PatchGrid
from app.services.datasets import SyntheticDataset, gen_dataset
from app.services.tensor import (
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    matmul,
    parameter,
    scale,
    softmax_rows,
    transpose,
)

logger = logging.getLogger(__name__)

HEAD_QUERY_STD = 0.02
DEFAULT_CHECKPOINT_WINDOW = 10

# Independent random streams derived from the one run seed.
_HEAD_STREAM = 1
_BATCH_STREAM = 2


@dataclass
class Model:
    connector: ConnectorParams
    head: Dict[str, Tensor]

    def parameters(self) -> List[Tensor]:
        return list(self.connector) + list(self.head.values())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def frozen(self) -> "Model":
        """Copy whose tensors do not track gradients, for evaluation."""
        conn = ConnectorParams(self.connector.spec, {n: Tensor(t.data) for n, t in self.connector.items()})
        return Model(conn, {n: Tensor(t.data) for n, t in self.head.items()})


def init_head(head: HeadConfig, d_llm: int, k: int, seed: int) -> Dict[str, Tensor]:
    rng = np.random.default_rng([seed, _HEAD_STREAM])
    bound_in = 1.0 / math.sqrt(d_llm)
    bound_out = 1.0 / math.sqrt(head.d_head)
    return {
        "head_query": parameter(rng.normal(0.0, HEAD_QUERY_STD, size=(1, head.d_head)), name="head_query"),
        "head_key_w": parameter(rng.uniform(-bound_in, bound_in, size=(d_llm, head.d_head)), name="head_key_w"),
        "head_value_w": parameter(rng.uniform(-bound_in, bound_in, size=(d_llm, head.d_head)), name="head_value_w"),
        "head_out_w": parameter(rng.uniform(-bound_out, bound_out, size=(head.d_head, k)), name="head_out_w"),
        "head_out_b": parameter(np.zeros(k), name="head_out_b"),
    }


def init_model(spec: ConnectorSpec, head: HeadConfig, k: int, seed: int) -> Model:
    conn = connectors.init_params(spec.model_copy(update={"seed": seed}))
    return Model(conn, init_head(head, spec.d_llm, k, seed))


def _read(tokens: Tensor, head: Dict[str, Tensor]) -> Tensor:
    d_head = head["head_query"].shape[1]
    keys = matmul(tokens, head["head_key_w"])
    values = matmul(tokens, head["head_value_w"])
    attn = softmax_rows(scale(matmul(head["head_query"], transpose(keys)), 1.0 / math.sqrt(d_head)))
    return add(matmul(matmul(attn, values), head["head_out_w"]), head["head_out_b"])


def batch_logits(model: Model, dataset: SyntheticDataset, indices: Sequence[int]) -> Tensor:
    spec = model.connector.spec
    rows = []
    for i in indices:
        patches = PatchGrid(Tensor(dataset.features[i]), dataset.grid)
        tokens = connectors.forward(spec, model.connector, patches).tokens
        rows.append(_read(tokens, model.head))
    return concat(rows, axis=0)


def batch_loss(model: Model, dataset: SyntheticDataset, indices: Sequence[int]) -> Tensor:
    return cross_entropy(batch_logits(model, dataset, indices), dataset.labels[np.asarray(indices)])


def accuracy(model: Model, dataset: SyntheticDataset, indices: Optional[Sequence[int]] = None) -> float:
    indices = dataset.test_indices if indices is None else np.asarray(indices)
    frozen = model.frozen()
    logits = batch_logits(frozen, dataset, indices).data
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels[indices]))


def _batches(train: np.ndarray, batch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    if batch >= train.size:
        while True:
            yield train
    while True:
        order = rng.permutation(train)
        for start in range(0, order.size - batch + 1, batch):
            yield order[start:start + batch]


class SGD:
    def __init__(self, params: List[Tensor], lr: float, momentum: float = 0.0, grad_clip: Optional[float] = None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = [np.zeros_like(p.data) for p in params]

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params))

    def step(self) -> None:
        factor = 1.0
        if self.grad_clip is not None:
            norm = self.grad_norm()
            if norm > self.grad_clip:
                factor = self.grad_clip / norm
        with np.errstate(over="ignore", invalid="ignore"):
            for p, v in zip(self.params, self.velocity):
                v *= self.momentum
                v += factor * p.grad
                p.data = p.data - self.lr * v
                if not np.all(np.isfinite(p.data)):
                    raise NonFiniteError(f"Update left non-finite values in '{p.name}'")


def fit(
    spec: ConnectorSpec,
    dataset: SyntheticDataset,
    head: Optional[HeadConfig] = None,
    hyper: Optional[TrainHyper] = None,
    seed: int = 0,
) -> Tuple[TrainRun, Model]:
    """Trains and returns the run together with the trained model."""
    head = head or HeadConfig()
    hyper = hyper or TrainHyper()
    train_idx = dataset.train_indices
    if train_idx.size == 0:
        raise ConfigError("Dataset has no training samples")
    if spec.d_v != dataset.config.d_v:
        raise ConfigError(f"Connector expects d_v={spec.d_v}, dataset has d_v={dataset.config.d_v}")

    model = init_model(spec, head, dataset.k, seed)
    optimizer = SGD(model.parameters(), hyper.lr, hyper.momentum, hyper.grad_clip)
    batches = _batches(train_idx, hyper.batch, np.random.default_rng([seed, _BATCH_STREAM]))

    logger.info("Training %s on %s (seed %d, %d steps)", spec.label, dataset.task.value, seed, hyper.steps)
    curve: List[float] = []
    for step in range(hyper.steps):
        try:
            model.zero_grad()
            loss = batch_loss(model, dataset, next(batches))
            backward(loss)
            optimizer.step()
        except NonFiniteError as e:
            raise DivergedRunError(step, str(e)) from e
        curve.append(loss.item())
        logger.debug("%s step %d loss %.6f", spec.label, step, curve[-1])

    acc = accuracy(model, dataset)
    logger.info("Finished %s on %s (seed %d): accuracy %.3f", spec.label, dataset.task.value, seed, acc)
    run = TrainRun(
        spec=spec, task=dataset.task, seed=seed, steps=hyper.steps, loss_curve=curve, final_accuracy=acc,
    )
    return run, model


def train(
    spec: ConnectorSpec,
    dataset: SyntheticDataset,
    head: Optional[HeadConfig] = None,
    hyper: Optional[TrainHyper] = None,
    seed: int = 0,
) -> TrainRun:
    return fit(spec, dataset, head, hyper, seed)[0]


def first_step_loss_change(
    spec: ConnectorSpec,
    dataset: SyntheticDataset,
    lr: Optional[float] = None,
    head: Optional[HeadConfig] = None,
    batch: Optional[int] = None,
    seed: int = 0,
) -> FirstStepResult:
    """Loss on one batch before and after a single plain SGD step on that batch."""
    lr = settings.FIRST_STEP_LR if lr is None else lr
    head = head or HeadConfig()
    model = init_model(spec, head, dataset.k, seed)
    indices = dataset.train_indices if batch is None else dataset.train_indices[:batch]
    loss = batch_loss(model, dataset, indices)
    backward(loss)
    SGD(model.parameters(), lr).step()
    after = batch_loss(model.frozen(), dataset, indices)
    return FirstStepResult(loss_before=loss.item(), loss_after=after.item())


def checkpoint_loss(run: TrainRun, step: int, window: int = DEFAULT_CHECKPOINT_WINDOW) -> float:
    """Mean training loss over the `window` steps ending at `step` (inclusive)."""
    if window < 1:
        raise ConfigError(f"Checkpoint window must be positive, got {window}")
    if not 0 <= step < len(run.loss_curve):
        raise ConfigError(f"Checkpoint step {step} outside the recorded {len(run.loss_curve)} steps")
    start = max(0, step - window + 1)
    return float(np.mean(run.loss_curve[start:step + 1]))


def _diverged_run(spec: ConnectorSpec, task: Task, seed: int, hyper: TrainHyper, err: DivergedRunError) -> TrainRun:
    return TrainRun(
        spec=spec, task=task, seed=seed, steps=hyper.steps, loss_curve=[], final_accuracy=0.0,
        diverged=True, diverged_step=err.step,
    )


def run_job(job: Tuple[ConnectorSpec, DatasetConfig, HeadConfig, TrainHyper, int]) -> TrainRun:
    spec, data_cfg, head, hyper, seed = job
    dataset = gen_dataset(data_cfg)
    try:
        return train(spec, dataset, head, hyper, seed)
    except DivergedRunError as e:
        logger.warning("%s on %s (seed %d) diverged at step %d", spec.label, data_cfg.task.value, seed, e.step)
        return _diverged_run(spec, data_cfg.task, seed, hyper, e)


def compare(
    specs: Sequence[ConnectorSpec],
    tasks: Sequence[Task],
    seeds: Sequence[int],
    data: Optional[DatasetConfig] = None,
    head: Optional[HeadConfig] = None,
    hyper: Optional[TrainHyper] = None,
    checkpoint_step: Optional[int] = None,
    window: int = DEFAULT_CHECKPOINT_WINDOW,
    workers: int = 1,
) -> CompareReport:
    """
    Trains every (task, spec, seed) combination and averages per (task, spec).
    The dataset for a seed is generated from that same seed. Diverged runs are
    kept as flagged rows and left out of the means.
    """
    if not specs or not tasks or not seeds:
        raise ConfigError("compare needs at least one connector, one task and one seed")
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"Duplicate connectors in comparison: {labels}")
    head = head or HeadConfig()
    hyper = hyper or TrainHyper()
    data = data or DatasetConfig(task=Task.COARSE)
    step = hyper.steps - 1 if checkpoint_step is None else checkpoint_step
    if not 0 <= step < hyper.steps:
        raise ConfigError(f"Checkpoint step {step} outside [0, {hyper.steps})")

    jobs = []
    for task in tasks:
        for spec in specs:
            for seed in seeds:
                cfg = data.model_copy(update={"task": Task(task), "seed": seed})
                jobs.append((spec, cfg, head, hyper, seed))

    logger.info("Comparing %d connectors on %d tasks over %d seeds (%d runs, %d workers)",
                len(specs), len(tasks), len(seeds), len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_job, job) for job in jobs]
            runs = [f.result() for f in futures]
    else:
        runs = [run_job(job) for job in jobs]

    rows = []
    per_group = len(seeds)
    for g in range(0, len(runs), per_group):
        group = runs[g:g + per_group]
        ok = [r for r in group if not r.diverged]
        rows.append(CompareRow(
            connector=group[0].spec.label,
            task=group[0].task,
            seeds=list(seeds),
            mean_final_accuracy=float(np.mean([r.final_accuracy for r in ok])) if ok else None,
            mean_checkpoint_loss=float(np.mean([checkpoint_loss(r, step, window) for r in ok])) if ok else None,
            checkpoint_step=step,
            diverged_seeds=[r.seed for r in group if r.diverged],
        ))
    return CompareReport(rows=rows, runs=runs)
