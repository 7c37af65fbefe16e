"""
Command-line entry point.

    python -m app <subcommand> [options]

Every subcommand resolves its options as CLI flags > --config file >
defaults, writes its outputs plus a manifest.json into --out, and can be
replayed with `rerun`. The only write outside --out is the opt-in --record,
which stores the run in the registry at DATABASE_URL. Exit codes: 0 success,
1 validation or usage error, 2 runtime error.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.core.config import load_config_file, settings
from app.core.errors import VALIDATION_ERRORS, ConfigError, ConnectorLabError, ContractError
from app.schemas.connector import ConnectorKind, ConnectorSpec, parse_label
from app.schemas.manifest import RunManifest
from app.schemas.taxonomy import AggregationMode, Budget, Priority
from app.schemas.training import DatasetConfig, HeadConfig, Task, TrainHyper, TrainRun, parse_task
from app.services import advisor, cost_model, reports, taxonomy, training
from app.services.checkpoint import save_params
from app.services.connectors import PatchGrid, connector_grad_check, forward, init_params, param_count
from app.services.datasets import gen_dataset
from app.services.geometry import GridShape, InterpolationMethod, PosEmbedGrid, interpolate_pos_embed, patch_count
from app.services.manifest import read_manifest, write_manifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


# -- option tables -------------------------------------------------------------

def _optional(convert: Callable) -> Callable:
    def parse(value):
        if value is None or str(value).strip().lower() in ("", "none", "null"):
            return None
        return convert(value)
    parse.__name__ = getattr(convert, "__name__", "value")
    return parse


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"Expected a boolean, got '{value}'")


def _str_list(value) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable
    default: Any = None
    help: str = ""
    choices: Optional[Sequence] = None
    flag: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")

    def convert(self, value):
        if self.flag:
            return _bool(value)
        try:
            converted = self.type(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid value for --{self.name}: '{value}'") from e
        if self.choices is not None and converted not in self.choices:
            raise ConfigError(f"--{self.name} must be one of {', '.join(map(str, self.choices))}, got '{value}'")
        return converted


# Run control: never part of the resolved config.
CONTROL = ("out", "config", "record", "log_level")

SEED = Option("seed", int, 0, "Seed for all randomness")

_CONNECTOR_OPTIONS = [
    Option("d-c", _optional(int), None, "Cross-attention width for attnpool (defaults to d_v)"),
    Option("kernel", int, 3, "Odd convolution kernel for convmap"),
]

_DATA_OPTIONS = [
    Option("grid", int, 24, "Patch grid side"),
    Option("d-v", int, 32, "Patch feature width"),
    Option("d-llm", int, 64, "Connector output width"),
    Option("tokens", _optional(int), 36, "Compressed token count (compressing connectors)"),
    Option("classes", int, 4, "Number of classes"),
    Option("samples", int, 256, "Samples per dataset, held-out included"),
    Option("noise", float, 0.5, "Background noise scale"),
    Option("signal", float, 2.0, "Planted signal scale"),
    Option("eval-fraction", float, 0.25, "Held-out fraction"),
    Option("lr", float, 0.05, "SGD learning rate"),
    Option("momentum", float, 0.9, "SGD momentum"),
    Option("steps", int, 200, "Training steps"),
    Option("batch", int, 32, "Batch size"),
    Option("grad-clip", _optional(float), 5.0, "Global gradient-norm clip (none disables)"),
    Option("d-head", int, 32, "Width of the attention-reader head"),
] + _CONNECTOR_OPTIONS

OPTIONS: Dict[str, List[Option]] = {
    "gradcheck": [
        SEED,
        Option("connector", str, "mlp", "Connector to check"),
        Option("all", bool, False, "Check all five connectors", flag=True),
        Option("grid", int, 4, "Patch grid side"),
        Option("d-v", int, 4, "Patch feature width"),
        Option("d-llm", int, 6, "Connector output width"),
        Option("tokens", int, 4, "Compressed token count"),
        Option("eps", float, 1e-5, "Central-difference step"),
        Option("tolerance", float, settings.GRADCHECK_TOLERANCE, "Maximum relative error"),
        Option("repeats", int, 1, "Number of seeds, counting up from --seed"),
    ] + _CONNECTOR_OPTIONS,
    "forward": [
        SEED,
        Option("connector", str, "mlp", "Connector kind or alias"),
        Option("resolution", int, 336, "Image resolution in pixels"),
        Option("patch-size", int, settings.PATCH_SIZE, "Patch size in pixels"),
        Option("d-v", int, 32, "Patch feature width"),
        Option("d-llm", int, 64, "Connector output width"),
        Option("tokens", _optional(int), 144, "Compressed token count"),
        Option("pos-embed-from", _optional(int), None, "Add position embeddings made at this resolution"),
        Option("interp", str, InterpolationMethod.BILINEAR.value, "Position-embedding interpolation",
               choices=[m.value for m in InterpolationMethod]),
    ] + _CONNECTOR_OPTIONS,
    "cost": [
        SEED,
        Option("connector", str, "mlp", "Connector kind or alias"),
        Option("resolution", int, 336, "Image resolution in pixels"),
        Option("tokens", _optional(int), None, "Visual tokens (patch count for mlp/linear, 144 otherwise)"),
        Option("stage", int, 1, "Training stage", choices=[1, 2]),
        Option("d-v", int, settings.VISION_DIM, "Vision feature width"),
        Option("d-llm", int, settings.LLM_HIDDEN, "LLM hidden width"),
        Option("sweep", bool, False, "Write the full resolution x stage training-time grid", flag=True),
    ] + _CONNECTOR_OPTIONS,
    "toy-train": [
        SEED,
        Option("connector", str, "mlp", "Connector kind or alias"),
        Option("task", str, Task.COARSE.value, "Synthetic task", choices=[t.value for t in Task]),
    ] + _DATA_OPTIONS,
    "compare": [
        SEED,
        Option("connectors", _str_list, ["mlp", "avgpool", "attnpool", "convmap"],
               "Comma-separated connectors; kind-Q (e.g. avgpool-16) overrides --tokens"),
        Option("tasks", _str_list, [Task.COARSE.value, Task.FINE.value], "Comma-separated tasks"),
        Option("num-seeds", int, len(settings.CALIBRATION_SEEDS), "Seeds per connector, counting up from --seed"),
        Option("checkpoint-step", _optional(int), None, "Step at which losses are compared (default: last)"),
        Option("window", int, training.DEFAULT_CHECKPOINT_WINDOW, "Trailing window for the checkpoint loss"),
        Option("workers", int, 1, "Parallel training processes"),
    ] + _DATA_OPTIONS,
    "score": [
        SEED,
        Option("results", str, None, "CSV or JSONL file of benchmark, sub_task, correct, total"),
        Option("taxonomy", _optional(str), None, "Extra taxonomy entries (benchmark, sub_task, granularity)"),
        Option("mode", str, AggregationMode.MACRO.value, "Aggregation", choices=[m.value for m in AggregationMode]),
    ],
    "advise": [
        SEED,
        Option("resolution", int, None, "Image resolution in pixels"),
        Option("priority", str, Priority.BALANCED.value, "Task priority", choices=[p.value for p in Priority]),
        Option("budget", str, Budget.AMPLE.value, "Compute budget", choices=[b.value for b in Budget]),
    ],
}

REQUIRED = {"score": ("results",), "advise": ("resolution",)}


# -- helpers -------------------------------------------------------------------

def _spec(opts: Dict[str, Any], num_patches: Optional[int] = None, seed: int = 0) -> ConnectorSpec:
    kind, label_tokens = parse_label(opts["connector"])
    tokens = label_tokens if label_tokens is not None else opts.get("tokens")
    if not kind.is_compressing:
        if label_tokens is not None:
            raise ConfigError(f"{kind.value} keeps one token per patch; drop the '-{label_tokens}' suffix")
        if tokens is not None and num_patches is not None and tokens != num_patches:
            raise ConfigError(f"{kind.value} keeps one token per patch: tokens must be {num_patches}, got {tokens}")
        tokens = None
    elif tokens is None:
        tokens = cost_model.COMPRESSED_TOKENS
    return ConnectorSpec(
        kind=kind, d_v=opts["d_v"], d_llm=opts["d_llm"], num_tokens=tokens,
        d_c=opts.get("d_c"), kernel=opts.get("kernel", 3), seed=seed,
    )


def _data_config(opts: Dict[str, Any], task: Task, seed: int) -> DatasetConfig:
    return DatasetConfig(
        task=task, n=opts["samples"], grid_side=opts["grid"], d_v=opts["d_v"], k=opts["classes"],
        noise_scale=opts["noise"], signal_scale=opts["signal"], eval_fraction=opts["eval_fraction"], seed=seed,
    )


def _hyper(opts: Dict[str, Any]) -> TrainHyper:
    return TrainHyper(
        lr=opts["lr"], momentum=opts["momentum"], steps=opts["steps"], batch=opts["batch"], grad_clip=opts["grad_clip"],
    )


# -- subcommands -----------------------------------------------------------------

@dataclass
class Outcome:
    outputs: List[Path]
    train_runs: Tuple[TrainRun, ...] = ()


def run_gradcheck(opts: Dict[str, Any], out: Path) -> Outcome:
    grid = GridShape.square(opts["grid"])
    names = [k.value for k in ConnectorKind] if opts["all"] else [opts["connector"]]
    errors: Dict[str, Dict[str, float]] = {}
    worst: Dict[str, float] = {}
    for name in names:
        for i in range(opts["repeats"]):
            seed = opts["seed"] + i
            spec = _spec({**opts, "connector": name}, seed=seed)
            per_tensor = connector_grad_check(spec, grid, seed=seed, eps=opts["eps"])
            errors[f"{spec.label}@seed{seed}"] = per_tensor
            worst[spec.label] = max(worst.get(spec.label, 0.0), max(per_tensor.values()))
    path = reports.write_gradcheck(errors, opts["tolerance"], out / "gradcheck.csv")
    for label, err in worst.items():
        print(f"{label}: max relative error {err:.3e}")
    failed = [label for label, err in worst.items() if not err < opts["tolerance"]]
    if failed:
        raise ContractError(f"Gradient check above tolerance {opts['tolerance']} for {', '.join(failed)}")
    return Outcome([path])


def run_forward(opts: Dict[str, Any], out: Path) -> Outcome:
    grid = patch_count(opts["resolution"], opts["patch_size"])
    spec = _spec(opts, grid.num_patches, seed=opts["seed"])
    rng = np.random.default_rng(opts["seed"])
    features = rng.normal(size=(grid.num_patches, spec.d_v))
    if opts["pos_embed_from"] is not None:
        src = patch_count(opts["pos_embed_from"], opts["patch_size"])
        pos = PosEmbedGrid(0.02 * rng.normal(size=(src.height, src.width, spec.d_v)))
        features = features + interpolate_pos_embed(pos, grid, InterpolationMethod(opts["interp"])).flatten()

    params = init_params(spec)
    tokens = forward(spec, params, PatchGrid.from_array(features, grid)).tokens.data
    summary = reports.write_csv(
        out / "forward.csv",
        ["connector", "resolution", "patches", "tokens", "width", "params"],
        [[spec.label, opts["resolution"], grid.num_patches, tokens.shape[0], tokens.shape[1], param_count(spec)]],
    )
    print(f"{spec.label}: {grid.num_patches} patches -> {tokens.shape[0]} tokens of width {tokens.shape[1]}")
    return Outcome([
        summary,
        reports.write_matrix(tokens, out / "tokens.csv"),
        save_params(params, out / "params.bin"),
    ])


def run_cost(opts: Dict[str, Any], out: Path) -> Outcome:
    if opts["sweep"]:
        rows = cost_model.table_sweep()
    else:
        grid = patch_count(opts["resolution"], settings.PATCH_SIZE)
        spec = _spec(opts, grid.num_patches)
        rows = [cost_model.cost_row(spec, opts["resolution"], opts["stage"])]
    for row in rows:
        print(f"{row.connector} @ {row.resolution} stage {row.stage}: "
              f"predicted reduction {row.predicted_reduction_pct:.1f}%")
    return Outcome([reports.write_cost_rows(rows, out / "cost.csv")])


def run_toy_train(opts: Dict[str, Any], out: Path) -> Outcome:
    seed = opts["seed"]
    spec = _spec(opts, seed=seed)
    dataset = gen_dataset(_data_config(opts, parse_task(opts["task"]), seed))
    run, model = training.fit(spec, dataset, HeadConfig(d_head=opts["d_head"]), _hyper(opts), seed)
    print(f"{spec.label} on {run.task.value}: final accuracy {run.final_accuracy:.3f}, final loss {run.final_loss:.4f}")
    return Outcome(
        [
            reports.write_loss_curve(run, out / "loss_curve.csv"),
            reports.write_train_summary([run], out / "summary.csv"),
            save_params(model.connector, out / "params.bin"),
        ],
        (run,),
    )


def run_compare(opts: Dict[str, Any], out: Path) -> Outcome:
    seeds = [opts["seed"] + i for i in range(opts["num_seeds"])]
    if not seeds:
        raise ConfigError("--num-seeds must be at least 1")
    specs = [_spec({**opts, "connector": name}) for name in opts["connectors"]]
    tasks = [parse_task(t) for t in opts["tasks"]]
    if not tasks:
        raise ConfigError("--tasks needs at least one task")
    report = training.compare(
        specs, tasks, seeds,
        data=_data_config(opts, tasks[0], seeds[0]),
        head=HeadConfig(d_head=opts["d_head"]),
        hyper=_hyper(opts),
        checkpoint_step=opts["checkpoint_step"],
        window=opts["window"],
        workers=opts["workers"],
    )
    table = reports.write_csv(
        out / "compare.csv",
        ["connector", "task", "mean_final_accuracy", "mean_checkpoint_loss", "checkpoint_step", "diverged_seeds"],
        ([r.connector, r.task.value, r.mean_final_accuracy, r.mean_checkpoint_loss, r.checkpoint_step,
          ";".join(map(str, r.diverged_seeds))] for r in report.rows),
    )
    ranking = reports.write_text(out / "ranking.md", reports.ranking_markdown(report))
    summary = reports.write_train_summary(report.runs, out / "summary.csv")
    return Outcome([table, ranking, summary], tuple(report.runs))


def run_score(opts: Dict[str, Any], out: Path) -> Outcome:
    tax = taxonomy.load_taxonomy(opts["taxonomy"])
    report = taxonomy.aggregate(taxonomy.load_results(opts["results"]), AggregationMode(opts["mode"]), tax)
    pooled = report.pooled
    print("pooled " + ", ".join(f"{g}={'absent' if v is None else f'{v:.4f}'}" for g, v in pooled.model_dump().items()))
    return Outcome([
        reports.write_scores(report, out / "scores.csv"),
        reports.write_text(out / "scores.md", reports.scores_markdown(report)),
        reports.write_radar(report, out / "radar.csv"),
    ])


def run_advise(opts: Dict[str, Any], out: Path) -> Outcome:
    advice = advisor.advise(opts["resolution"], Priority(opts["priority"]), Budget(opts["budget"]))
    print(f"Recommended: {', '.join(advice.recommended)}")
    print(advice.rationale)
    path = out / "advice.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(advice.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Outcome([path])


HELP = {
    "gradcheck": "Compare analytic and finite-difference gradients of connectors",
    "forward": "Run one connector on synthetic patch features",
    "cost": "FLOP cost and predicted training-time reduction",
    "toy-train": "Train a connector on a synthetic task",
    "compare": "Train several connectors over seeds and rank them",
    "score": "Aggregate benchmark sub-task results into coarse/fine/reasoning scores",
    "advise": "Recommend a connector for a resolution, priority and budget",
}

HANDLERS: Dict[str, Callable[[Dict[str, Any], Path], Outcome]] = {
    "gradcheck": run_gradcheck,
    "forward": run_forward,
    "cost": run_cost,
    "toy-train": run_toy_train,
    "compare": run_compare,
    "score": run_score,
    "advise": run_advise,
}


# -- parsing and dispatch ------------------------------------------------------

class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _add_control(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", default=None, help=f"Output directory (default: {settings.OUTPUT_DIR})")
    sub.add_argument("--log-level", default=None, help=f"Logging level (default: {settings.LOG_LEVEL})")
    sub.add_argument(
        "--record", action="store_true",
        help="Also store the run in the run registry at DATABASE_URL, the one write that may land outside --out",
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="connector-lab", description="Vision-language connector lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    for name, options in OPTIONS.items():
        sub = subs.add_parser(name, help=HELP[name])
        for opt in options:
            if opt.flag:
                sub.add_argument(f"--{opt.name}", dest=opt.dest, action="store_true", default=None, help=opt.help)
            else:
                sub.add_argument(
                    f"--{opt.name}", dest=opt.dest, type=opt.type, default=None, choices=opt.choices,
                    help=f"{opt.help} (default: {opt.default})",
                )
        sub.add_argument("--config", default=None, help="key=value file of option defaults")
        _add_control(sub)

    rerun = subs.add_parser("rerun", help="Replay a run from its manifest")
    rerun.add_argument("manifest", help="manifest.json or the directory holding it")
    _add_control(rerun)
    return parser


def resolve_options(subcommand: str, args: argparse.Namespace) -> Dict[str, Any]:
    """Flags override the config file, which overrides the defaults."""
    options = OPTIONS[subcommand]
    known = {o.dest: o for o in options}
    resolved = {o.dest: o.default for o in options}

    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            if key in CONTROL:
                continue
            if key not in known:
                raise ConfigError(f"Unknown option '{key}' in {args.config} for {subcommand}")
            resolved[key] = known[key].convert(value)

    for dest in known:
        value = getattr(args, dest, None)
        if value is not None:
            resolved[dest] = known[dest].convert(value)

    for dest in REQUIRED.get(subcommand, ()):
        if resolved.get(dest) is None:
            raise ConfigError(f"{subcommand} needs --{dest.replace('_', '-')}")
    if subcommand == "score":
        resolved["results"] = str(Path(resolved["results"]).resolve())
        if resolved["taxonomy"] is not None:
            resolved["taxonomy"] = str(Path(resolved["taxonomy"]).resolve())
    return resolved


def _control(args: argparse.Namespace, key: str, default=None):
    value = getattr(args, key, None)
    if value is None and getattr(args, "config", None):
        value = load_config_file(args.config).get(key)
    return default if value is None else value


def execute(subcommand: str, config: Dict[str, Any], out: Path, record: bool = False) -> RunManifest:
    """Runs one subcommand from a resolved config and writes its manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("Running %s into %s", subcommand, out)
    outcome = HANDLERS[subcommand](config, out)
    manifest = RunManifest(
        subcommand=subcommand,
        config=config,
        seed=config.get("seed", 0),
        outputs=[p.relative_to(out).as_posix() for p in outcome.outputs],
        tool_version=__version__,
    )
    write_manifest(manifest, out)
    if record:
        _record(manifest, out, outcome.train_runs)
    logger.info("Finished %s", subcommand)
    return manifest


def _record(manifest: RunManifest, out: Path, train_runs) -> None:
    from app.db import crud
    from app.db.database import SessionLocal, init_db

    init_db()
    db = SessionLocal()
    try:
        crud.create_run(db, manifest, str(out.resolve()), train_runs)
    finally:
        db.close()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_VALIDATION

    try:
        level = str(_control(args, "log_level", settings.LOG_LEVEL)).upper()
        logging.basicConfig(level=getattr(logging, level, logging.INFO),
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        out = Path(_control(args, "out", settings.OUTPUT_DIR))
        if args.subcommand == "rerun":
            manifest = read_manifest(args.manifest)
            if manifest.subcommand not in HANDLERS:
                raise ConfigError(f"Manifest names unknown subcommand '{manifest.subcommand}'")
            execute(manifest.subcommand, manifest.config, out, args.record)
        else:
            execute(args.subcommand, resolve_options(args.subcommand, args), out, args.record)
    except VALIDATION_ERRORS as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConnectorLabError as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
