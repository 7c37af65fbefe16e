"""
Analytic FLOP accounting for connector + LLM prefill.

Counts are multiply-accumulates times two (one multiply, one add) for every
dense product; pooling counts one add per pooled element. The LLM uses the
standard transformer prefill law

    L * (4 * N^2 * D + 12 * N * D^2),   N = visual tokens + text tokens

and the vision encoder is charged with the same law over its P patch tokens
as a fixed per-sample overhead that both sides of a comparison share.
"""
import logging
from typing import List, Optional

from app.core.config import settings
from app.core.errors import ConfigError, GeometryError
from app.schemas.connector import ConnectorKind, ConnectorSpec
from app.schemas.cost import CostReport, CostRow, PipelineConfig
from app.services.connectors import param_count
from app.services.geometry import patch_count

logger = logging.getLogger(__name__)

SUPPORTED_RESOLUTIONS = (224, 336, 448)
# Below this resolution fixed costs the model does not see dominate wall-clock.
MIN_MODEL_RESOLUTION = 336
COMPRESSED_TOKENS = 144

# Measured training-time reductions (percent) of ConvMap-144 against the
# two-layer MLP, keyed by (resolution, stage).
REFERENCE_REDUCTIONS = {
    (224, 1): 60.0,
    (224, 2): 29.0,
    (336, 1): 67.0,
    (336, 2): 33.0,
    (448, 1): 80.0,
    (448, 2): 51.0,
}


def connector_flops(spec: ConnectorSpec, num_patches: int) -> int:
    if num_patches <= 0:
        raise ConfigError(f"Patch count must be positive, got {num_patches}")
    P, d_v, D = num_patches, spec.d_v, spec.d_llm

    if spec.kind is ConnectorKind.LINEAR:
        return 2 * P * d_v * D
    if spec.kind is ConnectorKind.MLP:
        return 2 * P * (d_v * D + D * D)

    Q = spec.num_tokens
    if spec.kind is ConnectorKind.AVGPOOL:
        return P * d_v + 2 * Q * (d_v * D + D * D)
    if spec.kind is ConnectorKind.ATTNPOOL:
        d_c = spec.cross_dim
        keys_values = 2 * (2 * P * d_v * d_c)
        scores = 2 * Q * P * d_c
        weighted_sum = 2 * Q * P * d_c
        transform = 2 * Q * (d_c * D + D * D)
        return keys_values + scores + weighted_sum + transform

    # convmap
    k2 = spec.kernel * spec.kernel
    return 2 * P * k2 * d_v * d_v + P * d_v + 2 * Q * k2 * d_v * d_v + 2 * Q * d_v * D


def transformer_prefill_flops(tokens: int, hidden: int, layers: int) -> int:
    return layers * (4 * tokens * tokens * hidden + 12 * tokens * hidden * hidden)


def llm_prefill_flops(visual_tokens: int, cfg: PipelineConfig) -> int:
    if visual_tokens < 0:
        raise ConfigError(f"Visual token count must be nonnegative, got {visual_tokens}")
    return transformer_prefill_flops(visual_tokens + cfg.text_tokens, cfg.llm_hidden, cfg.llm_layers)


def encoder_flops(num_patches: int) -> int:
    return transformer_prefill_flops(num_patches, settings.ENCODER_HIDDEN, settings.ENCODER_LAYERS)


def overhead_flops(cfg: PipelineConfig, extra: Optional[int] = None) -> int:
    """Per-sample cost outside the connector and LLM: encoder prefill plus a configurable constant."""
    grid = patch_count(cfg.resolution, cfg.patch_size)
    extra = settings.EXTRA_OVERHEAD_FLOPS if extra is None else extra
    if extra < 0:
        raise ConfigError(f"Extra overhead must be nonnegative, got {extra}")
    return encoder_flops(grid.num_patches) + extra


def visual_tokens(cfg: PipelineConfig) -> int:
    grid = patch_count(cfg.resolution, cfg.patch_size)
    spec = cfg.connector
    if not spec.kind.is_compressing:
        return grid.num_patches
    if spec.q_side > grid.height:
        raise GeometryError(
            f"{spec.label} cannot compress a {grid.height}x{grid.width} grid ({grid.num_patches} patches)"
        )
    return spec.num_tokens


def cost_report(cfg: PipelineConfig) -> CostReport:
    grid = patch_count(cfg.resolution, cfg.patch_size)
    tokens = visual_tokens(cfg)
    conn = connector_flops(cfg.connector, grid.num_patches)
    llm = llm_prefill_flops(tokens, cfg)
    return CostReport(
        connector_flops=conn,
        llm_flops=llm,
        total_flops=conn + llm,
        params=param_count(cfg.connector),
        visual_tokens=tokens,
    )


def predict_time_reduction(base: PipelineConfig, compressed: PipelineConfig, extra_overhead: Optional[int] = None) -> float:
    """100 * (1 - cost(compressed) / cost(base)), both sides carrying the shared overhead."""
    if base.resolution != compressed.resolution:
        raise ConfigError(
            f"Cannot compare pipelines at different resolutions: {base.resolution} vs {compressed.resolution}"
        )
    if (base.llm_hidden, base.llm_layers) != (compressed.llm_hidden, compressed.llm_layers):
        raise ConfigError(
            f"Cannot compare pipelines with different LLMs: "
            f"{base.llm_layers}x{base.llm_hidden} vs {compressed.llm_layers}x{compressed.llm_hidden}"
        )
    if base.patch_size != compressed.patch_size:
        raise ConfigError(f"Cannot compare patch sizes {base.patch_size} and {compressed.patch_size}")

    overhead = overhead_flops(base, extra_overhead)
    b = cost_report(base).total_flops + overhead
    c = cost_report(compressed).total_flops + overhead
    return 100.0 * (1.0 - c / b)


def stage_text_tokens(stage: int) -> int:
    if stage == 1:
        return settings.TEXT_TOKENS_STAGE1
    if stage == 2:
        return settings.TEXT_TOKENS_STAGE2
    raise ConfigError(f"Training stage must be 1 or 2, got {stage}")


def in_model_range(resolution: int) -> bool:
    return resolution >= MIN_MODEL_RESOLUTION


def pipeline(spec: ConnectorSpec, resolution: int, stage: int) -> PipelineConfig:
    return PipelineConfig(
        connector=spec,
        resolution=resolution,
        text_tokens=stage_text_tokens(stage),
        llm_hidden=spec.d_llm,
        llm_layers=settings.LLM_LAYERS,
        patch_size=settings.PATCH_SIZE,
        stage=stage,
    )


def baseline_spec(d_v: Optional[int] = None, d_llm: Optional[int] = None) -> ConnectorSpec:
    return ConnectorSpec(
        kind=ConnectorKind.MLP,
        d_v=d_v or settings.VISION_DIM,
        d_llm=d_llm or settings.LLM_HIDDEN,
    )


def cost_row(spec: ConnectorSpec, resolution: int, stage: int) -> CostRow:
    """One training-time row: `spec` against the two-layer MLP baseline at the same resolution."""
    cfg = pipeline(spec, resolution, stage)
    base = pipeline(baseline_spec(spec.d_v, spec.d_llm), resolution, stage)
    report = cost_report(cfg)
    in_range = in_model_range(resolution)
    if not in_range:
        logger.warning(
            "Resolution %d is outside the cost model's validity range (>= %d); fixed overheads dominate there",
            resolution, MIN_MODEL_RESOLUTION,
        )
    reference = REFERENCE_REDUCTIONS.get((resolution, stage)) if spec.kind is ConnectorKind.CONVMAP else None
    return CostRow(
        connector=spec.label,
        resolution=resolution,
        tokens=report.visual_tokens,
        stage=stage,
        connector_flops=report.connector_flops,
        llm_flops=report.llm_flops,
        predicted_reduction_pct=predict_time_reduction(base, cfg),
        reference_reduction_pct=reference,
        in_model_range=in_range,
    )


def table_sweep() -> List[CostRow]:
    """The full training-time grid: every resolution and stage, MLP and ConvMap-144."""
    rows = []
    convmap = ConnectorSpec(
        kind=ConnectorKind.CONVMAP,
        d_v=settings.VISION_DIM,
        d_llm=settings.LLM_HIDDEN,
        num_tokens=COMPRESSED_TOKENS,
    )
    for resolution in SUPPORTED_RESOLUTIONS:
        for spec in (baseline_spec(), convmap):
            for stage in (1, 2):
                rows.append(cost_row(spec, resolution, stage))
    return rows
