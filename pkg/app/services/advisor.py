"""Connector choice by resolution, task priority and compute budget."""
import logging

from app.core.errors import ConfigError
from app.schemas.taxonomy import Advice, Budget, Priority

logger = logging.getLogger(__name__)

SUPPORTED_RESOLUTIONS = (224, 336, 448)

MLP = "mlp"
COMPRESSED = ["convmap-144", "avgpool-144"]

RULE_LOW_RES = "using a two-layer MLP is advisable"
RULE_MID_RES_FINE = "the two-layer MLP may be more suitable"
RULE_MID_RES_COARSE = "the C-Abstractor and average pooling are recommended for their balance between efficiency and effectiveness"
RULE_HIGH_RES = "C-Abstractor and average pooling 144tks emerge as more optimal choices"


def advise(resolution: int, priority: Priority = Priority.BALANCED, budget: Budget = Budget.AMPLE) -> Advice:
    priority = Priority(priority)
    budget = Budget(budget)
    if resolution not in SUPPORTED_RESOLUTIONS:
        nearest = min(SUPPORTED_RESOLUTIONS, key=lambda r: (abs(r - resolution), r))
        raise ConfigError(
            f"No advice for resolution {resolution}; supported: "
            f"{', '.join(map(str, SUPPORTED_RESOLUTIONS))} (nearest: {nearest})"
        )

    if resolution == 224:
        recommended, rule = [MLP], RULE_LOW_RES
        detail = "At low resolution the feature-preserving connector keeps every patch at a modest token cost."
    elif resolution == 448:
        recommended, rule = list(COMPRESSED), RULE_HIGH_RES
        detail = "At high resolution compressing to 144 tokens keeps accuracy while cutting training time sharply."
    elif priority is Priority.FINE or (priority is Priority.BALANCED and budget is Budget.AMPLE):
        recommended, rule = [MLP], RULE_MID_RES_FINE
        detail = "At 336 fine-grained perception still benefits from keeping one token per patch."
    else:
        recommended, rule = list(COMPRESSED), RULE_MID_RES_COARSE
        detail = "At 336 coarse-grained and reasoning tasks lose little under compression to 144 tokens."

    logger.debug("Advice for %d/%s/%s: %s", resolution, priority.value, budget.value, recommended)
    return Advice(
        recommended=recommended,
        rule=rule,
        rationale=f'"{rule}". {detail}',
        resolution=resolution,
        priority=priority,
        budget=budget,
    )
