from pydantic import BaseModel, Field
from typing import Any, Dict, List


class RunManifest(BaseModel):
    """Everything needed to replay a CLI run: no timestamps, output paths relative to the run directory."""
    subcommand: str
    config: Dict[str, Any]
    seed: int
    outputs: List[str] = Field(default_factory=list)
    tool_version: str
