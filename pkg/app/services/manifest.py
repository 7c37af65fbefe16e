import json
import logging
from pathlib import Path

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.manifest import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def read_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Cannot read manifest '{path}': {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path} is not a run manifest: {e.errors()[0]['msg']}") from e
