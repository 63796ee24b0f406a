from typing import Any, Dict, List, Optional, Tuple
import hashlib
import json
import logging
from pathlib import Path

import torch

from src.association.features import FeatureSchema
from src.errors import ConfigurationError
from src.model.classifier import MlpModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODEL_FILE = 'model.pt'
SCHEMA_FILE = 'schema.json'
MANIFEST_FILE = 'manifest.json'


def _file_hash(path: Path) -> str:
    hasher = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(4096), b''):
            hasher.update(chunk)
    return hasher.hexdigest()


def save_model(model: MlpModel, schema: FeatureSchema, directory: Path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write weights, schema and a hash manifest into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if model.schema_fingerprint != schema.fingerprint:
        raise ConfigurationError("Refusing to save a model next to a schema it was not trained with")

    torch.save({
        'format_version': FORMAT_VERSION,
        'input_width': model.input_width,
        'k': model.k,
        'hidden': list(model.hidden),
        'temperature': float(model.temperature),
        'schema_fingerprint': model.schema_fingerprint,
        'state_dict': model.state_dict(),
    }, directory / MODEL_FILE)
    schema.save(directory / SCHEMA_FILE)

    manifest = {
        'format_version': FORMAT_VERSION,
        'widths': list(model.widths),
        'schema_fingerprint': schema.fingerprint,
        'files': {name: _file_hash(directory / name) for name in (MODEL_FILE, SCHEMA_FILE)},
        'metadata': metadata or {},
    }
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Saved model {model.widths} to {directory}")
    return directory


def load_model(directory: Path) -> Tuple[MlpModel, FeatureSchema]:
    """Load and verify a model directory written by save_model."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise ConfigurationError(f"No model manifest in {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get('format_version') != FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported model format {manifest.get('format_version')}")
    for name, expected in manifest['files'].items():
        if _file_hash(directory / name) != expected:
            logger.error(f"Hash mismatch for {directory / name}")
            raise ConfigurationError(f"{name} does not match its manifest hash")

    schema = FeatureSchema.load(directory / SCHEMA_FILE)
    payload = torch.load(directory / MODEL_FILE, map_location='cpu', weights_only=True)
    if payload['schema_fingerprint'] != schema.fingerprint:
        raise ConfigurationError("Model and schema fingerprints differ")

    model = MlpModel(
        payload['input_width'],
        payload['k'],
        payload['hidden'],
        payload['schema_fingerprint'],
    )
    model.load_state_dict(payload['state_dict'])
    model.eval()
    logger.info(f"Loaded model {model.widths} (T={float(model.temperature):.4f}) from {directory}")
    return model, schema


class ModelRegistry:
    """Named, versioned model directories under one root with a JSON index."""

    def __init__(self, config: Dict[str, Any]):
        self.config = config
        self.models_dir = Path(config.get('models_dir', 'models'))
        self.registry_file = self.models_dir / 'registry.json'
        self.registry = self._load_registry()

    def register_model(
        self,
        model: MlpModel,
        schema: FeatureSchema,
        name: str,
        version: str,
        metadata: Optional[Dict[str, Any]] = None
    ) -> Path:
        """Save under models_dir/name/version and record it in the index."""
        self.models_dir.mkdir(parents=True, exist_ok=True)
        path = save_model(model, schema, self.models_dir / name / version, metadata)
        self.registry.setdefault(name, {'versions': {}})['versions'][version] = {
            'path': str(path),
            'hash': _file_hash(path / MANIFEST_FILE),
            'metadata': metadata or {},
        }
        self._save_registry()
        logger.info(f"Registered model {name} version {version}")
        return path

    def load(self, name: str, version: Optional[str] = None) -> Tuple[MlpModel, FeatureSchema]:
        """Load a registered model; without `version` the highest one is used."""
        if name not in self.registry:
            raise ConfigurationError(f"Model {name} not found in registry")
        versions = self.registry[name]['versions']
        version = version or max(versions)
        if version not in versions:
            raise ConfigurationError(f"Version {version} not found for model {name}")
        return load_model(Path(versions[version]['path']))

    def list_models(self) -> List[Dict[str, Any]]:
        return [
            {'name': name, 'version': version, 'metadata': info['metadata']}
            for name, data in sorted(self.registry.items())
            for version, info in sorted(data['versions'].items())
        ]

    def _load_registry(self) -> Dict[str, Any]:
        if self.registry_file.exists():
            try:
                return json.loads(self.registry_file.read_text())
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"Unreadable model registry {self.registry_file}: {e}") from e
        return {}

    def _save_registry(self):
        self.registry_file.write_text(json.dumps(self.registry, indent=2, sort_keys=True))
