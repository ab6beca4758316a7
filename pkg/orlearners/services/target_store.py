"""
Saved Stage-2 bundles, served by name.

A bundle is a directory written by `TargetModel.save`; its name is the
directory name under `settings.models_dir`. Bundles load on first use and
stay cached.
"""
import re
from pathlib import Path
from typing import Dict

from orlearners.config import get_settings
from orlearners.errors import ConfigurationError
from orlearners.logging_config import get_logger
from orlearners.ortho import TARGET_MANIFEST, TargetModel

logger = get_logger(__name__)

_UNSAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def bundle_name(model: TargetModel) -> str:
    """Directory-safe name such as 'CFRFlow_a0.1_DRK_Phi_s3'."""
    tr = model.representation
    raw = f"{tr.spec.name}_a{tr.spec.alpha:g}_{model.spec.loss.value}_{model.spec.selector.value.replace('*', '-deep')}_s{model.seed}"
    return _UNSAFE.sub("-", raw)


class TargetStore:
    def __init__(self, root: str | Path | None = None):
        self._root = Path(root) if root is not None else None
        # Map of bundle name -> loaded model (lazy)
        self._instances: Dict[str, TargetModel] = {}

    @property
    def root(self) -> Path:
        return self._root if self._root is not None else get_settings().models_dir

    def list_available(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / TARGET_MANIFEST).exists())

    def list_loaded(self) -> list[str]:
        return sorted(self._instances)

    def get(self, name: str) -> TargetModel:
        """
        Raises:
            ConfigurationError: If no bundle of that name exists
        """
        if name not in self._instances:
            available = self.list_available()
            if name not in available:
                raise ConfigurationError(
                    f"Unknown model: '{name}'. Available models: {', '.join(available) or 'none'}"
                )
            logger.info(f"Loading target bundle: {name}")
            self._instances[name] = TargetModel.load(self.root / name)
        return self._instances[name]

    def save(self, model: TargetModel, name: str | None = None) -> str:
        name = name or bundle_name(model)
        model.save(self.root / name)
        self._instances[name] = model
        return name

    def clear(self) -> None:
        self._instances.clear()


_store = TargetStore()


def get_target_store() -> TargetStore:
    return _store
