"""
Versioned JSON parameter files: one entry per state-dict tensor with its
shape and row-major values, plus free-form metadata.
"""
import json
from pathlib import Path
from typing import Any

import torch
from torch import nn

from orlearners.errors import ConfigurationError, ShapeMismatch

FORMAT_NAME = "orlearners.params"
FORMAT_VERSION = 1


def state_to_dict(module: nn.Module, metadata: dict[str, Any] | None = None) -> dict[str, Any]:
    tensors = {
        name: {"shape": list(tensor.shape), "values": tensor.detach().reshape(-1).tolist()}
        for name, tensor in module.state_dict().items()
    }
    return {"format": FORMAT_NAME, "version": FORMAT_VERSION, "metadata": metadata or {}, "tensors": tensors}


def load_state_dict(module: nn.Module, payload: dict[str, Any]) -> dict[str, Any]:
    if payload.get("format") != FORMAT_NAME or payload.get("version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"Unsupported parameter format {payload.get('format')!r} version {payload.get('version')!r}"
        )
    stored = payload["tensors"]
    state = {}
    for name, current in module.state_dict().items():
        if name not in stored:
            raise ShapeMismatch(f"Parameter file has no tensor '{name}'")
        shape = tuple(stored[name]["shape"])
        if shape != tuple(current.shape):
            raise ShapeMismatch(f"Tensor '{name}' has shape {shape}, module expects {tuple(current.shape)}")
        state[name] = torch.tensor(stored[name]["values"], dtype=current.dtype).reshape(shape)
    module.load_state_dict(state)
    return payload.get("metadata", {})


def save_parameters(module: nn.Module, path: str | Path, metadata: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state_to_dict(module, metadata)), encoding="utf-8")
    return path


def load_parameters(module: nn.Module, path: str | Path) -> dict[str, Any]:
    """Load tensors into `module` in place and return the stored metadata."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return load_state_dict(module, payload)


def read_metadata(path: str | Path) -> dict[str, Any]:
    """Metadata of a parameter file, used to rebuild the module before loading."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != FORMAT_NAME:
        raise ConfigurationError(f"{path} is not an {FORMAT_NAME} file")
    return payload.get("metadata", {})
