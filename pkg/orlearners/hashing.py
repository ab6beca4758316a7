"""Stable content hashes for specs and configs."""
import hashlib
import json
from typing import Any

from pydantic import BaseModel


def stable_hash(payload: Any) -> str:
    """SHA-256 of the key-sorted compact JSON dump."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def spec_hash(spec: BaseModel) -> str:
    return stable_hash(spec.model_dump(mode="json"))
