"""
Checkpoint files: the network, its threshold and run provenance as JSON.
"""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .errors import ConfigError
from .network import MlpParams

FORMAT_TAG = "recourse-checkpoint/1"


@dataclass
class Checkpoint:
    params: MlpParams
    meta: Dict[str, Any] = field(default_factory=dict)
    calibration: Optional[Dict[str, Any]] = None


def to_document(checkpoint: Checkpoint) -> Dict[str, Any]:
    params = checkpoint.params
    return {
        "format": FORMAT_TAG,
        "architecture": {
            "input_dim": params.input_dim,
            "widths": list(params.widths),
            "activation": params.activation,
        },
        "threshold": params.threshold,
        "seed": params.seed,
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "meta": checkpoint.meta,
        "calibration": checkpoint.calibration,
    }


def from_document(document: Dict[str, Any]) -> Checkpoint:
    if document.get("format") != FORMAT_TAG:
        raise ConfigError(f"unsupported checkpoint format {document.get('format')!r}, expected {FORMAT_TAG!r}")
    architecture = document["architecture"]
    params = MlpParams(
        weights=[np.array(W, dtype=float) for W in document["weights"]],
        biases=[np.array(b, dtype=float) for b in document["biases"]],
        threshold=float(document["threshold"]),
        activation=architecture["activation"],
        seed=document.get("seed"),
    )
    if params.input_dim != architecture["input_dim"] or list(params.widths) != architecture["widths"]:
        raise ConfigError("checkpoint weights do not match the recorded architecture")
    return Checkpoint(params=params, meta=document.get("meta", {}), calibration=document.get("calibration"))


def _dumps(document: Dict[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True)


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(_dumps(to_document(checkpoint)))
        f.write("\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {e}")
    return from_document(document)


def checkpoint_digest(checkpoint: Checkpoint) -> str:
    """SHA-256 of the canonical JSON form"""
    return hashlib.sha256(_dumps(to_document(checkpoint)).encode("utf-8")).hexdigest()
