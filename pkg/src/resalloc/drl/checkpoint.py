"""Network checkpoints as ``.npz`` files with a JSON header.

The header pins the model's activity, resource and pair ordering through a
hash, so a network is never silently applied to a model whose action or
observation layout differs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..model import ProcessModel
from .env import ActionSpace
from .net import PolicyNet

FORMAT_VERSION = 1


class CheckpointMismatch(ValueError):
    pass


def model_fingerprint(model: ProcessModel) -> str:
    layout = {
        "activities": list(model.activities),
        "resources": list(model.resources),
        "pairs": [list(p) for p in ActionSpace(model).pairs],
    }
    return hashlib.sha256(json.dumps(layout, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, net: PolicyNet, model: ProcessModel, config: dict | None = None,
                    temporal: bool = False) -> Path:
    path = Path(path)
    header = {
        "version": FORMAT_VERSION,
        "model": model.name,
        "fingerprint": model_fingerprint(model),
        "obs_dim": net.obs_dim,
        "n_actions": net.n_actions,
        "hidden": list(net.hidden),
        "activation": net.activation,
        "temporal": bool(temporal),
        "config": config or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), params=net.params)
    return path


def read_header(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(str(z["header"]))


def load_checkpoint(path, model: ProcessModel | None = None) -> tuple[PolicyNet, dict]:
    """Load ``(net, header)``; with ``model`` given, refuse a layout mismatch."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        params = z["params"]
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {header.get('version')}")
    if model is not None and header["fingerprint"] != model_fingerprint(model):
        raise CheckpointMismatch(
            f"checkpoint was trained on model {header['model']!r} with a different "
            f"activity/resource layout than {model.name!r}")
    net = PolicyNet(header["obs_dim"], header["n_actions"], tuple(header["hidden"]),
                    header["activation"], params=params)
    return net, header
