"""JSON serialization of fitted models.

Floats are written with 17 significant digits so a save/load round trip is
exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fit import ComponentPosterior, VgmModel


def _dump_value(obj) -> str:
    if isinstance(obj, list):
        return "[" + ", ".join(_dump_value(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump_value(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, float):
        return f"{obj:.17e}"
    return json.dumps(obj)


def model_to_dict(model: VgmModel) -> dict:
    return {
        "dim": model.dim,
        "components": [
            {"rho": c.rho, "beta": c.beta, "nu": c.nu, "gamma": c.gamma.tolist(), "V": c.V.tolist()}
            for c in model.components
        ],
    }


def model_from_dict(doc: dict) -> VgmModel:
    try:
        dim = int(doc["dim"])
        comps = tuple(
            ComponentPosterior(
                float(c["rho"]),
                float(c["beta"]),
                float(c["nu"]),
                np.asarray(c["gamma"], dtype=float),
                np.asarray(c["V"], dtype=float),
            )
            for c in doc["components"]
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed model document: {exc}") from exc
    return VgmModel(dim, comps)


def dumps(model: VgmModel) -> str:
    return _dump_value(model_to_dict(model)) + "\n"


def loads(text: str) -> VgmModel:
    return model_from_dict(json.loads(text))


def save(model: VgmModel, path) -> None:
    Path(path).write_text(dumps(model))


def load(path) -> VgmModel:
    return loads(Path(path).read_text())
