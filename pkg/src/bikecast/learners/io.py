"""JSON round-trip for fitted models.

Floats are written with ``repr`` precision, so a reload reproduces predictions
bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .boost import BoostModel
from .forest import ForestModel
from .plsr import PLSRModel
from .tree import RegressionTree

FORMAT_VERSION = 1
_KIND = {RegressionTree: "tree", ForestModel: "forest", BoostModel: "lsboost", PLSRModel: "plsr"}
_CLASS = {v: k for k, v in _KIND.items()}


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"dtype": value.dtype.str, "shape": list(value.shape), "data": value.ravel().tolist()}
    if isinstance(value, RegressionTree):
        return _payload(value)
    if isinstance(value, tuple):
        return [_encode(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _payload(model) -> dict:
    return {f.name: _encode(getattr(model, f.name)) for f in fields(model)}


def _decode_array(obj) -> np.ndarray:
    return np.array(obj["data"], dtype=np.dtype(obj["dtype"])).reshape(obj["shape"])


def _build(cls, payload: dict):
    kwargs = {}
    for f in fields(cls):
        v = payload[f.name]
        if isinstance(v, dict) and "dtype" in v:
            v = _decode_array(v)
        elif f.name == "trees":
            v = tuple(_build(RegressionTree, t) for t in v)
        kwargs[f.name] = v
    return cls(**kwargs)


def model_to_dict(model, hyperparams: dict | None = None) -> dict:
    kind = _KIND[type(model)]
    return {"format": FORMAT_VERSION, "kind": kind, "hyperparams": hyperparams or {}, "payload": _payload(model)}


def model_from_dict(doc: dict):
    if doc.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    return _build(_CLASS[doc["kind"]], doc["payload"])


def dumps(model, hyperparams: dict | None = None) -> str:
    return json.dumps(model_to_dict(model, hyperparams), separators=(",", ":"))


def loads(text: str):
    return model_from_dict(json.loads(text))


def save_model(model, path, hyperparams: dict | None = None) -> None:
    Path(path).write_text(dumps(model, hyperparams) + "\n")


def load_model(path):
    return loads(Path(path).read_text())
