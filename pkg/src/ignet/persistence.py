"""Versioned JSON model files.

A file holds the model config, every parameter tensor as a row-major
float64 list, the normalizer and optionally the training report. One-vs-all
models store one parameter set per class. Python's float repr round-trips,
so a saved model reloads bit for bit.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Normalizer
from .exceptions import SchemaError
from .model import ModelConfig, init_parameters

FORMAT = "ignet-model"
VERSION = 1
TASKS = ("regression", "binary-classification", "multiclass")


@dataclass
class ModelFile:
    config: ModelConfig
    task: str
    heads: list  # IgnParameters, one unless multiclass
    normalizer: Normalizer = None
    report: dict = None
    classes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)  # feature names, target name, provenance

    @property
    def params(self):
        return self.heads[0]


def params_to_dict(params):
    return {
        k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel(order="C")]}
        for k, v in params.flatten().items()
    }


def params_from_dict(config, d):
    template = init_parameters(config, 0)
    arrays = {}
    for k, ref in template.flatten().items():
        if k not in d:
            raise SchemaError(f"model file lacks parameter {k!r}")
        entry = d[k]
        arr = np.array(entry["data"], dtype=np.float64)
        if list(ref.shape) != list(entry["shape"]) or arr.size != ref.size:
            raise SchemaError(f"parameter {k!r}: shape {entry['shape']}, config implies {list(ref.shape)}")
        arrays[k] = arr.reshape(ref.shape)
    return template.unflatten(arrays)


def model_to_dict(model):
    return {
        "format": FORMAT,
        "version": VERSION,
        "task": model.task,
        "config": model.config.to_dict(),
        "classes": list(model.classes),
        "heads": [params_to_dict(p) for p in model.heads],
        "normalizer": model.normalizer.to_dict() if model.normalizer else None,
        "report": model.report,
        "meta": model.meta,
    }


def model_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise SchemaError("not an ignet model file")
    if d.get("version") != VERSION:
        raise SchemaError(f"unsupported model file version {d.get('version')!r}")
    if d.get("task") not in TASKS:
        raise SchemaError(f"unknown task {d.get('task')!r}")
    try:
        config = ModelConfig.from_dict(d["config"])
    except (TypeError, KeyError) as exc:
        raise SchemaError(f"bad model config: {exc}") from exc
    heads = [params_from_dict(config, h) for h in d["heads"]]
    if not heads:
        raise SchemaError("model file has no parameters")
    norm = Normalizer.from_dict(d["normalizer"]) if d.get("normalizer") else None
    return ModelFile(config, d["task"], heads, norm, d.get("report"),
                     list(d.get("classes", [])), dict(d.get("meta") or {}))


def save_model(path, model):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), sort_keys=True))
    return path


def load_model(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(d)
