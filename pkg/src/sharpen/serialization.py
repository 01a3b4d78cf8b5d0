"""JSON file formats for models, model classes and instances.

Floats are written with ``repr`` precision by the json module, so a
load/save round trip reproduces every table bit for bit.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .instances import SharpeningInstance
from .models import (AutoregressiveTabularModel, ConditionalModel, LinearSoftmaxModel, PromptDistribution,
                     PromptSpace, ResponseSpace, TabularModel)
from .sft import FiniteClass, LinearSoftmaxClass, ProductClass, TabularClass

FORMAT_VERSION = 1


def _item_out(v):
    return list(v) if isinstance(v, tuple) else v


def _item_in(v):
    return tuple(v) if isinstance(v, list) else v


def _num(v):
    """Finite float, or the strings "inf"/"-inf"."""
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _unnum(v):
    return float(v) if v in ("inf", "-inf") else v


def spaces_to_dict(prompts: PromptSpace, responses: ResponseSpace) -> dict:
    d = {"prompts": [_item_out(p) for p in prompts]}
    if responses.is_sequence:
        d["vocab"] = list(responses.vocab)
        d["horizon"] = responses.horizon
    else:
        d["responses"] = [_item_out(y) for y in responses.items]
    return d


def spaces_from_dict(d: dict) -> tuple[PromptSpace, ResponseSpace]:
    prompts = PromptSpace(_item_in(p) for p in d["prompts"])
    if "vocab" in d:
        return prompts, ResponseSpace.sequences(d["vocab"], d["horizon"])
    return prompts, ResponseSpace(_item_in(y) for y in d["responses"])


def model_to_dict(model: ConditionalModel) -> dict:
    d = spaces_to_dict(model.prompts, model.responses)
    if isinstance(model, TabularModel):
        d.update(type="tabular", probs=model.probs.tolist())
    elif isinstance(model, AutoregressiveTabularModel):
        d.update(type="autoregressive", conditionals=[c.tolist() for c in model.conditionals])
    elif isinstance(model, LinearSoftmaxModel):
        d.update(type="linear_softmax", features=[f.tolist() for f in model.features],
                 theta=[t.tolist() for t in model.theta], bound=model.bound, feature_bound=model.feature_bound)
    else:
        raise InputError(f"cannot serialize {type(model).__name__}")
    return d


def model_from_dict(d: dict) -> ConditionalModel:
    try:
        prompts, responses = spaces_from_dict(d)
        kind = d["type"]
        if kind == "tabular":
            return TabularModel(prompts, responses, d["probs"])
        if kind == "autoregressive":
            return AutoregressiveTabularModel(prompts, d["vocab"], [np.array(c) for c in d["conditionals"]])
        if kind == "linear_softmax":
            return LinearSoftmaxModel(prompts, responses, [np.array(f) for f in d["features"]],
                                      [np.array(t) for t in d["theta"]], d["bound"], d.get("feature_bound", 1.0))
    except KeyError as e:
        raise InputError(f"model record is missing field {e}") from None
    raise InputError(f"unknown model type {kind!r}")


def class_to_dict(cls) -> dict:
    if isinstance(cls, FiniteClass):
        return {"type": "finite", "models": [model_to_dict(m) for m in cls.models]}
    d = spaces_to_dict(cls.prompts, cls.responses)
    if isinstance(cls, ProductClass):
        d.update(type="product", rows=[r.tolist() for r in cls.rows])
    elif isinstance(cls, TabularClass):
        d.update(type="tabular")
    elif isinstance(cls, LinearSoftmaxClass):
        d.update(type="linear_softmax", features=[f.tolist() for f in cls.features], bound=cls.bound,
                 feature_bound=cls.feature_bound)
    else:
        raise InputError(f"cannot serialize {type(cls).__name__}")
    return d


def class_from_dict(d: dict):
    kind = d.get("type")
    if kind == "finite":
        return FiniteClass([model_from_dict(m) for m in d["models"]])
    prompts, responses = spaces_from_dict(d)
    if kind == "product":
        return ProductClass(prompts, responses, [np.array(r) for r in d["rows"]])
    if kind == "tabular":
        return TabularClass(prompts, responses)
    if kind == "linear_softmax":
        return LinearSoftmaxClass(prompts, responses, [np.array(f) for f in d["features"]], d["bound"],
                                  d.get("feature_bound", 1.0))
    raise InputError(f"unknown class type {kind!r}")


def _truth_out(truth: dict) -> dict:
    return {k: _num(v) for k, v in truth.items()}


def instance_to_dict(inst: SharpeningInstance) -> dict:
    return {"format": FORMAT_VERSION, "name": inst.name, "params": {k: _num(v) for k, v in inst.params.items()},
            "mu": inst.mu.weights.tolist(), "base": model_to_dict(inst.base),
            "class": class_to_dict(inst.model_class)}


def instance_from_dict(d: dict, truth: dict | None = None) -> SharpeningInstance:
    base = model_from_dict(d["base"])
    mu = PromptDistribution(base.prompts, d["mu"])
    params = {k: _unnum(v) for k, v in d.get("params", {}).items()}
    inst = SharpeningInstance(d["name"], mu, base, class_from_dict(d["class"]), params)
    if truth is not None:
        inst.truth = {k: _unnum(v) for k, v in truth.items()}
    return inst


def truth_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".truth.json")


def save_instance(inst: SharpeningInstance, path) -> None:
    """Write the instance and its ground-truth sidecar next to it."""
    Path(path).write_text(json.dumps(instance_to_dict(inst)))
    truth_path(path).write_text(json.dumps(_truth_out(inst.truth), sort_keys=True))


def load_instance(path) -> SharpeningInstance:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read instance file {path}: {e}") from None
    tp = truth_path(path)
    truth = json.loads(tp.read_text()) if tp.exists() else None
    return instance_from_dict(d, truth)


def save_model(model: ConditionalModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> ConditionalModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read model file {path}: {e}") from None
