"""Versioned JSON run configuration.

A run config names the task, the model dimensions, the training
hyperparameters, where the data comes from (files or a synthetic spec) and
the output directory. It is validated against :data:`SCHEMA` before any
computation; unknown keys are rejected at every level.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .data import SynthSpec, gen_synth, load_conll, load_mlc, split
from .implicit import IhvpConfig
from .tasks import MLCTask, SeqTask
from .trainer import TrainConfig

CONFIG_VERSION = 1

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_HIDDEN = {"type": "array", "items": _POS_INT}

_IHVP = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "k": {"type": "integer", "minimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "delta": _NONNEG,
        "eps": {"type": "number", "exclusiveMinimum": 0},
    },
}

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "t_inner": _POS_INT,
        "t_outer": _POS_INT,
        "eta_inner": _NONNEG,
        "eta_outer": _NONNEG,
        "lam": _NONNEG,
        "lam_rank": _NONNEG,
        "loss": {"enum": ["ssvm", "cd"]},
        "k_cd": _POS_INT,
        "relaxed_negative": {"type": "boolean"},
        "ihvp": _IHVP,
        "batch_size": _POS_INT,
        "seed": _INT,
        "eval_every": _POS_INT,
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "patience": {"oneOf": [_POS_INT, {"type": "null"}]},
        "fresh_outer_batch": {"type": "boolean"},
    },
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "infer_hidden": _HIDDEN,
        "feature_hidden": _HIDDEN,
        "feature_dim": _POS_INT,
        "global_hidden": _POS_INT,
        "embed_dim": _POS_INT,
        "radius": {"type": "integer", "minimum": 0},
    },
}

_SYNTH = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_labels", "n_features", "n_examples"],
    "properties": {
        "n_labels": _POS_INT,
        "n_features": _POS_INT,
        "n_examples": _POS_INT,
        "seed": _INT,
        "strength": _NUM,
        "weight_scale": _NONNEG,
        "sweeps": _POS_INT,
        "balanced": {"type": "boolean"},
    },
}

_FRACTIONS = {"type": "array", "items": _NONNEG, "minItems": 3, "maxItems": 3}

_DATA = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["synth"],
            "properties": {"synth": _SYNTH, "split": _FRACTIONS, "split_seed": _INT},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["train"],
            "properties": {
                "train": {"type": "string"},
                "valid": {"type": "string"},
                "test": {"type": "string"},
            },
        },
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "task", "data"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "task": {"enum": ["mlc", "seq"]},
        "model": _MODEL,
        "train": _TRAIN,
        "data": _DATA,
        "output": {"type": "string"},
    },
}

_MLC_MODEL_KEYS = ("infer_hidden", "feature_hidden", "feature_dim", "global_hidden")
_SEQ_MODEL_KEYS = ("embed_dim", "infer_hidden", "feature_hidden", "feature_dim", "radius")


class ConfigError(ValueError):
    """The run config is malformed or inconsistent."""


def validate(raw):
    """Schema-check a parsed config; raise :class:`ConfigError` with the failing path."""
    try:
        jsonschema.validate(raw, SCHEMA, cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    allowed = _MLC_MODEL_KEYS if raw["task"] == "mlc" else _SEQ_MODEL_KEYS
    extra = sorted(set(raw.get("model", {})) - set(allowed))
    if extra:
        raise ConfigError(f"config error at model: keys {extra} do not apply to task {raw['task']!r}")
    if raw["task"] == "seq" and "synth" in raw["data"]:
        raise ConfigError("config error at data: synthetic data is multi-label only")
    return raw


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def task_name(self):
        return self.raw["task"]

    @property
    def output(self):
        out = self.raw.get("output")
        return None if out is None else self._path(out)

    def _path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def train_config(self):
        t = dict(self.raw.get("train", {}))
        if "ihvp" in t:
            t["ihvp"] = IhvpConfig(**t["ihvp"])
        return TrainConfig(**t)

    def with_overrides(self, seed=None, output=None):
        raw = json.loads(json.dumps(self.raw))
        if seed is not None:
            raw.setdefault("train", {})["seed"] = seed
        if output is not None:
            raw["output"] = str(output)
        return RunConfig(validate(raw), self.base_dir)

    def config_hash(self):
        """SHA-256 of the canonical config, excluding where output is written."""
        body = {k: v for k, v in self.raw.items() if k != "output"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def load_data(self):
        """Return ``(train, valid, test)``; missing parts are ``None``."""
        d = self.raw["data"]
        if "synth" in d:
            s = dict(d["synth"])
            spec = SynthSpec.planted(s.pop("n_labels"), s.pop("n_features"), s.pop("n_examples"), **s)
            fractions = d.get("split", [0.7, 0.1, 0.2])
            return split(gen_synth(spec), fractions, seed=d.get("split_seed", spec.seed))
        if self.task_name == "mlc":
            return tuple(load_mlc(self._path(d[k])) if k in d else None
                         for k in ("train", "valid", "test"))
        train = load_conll(self._path(d["train"]))
        rest = tuple(load_conll(self._path(d[k]), train.vocab, train.tagset) if k in d else None
                     for k in ("valid", "test"))
        return (train,) + rest

    def build_task(self, train):
        m = self.raw.get("model", {})
        hidden = {k: tuple(m[k]) for k in ("infer_hidden", "feature_hidden") if k in m}
        rest = {k: v for k, v in m.items() if k not in hidden}
        if self.task_name == "mlc":
            return MLCTask.build(train.n_features, train.n_labels, **hidden, **rest)
        return SeqTask.build(train.vocab_size, train.n_tags, **hidden, **rest)


def parse_config(text, base_dir="."):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return RunConfig(validate(raw), Path(base_dir))


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)
