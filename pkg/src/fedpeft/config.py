"""Experiment configuration: a YAML key/value tree over built-in defaults.

Precedence is command-line flags > config file > defaults. Every key has a
default, so an empty file describes the standard protocol shape (five
nodes, four rounds of one local epoch, seed 42).
"""
from __future__ import annotations

import copy
import os
from importlib import resources

import yaml

from .backbone import BackboneConfig
from .federate import FedConfig
from .peft import AdapterSpec

OUT_ENV = "FEDPEFT_OUT"
DEFAULT_OUT = "runs"
SCENARIOS = ("centralized", "single", "federated")

DEFAULTS = {
    "seed": 42,
    "out": None,  # None -> $FEDPEFT_OUT, then ./runs
    "data": {
        "source": "synthetic",  # "synthetic" or a JSONL path
        "test_source": None,  # optional JSONL with the held-out split
        "synthetic": {"k": 4, "n": 1000, "noise": 0.0},
        "val_fraction": 0.1,
        "test_fraction": 0.1,  # used only without test_source
        "max_len": 512,
    },
    "task": {
        "name": None,
        "answers": None,  # None -> letters, one per option
        "template": None,  # None -> chosen from the record shape
    },
    "backbone": {"d_model": 64, "n_layers": 2, "n_heads": 4, "d_ff": 256, "max_len": 512},
    "adapter": {"method": "lora", "rank": 32, "alpha": 21.0, "dropout": 0.1, "targets": None,
                "block_size": 64, "init_std": 0.02},
    "partition": {"nodes": 5, "alpha": 1.0, "target_hd": None, "aggregate": "node_vs_global"},
    "federation": {"rounds": 4, "local_epochs": 1, "batch_size": 4, "lr": 1e-4,
                   "optimizer": "adamw", "weight_decay": 0.0, "max_grad_norm": None,
                   "warmup_steps": 0, "reset_optimizer": True, "select_best_val": False,
                   "log_validation": True, "workers": 1, "eval_chunk": 256},
    "run": {"scenarios": list(SCENARIOS), "probe_steps": 4},
}


class ConfigError(ValueError):
    pass


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("fedpeft.presets").iterdir()
                  if p.name.endswith(".yaml"))


def resolve_config_path(path):
    """A file path, or the name of a bundled preset such as ``synthetic``."""
    if os.path.exists(path) or path not in preset_names():
        return path
    return str(resources.files("fedpeft.presets") / f"{path}.yaml")


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_assignment(text):
    """``a.b.c=value`` -> nested dict; the value is read as YAML."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"expected KEY=VALUE, got {text!r}")
    val = yaml.safe_load(raw) if raw else None
    for part in reversed(key.split(".")):
        val = {part: val}
    return val


class ExperimentConfig:
    """A resolved configuration tree plus typed views of its sections."""

    def __init__(self, tree=None):
        self.tree = _merge(DEFAULTS, tree or {})
        self.validate()

    # -- construction
    @classmethod
    def load(cls, path=None, overrides=()):
        tree = {}
        if path is not None:
            path = resolve_config_path(path)
            try:
                with open(path, encoding="utf-8") as fh:
                    tree = yaml.safe_load(fh) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML ({exc})") from None
            if not isinstance(tree, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
        cfg = cls(tree)
        for ov in overrides:
            cfg = cfg.updated(ov)
        return cfg

    @classmethod
    def from_yaml(cls, text):
        return cls(yaml.safe_load(text) or {})

    def updated(self, over):
        return ExperimentConfig(_merge(self.tree, over))

    def to_dict(self):
        return copy.deepcopy(self.tree)

    def to_yaml(self):
        return yaml.safe_dump(self.tree, sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.tree == other.tree

    # -- views
    def __getitem__(self, key):
        return self.tree[key]

    @property
    def seed(self):
        return self.tree["seed"]

    @property
    def out_dir(self):
        return self.tree["out"] or os.environ.get(OUT_ENV) or DEFAULT_OUT

    def backbone_config(self):
        return BackboneConfig(**self.tree["backbone"])

    def adapter_spec(self, method=None):
        a = dict(self.tree["adapter"])
        if method is not None:
            a["method"] = method
        return AdapterSpec(**a)

    def fed_config(self):
        return FedConfig(seed=self.seed, **self.tree["federation"])

    def validate(self):
        t = self.tree
        seed = t["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        p = t["partition"]
        if isinstance(p["nodes"], bool) or not isinstance(p["nodes"], int) or p["nodes"] < 1:
            raise ConfigError("partition.nodes must be a positive integer")
        for s in t["run"]["scenarios"]:
            if s not in SCENARIOS:
                raise ConfigError(f"unknown scenario {s!r}; choose from {SCENARIOS}")
        try:
            self.backbone_config()
            self.adapter_spec()
            self.fed_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self
