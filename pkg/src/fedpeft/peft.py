"""LoRA, quantized-backbone LoRA and IA3 adapters over a frozen backbone.

The trainable set φ is a flat ``name -> Tensor`` mapping with names such as
``layers.0.q_proj.lora_A`` or ``layers.1.down_proj.ia3``. Only φ crosses the
wire in federated training; :func:`extract_phi` / :func:`load_phi` move it
in and out of a model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint
from . import numkit as nk
from .backbone import Backbone
from .numkit import rng as rngmod
from .numkit.quant import QuantizedTensor, dequantize, quantize

METHODS = ("lora", "qlora", "ia3")
IA3_DEFAULT_TARGETS = ("k_proj", "v_proj", "down_proj")

__all__ = [
    "AdaptedModel", "AdapterError", "AdapterSpec", "QuantizedTensor", "attach", "dequantize",
    "extract_phi", "load_phi", "load_phi_file", "lora_targets", "quantize", "save_phi",
    "trainable_bytes",
]


class AdapterError(ValueError):
    pass


@dataclass(frozen=True)
class AdapterSpec:
    method: str = "lora"
    rank: int = 32
    alpha: float = 21.0
    dropout: float = 0.1
    targets: tuple | None = None
    block_size: int = 64
    init_std: float = 0.02

    def __post_init__(self):
        if self.method not in METHODS:
            raise AdapterError(f"unknown PEFT method {self.method!r}; choose from {METHODS}")
        if self.rank < 1:
            raise AdapterError("rank must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise AdapterError("dropout must lie in [0, 1)")
        if self.block_size < 2:
            raise AdapterError("block size must be >= 2")
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def is_lora(self):
        return self.method in ("lora", "qlora")

    @property
    def scaling(self):
        return self.alpha / self.rank

    def to_dict(self):
        d = asdict(self)
        d["targets"] = list(self.targets) if self.targets is not None else None
        return d


def lora_targets(backbone):
    """Every projection matrix in the architecture, as ``layers.i.name`` keys."""
    return backbone.projection_keys()


def _resolve_targets(backbone, spec):
    present = set(backbone.config.projections)
    if spec.targets is None:
        names = backbone.config.projections if spec.is_lora else IA3_DEFAULT_TARGETS
    else:
        names = spec.targets
    unknown = [n for n in names if n not in present]
    if unknown:
        raise AdapterError(f"unknown target module(s) {unknown}; backbone has {sorted(present)}")
    return [f"layers.{i}.{n}" for i in range(backbone.config.n_layers)
            for n in backbone.config.projections if n in names]


class AdaptedModel:
    """A frozen backbone with an attached adapter set φ."""

    def __init__(self, backbone, spec, phi, targets):
        self.backbone = backbone
        self.spec = spec
        self.phi = phi
        self.targets = tuple(targets)
        self._target_set = set(targets)
        self._train = False
        self._gen = None

    @property
    def config(self):
        return self.backbone.config

    def trainable(self):
        return self.phi

    def resident_bytes(self):
        """Bytes of the frozen backbone as stored (int8 codes for qlora)."""
        return self.backbone.resident_bytes()

    def with_phi(self, phi=None):
        """A sibling sharing θ but owning a private copy of φ."""
        src = self.phi if phi is None else phi
        own = {k: nk.Tensor(np.array(getattr(v, "data", v), copy=True), requires_grad=True, name=k)
               for k, v in src.items()}
        return AdaptedModel(self.backbone, self.spec, own, self.targets)

    def _project(self, layer, name, x):
        key = f"layers.{layer}.{name}"
        y = self.backbone.project(layer, name, x)
        if key not in self._target_set:
            return y
        if self.spec.is_lora:
            xin = x
            rate = self.spec.dropout
            if self._train and rate > 0.0:
                if self._gen is None:
                    raise AdapterError("training-mode forward with dropout needs a generator")
                xin = nk.dropout(x, self._gen.random(x.shape) >= rate, rate)
            low = nk.linear(nk.linear(xin, self.phi[key + ".lora_A"]), self.phi[key + ".lora_B"])
            return nk.add(y, nk.scale(low, self.spec.scaling))
        return nk.mul(y, self.phi[key + ".ia3"])

    def hidden(self, ids, train=False, gen=None):
        self._train, self._gen = train, gen
        try:
            return self.backbone.forward_hidden(ids, project=self._project)
        finally:
            self._train, self._gen = False, None

    def head(self, rows):
        return self.backbone.head(rows)


def attach(backbone, spec=None, seed=42):
    """Freeze θ and create φ; the adapted map initially equals the backbone."""
    spec = spec or AdapterSpec()
    if isinstance(backbone, AdaptedModel):
        raise AdapterError("an adapter is already attached")
    targets = _resolve_targets(backbone, spec)
    if spec.method == "qlora":
        keys = set(backbone.projection_keys())
        params = {k: (quantize(v, spec.block_size) if k in keys and isinstance(v, nk.Tensor) else v)
                  for k, v in backbone.params.items()}
        backbone = Backbone(backbone.config, params)
    backbone.set_trainable(False)
    gen = nk.Rng(seed, rngmod.INIT).child(1).generator()
    phi = {}
    cfg = backbone.config
    for key in targets:
        d_out, d_in = cfg.projection_shape(key.split(".")[-1])
        if spec.is_lora:
            a = gen.normal(0.0, spec.init_std, size=(spec.rank, d_in)).astype(np.float32)
            phi[key + ".lora_A"] = nk.Tensor(a, requires_grad=True, name=key + ".lora_A")
            phi[key + ".lora_B"] = nk.Tensor(np.zeros((d_out, spec.rank), np.float32),
                                             requires_grad=True, name=key + ".lora_B")
        else:
            phi[key + ".ia3"] = nk.Tensor(np.ones(d_out, np.float32), requires_grad=True,
                                          name=key + ".ia3")
    return AdaptedModel(backbone, spec, phi, targets)


def _require_adapter(model):
    if not isinstance(model, AdaptedModel):
        raise AdapterError("no adapter attached")


def extract_phi(model):
    """Copy of φ as an ordered ``name -> float32 array`` mapping."""
    _require_adapter(model)
    return {k: t.data.copy() for k, t in model.phi.items()}


def load_phi(model, phi):
    _require_adapter(model)
    if set(phi) != set(model.phi):
        missing = sorted(set(model.phi) - set(phi))
        extra = sorted(set(phi) - set(model.phi))
        raise AdapterError(f"φ key mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for k, t in model.phi.items():
        arr = np.asarray(getattr(phi[k], "data", phi[k]), dtype=t.data.dtype)
        if arr.shape != t.data.shape:
            raise AdapterError(f"shape mismatch for {k}: {arr.shape} vs {t.data.shape}")
        t.data = arr.copy()
        t.grad = None
    return model


def trainable_bytes(model):
    """Serialized φ payload size: 4 bytes per value, header excluded."""
    _require_adapter(model)
    return sum(4 * t.numel for t in model.phi.values())


def save_phi(path, model_or_phi):
    phi = model_or_phi.phi if isinstance(model_or_phi, AdaptedModel) else model_or_phi
    return checkpoint.save(path, phi)


def load_phi_file(path):
    return checkpoint.load(path)
