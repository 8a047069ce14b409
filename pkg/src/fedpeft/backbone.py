"""Tiny decoder-only transformer over bytes that scores candidate completions.

Token ids: 0 = pad, 1 = bos, 2 = eos, byte ``b`` -> ``b + 3``. A prompt and a
completion are scored as ``[bos] + prompt + completion`` with next-token
log-probabilities summed over completion positions only.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from . import numkit as nk
from .numkit import rng as rngmod

PAD, BOS, EOS = 0, 1, 2
N_SPECIAL = 3
VOCAB_SIZE = 256 + N_SPECIAL
PROJECTIONS = ("q_proj", "k_proj", "v_proj", "o_proj", "up_proj", "down_proj")


def tokenize(text):
    if isinstance(text, str):
        text = text.encode("utf-8")
    return [b + N_SPECIAL for b in bytes(text)]


def detokenize(tokens):
    return bytes(t - N_SPECIAL for t in tokens if t >= N_SPECIAL)


@dataclass(frozen=True)
class BackboneConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 512
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size is fixed at {VOCAB_SIZE}")
        if self.d_ff < 0 or self.n_layers < 1:
            raise ValueError("need n_layers >= 1 and d_ff >= 0")

    @property
    def projections(self):
        """Projection names present in every layer; ``d_ff=0`` drops the MLP."""
        return PROJECTIONS if self.d_ff else PROJECTIONS[:4]

    def projection_shape(self, name):
        d, f = self.d_model, self.d_ff
        return {"up_proj": (f, d), "down_proj": (d, f)}.get(name, (d, d))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Instance:
    prompt: tuple
    completion: tuple
    gold: int
    candidates: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(self.prompt))
        object.__setattr__(self, "completion", tuple(self.completion))
        object.__setattr__(self, "candidates", tuple(tuple(c) for c in self.candidates))
        if self.candidates and not 0 <= self.gold < len(self.candidates):
            raise ValueError(f"gold index {self.gold} outside [0, {len(self.candidates)})")

    @classmethod
    def from_text(cls, prompt, options, gold):
        cands = tuple(tuple(tokenize(o)) for o in options)
        return cls(tuple(tokenize(prompt)), cands[gold], int(gold), cands)


def truncate_prompt(instance, max_len=512):
    """Drop the oldest prompt tokens so prompt + longest candidate fits."""
    longest = max((len(c) for c in instance.candidates), default=len(instance.completion))
    longest = max(longest, len(instance.completion))
    if longest >= max_len:
        raise ValueError(f"candidate of length {longest} leaves no room within {max_len} tokens")
    room = max_len - longest
    if len(instance.prompt) <= room:
        return instance
    return Instance(instance.prompt[len(instance.prompt) - room:], instance.completion,
                    instance.gold, instance.candidates)


def _init_params(config, rng):
    gen = rng.generator()
    d, v = config.d_model, config.vocab_size

    def normal(shape, std):
        return gen.normal(0.0, std, size=shape).astype(np.float32)

    params = {"tok_emb": normal((v, d), 1.0), "pos_emb": normal((config.max_len, d), 0.2)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "ln1.gain"] = np.ones(d, np.float32)
        params[p + "ln1.bias"] = np.zeros(d, np.float32)
        for name in config.projections[:4]:
            params[p + name] = normal(config.projection_shape(name), 1.0 / math.sqrt(d))
        if config.d_ff:
            params[p + "ln2.gain"] = np.ones(d, np.float32)
            params[p + "ln2.bias"] = np.zeros(d, np.float32)
            params[p + "up_proj"] = normal((config.d_ff, d), 1.0 / math.sqrt(d))
            params[p + "down_proj"] = normal((d, config.d_ff), 1.0 / math.sqrt(config.d_ff))
    params["ln_f.gain"] = np.ones(d, np.float32)
    params["ln_f.bias"] = np.zeros(d, np.float32)
    params["head"] = normal((v, d), 1.0 / math.sqrt(d))
    return params


class Backbone:
    """Frozen-by-default parameter set θ plus the fixed forward topology.

    ``params`` maps names to :class:`~fedpeft.numkit.Tensor` or, for a
    quantized copy, :class:`~fedpeft.numkit.QuantizedTensor` projections.
    """

    def __init__(self, config, params):
        self.config = config
        self.params = {}
        for k, v in params.items():
            self.params[k] = v if isinstance(v, (nk.Tensor, nk.QuantizedTensor)) else nk.Tensor(v, name=k)

    @classmethod
    def init(cls, config=None, seed=42):
        config = config or BackboneConfig()
        return cls(config, _init_params(config, nk.Rng(seed, rngmod.INIT)))

    # --- parameter views

    def weight(self, layer, name):
        return self.params[f"layers.{layer}.{name}"]

    def projection_keys(self):
        return [f"layers.{i}.{n}" for i in range(self.config.n_layers) for n in self.config.projections]

    def set_trainable(self, flag):
        for t in self.params.values():
            if isinstance(t, nk.Tensor):
                t.requires_grad = bool(flag)

    def resident_bytes(self):
        return sum(t.nbytes for t in self.params.values())

    def state_arrays(self):
        out = {}
        for k, t in self.params.items():
            out[k] = t.dequantize_array(np.float32) if isinstance(t, nk.QuantizedTensor) else t.data
        return out

    def save(self, path):
        return checkpoint.save(path, self.state_arrays())

    @classmethod
    def load(cls, path, config):
        return cls(config, checkpoint.load(path))

    # --- forward

    def _linear(self, x, w):
        return nk.qlinear(x, w) if isinstance(w, nk.QuantizedTensor) else nk.linear(x, w)

    def project(self, layer, name, x):
        return self._linear(x, self.weight(layer, name))

    def forward_hidden(self, ids, project=None):
        """Final-layer-normed hidden states, shape (B, T, d)."""
        project = project or self.project
        cfg = self.config
        ids = np.asarray(ids, dtype=np.int64)
        b, t = ids.shape
        if t > cfg.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {cfg.max_len}")
        p = self.params
        x = nk.add(nk.embedding(p["tok_emb"], ids), nk.embedding(p["pos_emb"], np.arange(t)))
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        for i in range(cfg.n_layers):
            pre = f"layers.{i}."
            a = nk.layernorm(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"])

            def heads(z):
                return nk.transpose(nk.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

            q = heads(project(i, "q_proj", a))
            k = heads(project(i, "k_proj", a))
            v = heads(project(i, "v_proj", a))
            scores = nk.scale(nk.matmul(q, nk.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
            ctx = nk.matmul(nk.causal_softmax(scores), v)
            ctx = nk.reshape(nk.transpose(ctx, (0, 2, 1, 3)), (b, t, cfg.d_model))
            x = nk.add(x, project(i, "o_proj", ctx))
            if cfg.d_ff:
                m = nk.layernorm(x, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
                m = nk.gelu(project(i, "up_proj", m))
                x = nk.add(x, project(i, "down_proj", m))
        return nk.layernorm(x, p["ln_f.gain"], p["ln_f.bias"])

    def head(self, rows):
        return nk.linear(rows, self.params["head"])

    def hidden(self, ids, train=False, gen=None):
        return self.forward_hidden(ids)


# ------------------------------------------------------------------ scoring

def _pack(pairs, max_len):
    """Right-padded input ids and the coordinates of completion targets."""
    seqs = []
    for prompt, completion in pairs:
        full = [BOS, *prompt, *completion]
        if len(full) - 1 > max_len:
            raise ValueError(f"prompt + completion length {len(full) - 1} exceeds max_len {max_len}")
        seqs.append(full)
    t = max(len(s) for s in seqs) - 1
    ids = np.full((len(seqs), max(t, 1)), PAD, dtype=np.int64)
    bi, ti, tgt = [], [], []
    for row, (s, (prompt, completion)) in enumerate(zip(seqs, pairs)):
        ids[row, :len(s) - 1] = s[:-1]
        start = len(prompt)
        for j, tok in enumerate(completion):
            bi.append(row)
            ti.append(start + j)
            tgt.append(tok)
    return ids, np.array(bi, np.int64), np.array(ti, np.int64), np.array(tgt, np.int64)


def completion_nll(model, pairs, train=False, gen=None):
    """Per-sequence negative log-likelihood of the completions, shape (B,)."""
    ids, bi, ti, tgt = _pack(pairs, model.config.max_len)
    if bi.size == 0:
        return nk.Tensor(np.zeros(len(pairs)))
    hid = model.hidden(ids, train=train, gen=gen)
    logits = model.head(nk.gather_rows(hid, bi, ti))
    return nk.segment_sum(nk.cross_entropy_rows(logits, tgt), bi, len(pairs))


def forward_logprob(model, prompt, completion):
    """Total log-probability of ``completion`` following ``prompt``."""
    return -float(completion_nll(model, [(prompt, completion)]).data[0])


def sequence_logprobs(model, pairs, chunk=256):
    out = []
    for s in range(0, len(pairs), chunk):
        out.append(-completion_nll(model, pairs[s:s + chunk]).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def logits(model, ids):
    """Full next-token logits for every position, shape (B, T, V)."""
    ids = np.asarray(ids, dtype=np.int64)
    return model.head(model.hidden(ids)).data


def choose(logprobs):
    """Argmax with ties broken by the lowest index."""
    return int(np.argmax(np.asarray(logprobs)))


def candidate_logprobs(model, instances, chunk=256):
    """Log-probability of every candidate of every instance (list of arrays)."""
    pairs, owners = [], []
    for n, inst in enumerate(instances):
        if len(inst.candidates) < 2:
            raise ValueError("prediction needs at least two candidates")
        for c in inst.candidates:
            pairs.append((inst.prompt, c))
            owners.append(n)
    flat = sequence_logprobs(model, pairs, chunk)
    out = [[] for _ in instances]
    for n, lp in zip(owners, flat):
        out[n].append(lp)
    return [np.array(o) for o in out]


def predict(model, instance):
    return choose(candidate_logprobs(model, [instance])[0])


def predict_batch(model, instances, chunk=256):
    return [choose(lp) for lp in candidate_logprobs(model, instances, chunk)]


def training_loss(model, batch, train=False, gen=None):
    """Mean over instances of the summed completion cross-entropy."""
    if not batch:
        raise ValueError("empty batch")
    nll = completion_nll(model, [(x.prompt, x.completion) for x in batch], train=train, gen=gen)
    return nk.scale(nk.sum(nll), 1.0 / len(batch))
