"""Independent reference computations used to derive expected values.

Nothing here imports the autograd tape or kernel dispatch; everything is
written directly in float64 NumPy, one sequence at a time.
"""
import math

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)


def hellinger(p, q):
    return math.sqrt(sum((math.sqrt(a) - math.sqrt(b)) ** 2 for a, b in zip(p, q)) / 2.0)


def quantize_scalar(values, block):
    """Per-element absmax int8 codes with round-half-away-from-zero."""
    codes, scales = [], []
    for s in range(0, len(values), block):
        blk = [float(v) for v in values[s:s + block]]
        amax = max(abs(v) for v in blk)
        scales.append(amax / 127.0)
        for v in blk:
            if amax == 0:
                codes.append(0)
                continue
            r = v * 127.0 / amax
            c = min(127, math.floor(abs(r) + 0.5))
            codes.append(int(math.copysign(c, r)) if c else 0)
    return codes, scales


def adamw_scalar(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        p = p * (1 - lr * wd) - lr * mhat / (math.sqrt(vhat) + eps)
    return p


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x ** 3)))


def reference_hidden(params, cfg, ids, adapter=None):
    """Final hidden states of one sequence; ``params`` are float arrays.

    ``adapter`` is ``(method, phi, scaling)`` with ``phi`` keyed as in the
    package (``layers.i.name.lora_A`` and so on); dropout is not modelled.
    """
    P = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    t = len(ids)
    d, h = cfg.d_model, cfg.n_heads
    dh = d // h
    x = P["tok_emb"][ids] + P["pos_emb"][:t]

    def proj(i, name, z):
        key = f"layers.{i}.{name}"
        y = z @ P[key].T
        if adapter is None:
            return y
        method, phi, scaling = adapter
        if method in ("lora", "qlora") and key + ".lora_A" in phi:
            a = np.asarray(phi[key + ".lora_A"], np.float64)
            b = np.asarray(phi[key + ".lora_B"], np.float64)
            y = y + scaling * (z @ a.T) @ b.T
        elif method == "ia3" and key + ".ia3" in phi:
            y = y * np.asarray(phi[key + ".ia3"], np.float64)
        return y

    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        a = _ln(x, P[pre + "ln1.gain"], P[pre + "ln1.bias"])
        q, k, v = proj(i, "q_proj", a), proj(i, "k_proj", a), proj(i, "v_proj", a)
        ctx = np.zeros((t, d))
        for head in range(h):
            sl = slice(head * dh, (head + 1) * dh)
            for row in range(t):
                s = q[row, sl] @ k[:row + 1, sl].T / math.sqrt(dh)
                w = np.exp(s - s.max())
                w /= w.sum()
                ctx[row, sl] = w @ v[:row + 1, sl]
        x = x + proj(i, "o_proj", ctx)
        if cfg.d_ff:
            m = _ln(x, P[pre + "ln2.gain"], P[pre + "ln2.bias"])
            x = x + proj(i, "down_proj", _gelu(proj(i, "up_proj", m)))
    return _ln(x, P["ln_f.gain"], P["ln_f.bias"])


def reference_logprob(params, cfg, prompt, completion, adapter=None):
    """Sum of log P(completion token | prefix), chained one token at a time."""
    if not completion:
        return 0.0
    ids = [1, *prompt, *completion][:-1]
    hid = reference_hidden(params, cfg, ids, adapter)
    head = np.asarray(params["head"], np.float64)
    total = 0.0
    for j, tok in enumerate(completion):
        z = head @ hid[len(prompt) + j]
        z = z - z.max()
        total += z[tok] - math.log(np.exp(z).sum())
    return total


def pooled_sgd_step(phi, grads_per_instance, lr):
    """One full-batch SGD step on the pooled mean of per-instance gradients."""
    n = len(grads_per_instance)
    return {k: np.asarray(phi[k], np.float64) - lr * sum(np.asarray(g[k], np.float64)
                                                         for g in grads_per_instance) / n
            for k in phi}
