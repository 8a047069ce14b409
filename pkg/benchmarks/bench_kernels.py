"""Compiled vs NumPy kernel timings, per kernel and per training step.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Shapes match the default desk backbone (d=64, 4 heads, ff=256) at batch 4
and sequence length 48.
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from fedpeft import datasets as ds
from fedpeft.backbone import Backbone, BackboneConfig, training_loss
from fedpeft.numkit import Rng, kernels, make_optimizer, optimizer_step, zero_grads
from fedpeft.peft import AdapterSpec, attach

B, T, D, H, FF = 4, 48, 64, 4, 256


def _cases(gen):
    x = gen.normal(size=(B * T, D)).astype(np.float32)
    gain, bias = np.ones(D, np.float32), np.zeros(D, np.float32)
    y, xhat, rstd = kernels.layernorm_forward(x, gain, bias, 1e-5)
    scores = gen.normal(size=(B, H, T, T)).astype(np.float32)
    probs = kernels.causal_softmax_forward(scores)
    u = gen.normal(size=(B, T, FF)).astype(np.float32)
    w = gen.normal(size=FF * D).astype(np.float32)
    codes, scales = kernels.quantize_blocks(w, 64)
    return {
        "layernorm_forward": lambda: kernels.layernorm_forward(x, gain, bias, 1e-5),
        "layernorm_backward": lambda: kernels.layernorm_backward(y, xhat, rstd, gain),
        "causal_softmax_forward": lambda: kernels.causal_softmax_forward(scores),
        "causal_softmax_backward": lambda: kernels.causal_softmax_backward(scores, probs),
        "gelu_forward": lambda: kernels.gelu_forward(u),
        "gelu_backward": lambda: kernels.gelu_backward(u, u),
        "quantize_blocks": lambda: kernels.quantize_blocks(w, 64),
        "dequantize_blocks": lambda: kernels.dequantize_blocks(codes, scales, 64),
    }


def _train_step_case(method):
    recs = ds.synth_task(n=B, rng=Rng(0, 6))
    batch = ds.to_instances(recs, ds.synth_taskdef(4))
    model = attach(Backbone.init(BackboneConfig(d_model=D, n_heads=H, d_ff=FF), 0), AdapterSpec(method), 0)
    opt = make_optimizer("adamw", 1e-3)
    params = model.trainable()
    gen = np.random.default_rng(0)

    def step():
        zero_grads(params)
        training_loss(model, batch, train=True, gen=gen).backward()
        optimizer_step(opt, params)
    return step


def _time(fn, repeat):
    fn()  # warm-up
    number = max(1, repeat)
    return min(timeit.repeat(fn, number=number, repeat=3)) / number * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20, help="calls per timing sample")
    ap.add_argument("--json", metavar="PATH", help="also write results as JSON")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the NumPy fallback only", file=sys.stderr)
    results = {}
    for name in backends:
        prev = kernels.use_backend(name)
        try:
            cases = _cases(np.random.default_rng(0))
            for method in ("lora", "qlora", "ia3"):
                cases[f"train_step[{method}]"] = _train_step_case(method)
            for case, fn in cases.items():
                reps = args.repeat if not case.startswith("train_step") else max(1, args.repeat // 4)
                results.setdefault(case, {})[name] = _time(fn, reps)
        finally:
            kernels.use_backend(prev)

    print(f"{'case (ms per call)':28s}" + "".join(f"{b:>12s}" for b in backends) + "   speedup")
    for case, row in results.items():
        cells = "".join(f"{row[b]:12.3f}" for b in backends)
        sp = f"{row['python'] / row['compiled']:8.2f}x" if "compiled" in row else ""
        print(f"{case:28s}{cells}  {sp}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
