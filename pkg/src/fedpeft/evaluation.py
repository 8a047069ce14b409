"""Exact-match accuracy over candidate indices and scenario comparison tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import predict_batch

SCENARIOS = ("single", "centralized", "federated")
TABLE_FIELDS = ("model", "peft", "single", "centralized", "federated",
                "fed_minus_central", "fed_minus_single", "trainable_bytes",
                "comm_cost_gb", "memory_gb")


class EvalError(ValueError):
    pass


@dataclass
class EvalResult:
    n: int
    correct: int
    accuracy: float
    confusion: list = field(default_factory=list)  # confusion[gold][pred]

    def to_dict(self):
        return asdict(self)


def fingerprint(instances):
    """Stable digest of an evaluation set (prompts, candidates and golds)."""
    h = hashlib.sha256()
    for inst in instances:
        h.update(repr((inst.prompt, inst.candidates, inst.gold)).encode())
    return h.hexdigest()[:16]


def evaluate(model, instances, chunk=256):
    if not instances:
        raise EvalError("cannot evaluate on an empty instance list")
    preds = predict_batch(model, instances, chunk)
    k = max(len(inst.candidates) for inst in instances)
    conf = np.zeros((k, k), dtype=np.int64)
    for inst, p in zip(instances, preds):
        conf[inst.gold, p] += 1
    correct = int(np.trace(conf))
    return EvalResult(len(instances), correct, correct / len(instances), conf.tolist())


def compare_scenarios(reports, model="desk", peft=None):
    """One comparison row from the three scenario reports.

    ``reports`` maps scenario names (``single``, ``centralized``,
    ``federated``) to :class:`~fedpeft.federate.ScenarioReport` objects or
    plain dicts with the same keys.
    """
    def get(r, key, default=None):
        return r.get(key, default) if isinstance(r, dict) else getattr(r, key, default)

    missing = [s for s in SCENARIOS if s not in reports]
    if missing:
        raise EvalError(f"missing scenario report(s): {missing}")
    prints = {get(reports[s], "eval_fingerprint") for s in SCENARIOS}
    if len(prints) > 1:
        raise EvalError("scenario reports were evaluated on different evaluation sets")
    acc = {s: float(get(reports[s], "accuracy")) for s in SCENARIOS}
    fed = reports["federated"]
    return {
        "model": model,
        "peft": peft or get(fed, "peft", ""),
        **acc,
        "fed_minus_central": acc["federated"] - acc["centralized"],
        "fed_minus_single": acc["federated"] - acc["single"],
        "trainable_bytes": get(fed, "trainable_bytes", 0),
        "comm_cost_gb": get(fed, "comm_cost_gb", 0.0),
        "memory_gb": get(fed, "memory_gb", 0.0),
    }


def table_csv(rows):
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=TABLE_FIELDS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return out.getvalue()


def table_json(rows):
    return json.dumps(list(rows), indent=1, sort_keys=True) + "\n"


def read_table_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return rows
