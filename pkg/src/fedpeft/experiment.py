"""Pipeline glue shared by the command-line subcommands.

Each stage takes an :class:`~fedpeft.config.ExperimentConfig` and derives
all randomness from its seed, so a report's embedded config replays the run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from . import datasets as ds
from . import partition as pt
from .backbone import Backbone, training_loss
from .federate import (
    comm_cost_per_round,
    make_node,
    memory_footprint,
    run_centralized,
    run_federated,
    run_single_institution,
)
from .numkit import Rng, make_optimizer, optimizer_step, zero_grads
from .numkit import rng as rngmod
from .peft import attach, trainable_bytes

log = logging.getLogger(__name__)

PEFT_METHODS = ("lora", "qlora", "ia3")
EFFICIENCY_FIELDS = ("peft", "trainable_bytes", "comm_cost_gb", "memory_gb", "peak_bytes")


@dataclass
class Prepared:
    """Records, task and split indices for one configured dataset."""
    records: list
    task: ds.TaskDef
    instances: list
    train: list
    validation: list
    test: list

    def select(self, idx):
        return [self.instances[i] for i in idx]


def _default_task(cfg, records, sentiment):
    t = cfg["task"]
    if cfg["data"]["source"] == "synthetic":
        base = ds.synth_taskdef(cfg["data"]["synthetic"]["k"])
    elif sentiment:
        base = ds.TaskDef("sentiment", ("A", "B", "C"), ds.SENTIMENT_TEMPLATE)
    else:
        k = len(records[0]["options"]) if records else 4
        base = ds.TaskDef("mcqa", tuple(ds.LETTERS[:k]), ds.MCQA_TEMPLATE)
    return ds.TaskDef(t["name"] or base.name, tuple(t["answers"] or base.answers),
                      t["template"] or base.template)


def _read_source(path):
    records = ds.load_jsonl(path)
    sentiment = bool(records) and "score" in records[0]
    if sentiment:
        records = ds.sentiment_to_mcqa(records)
    return ds.filter_valid_mcqa(records), sentiment


def prepare_data(cfg):
    d, seed = cfg["data"], cfg.seed
    if d["source"] == "synthetic":
        s = d["synthetic"]
        records = ds.synth_task(k=s["k"], n=s["n"], noise=s["noise"], rng=Rng(seed, rngmod.SYNTH))
        sentiment = False
    else:
        records, sentiment = _read_source(d["source"])
    test_records = []
    if d["test_source"]:
        test_records, _ = _read_source(d["test_source"])
    test_fraction = 0.0 if d["test_source"] else d["test_fraction"]
    splits = ds.make_splits(len(records), Rng(seed, rngmod.SPLIT), d["val_fraction"], test_fraction)
    task = _default_task(cfg, records, sentiment)
    everything = records + test_records
    instances = ds.to_instances(everything, task, min(d["max_len"], cfg["backbone"]["max_len"]))
    test = splits.test if not test_records else list(range(len(records), len(everything)))
    return Prepared(everything, task, instances, splits.train, splits.validation, test)


def make_plan(cfg, prep):
    p = cfg["partition"]
    labels = ds.labels_of([prep.records[i] for i in prep.train])
    rng = Rng(cfg.seed, rngmod.PARTITION)
    if p["nodes"] == 1:  # one site holds everything; nothing to skew
        classes = sorted(set(labels.tolist()))
        hist = [[int((labels == c).sum()) for c in classes]]
        return pt.PartitionPlan([sorted(prep.train)], hist, float(pt.resolve_alpha(p["alpha"])),
                                0.0, cfg.seed, classes, p["aggregate"])
    if p["target_hd"] is not None:
        _, plan = pt.calibrate_alpha(labels, p["nodes"], p["target_hd"], rng=rng,
                                     indices=prep.train, aggregate=p["aggregate"])
        return plan
    return pt.partition_dirichlet(labels, p["nodes"], pt.resolve_alpha(p["alpha"]), rng,
                                  indices=prep.train, aggregate=p["aggregate"])


def build_model(cfg, method=None):
    backbone = Backbone.init(cfg.backbone_config(), cfg.seed)
    return attach(backbone, cfg.adapter_spec(method), cfg.seed)


def run_scenarios(cfg, prep, plan, model, scenarios):
    """Named scenario reports, in the order requested."""
    fed = cfg.fed_config()
    train, val, test = prep.select(prep.train), prep.select(prep.validation), prep.select(prep.test)
    nodes = [prep.select(n) for n in plan.nodes] if plan is not None else None
    out = {}
    for s in scenarios:
        log.info("running %s (%s)", s, model.spec.method)
        if s == "centralized":
            out[s] = run_centralized(model, train, fed, test, val)
        elif s == "single":
            out[s] = run_single_institution(model, nodes, fed, test, val)
        else:
            out[s] = run_federated(model, nodes, fed, test, val)
    return out


def report_dict(report, cfg):
    d = report.to_dict()
    d["config"] = cfg.to_dict()
    d["seed"] = cfg.seed
    return d


def efficiency_probe(cfg, prep, methods=PEFT_METHODS):
    """Trainable bytes, round cost and instrumented peak for each PEFT method.

    Runs ``run.probe_steps`` optimizer steps on the first training batches
    of a fresh node per method, under the same config otherwise.
    """
    fed = cfg.fed_config()
    k = cfg["partition"]["nodes"]
    steps = cfg["run"]["probe_steps"]
    batch = prep.select(prep.train[:fed.batch_size])
    rows = []
    for method in methods:
        model = build_model(cfg, method)
        node = make_node(model, batch, 0)
        gen = Rng(cfg.seed, rngmod.PROBE).generator()
        with node.tracker:
            opt = make_optimizer(fed.optimizer, fed.lr, weight_decay=fed.weight_decay,
                                 warmup_steps=fed.warmup_steps)
            params = node.model.trainable()
            for _ in range(steps):
                zero_grads(params)
                training_loss(node.model, batch, train=True, gen=gen).backward()
                optimizer_step(opt, params)
            zero_grads(params)
        b = trainable_bytes(model)
        rows.append({"peft": method, "trainable_bytes": b, "comm_cost_gb": comm_cost_per_round(k, b),
                     "memory_gb": memory_footprint([node.tracker.peak]), "peak_bytes": node.tracker.peak})
    return rows
