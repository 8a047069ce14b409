"""Centralized, single-institution and federated training under one budget.

Every scenario trains in ``rounds`` segments of ``local_epochs`` epochs. In
the federated scenario a segment is one communication round (broadcast,
local update on every node, sample-weighted FedAvg of φ). Centralized and
single-institution runs use the same segmentation, so with optimizer-state
reset at segment boundaries (the default) a one-node federation reproduces
centralized training bit for bit.

Random streams are keyed by ``(seed, node id, global epoch)``: node ``k``
shuffles and draws dropout masks identically in the single-institution and
federated scenarios, and the centralized run uses node id 0.
"""
from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkit as nk
from .backbone import training_loss
from .evaluation import evaluate, fingerprint
from .numkit import rng as rngmod
from .numkit.memory import MemoryTracker
from .peft import extract_phi, load_phi, trainable_bytes

log = logging.getLogger(__name__)

GIB = 1024 ** 3


class FederationError(ValueError):
    pass


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 4
    local_epochs: int = 1
    batch_size: int = 4
    lr: float = 1e-4
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    max_grad_norm: float | None = None
    warmup_steps: int = 0
    seed: int = 42
    reset_optimizer: bool = True
    select_best_val: bool = False
    log_validation: bool = True
    workers: int = 1
    eval_chunk: int = 256

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1:
            raise FederationError("rounds and local_epochs must be >= 1")
        if self.batch_size < 1:
            raise FederationError("batch_size must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise FederationError(f"unknown optimizer {self.optimizer!r}")

    @property
    def total_epochs(self):
        return self.rounds * self.local_epochs

    def to_dict(self):
        return asdict(self)


@dataclass
class NodeState:
    node_id: int
    data: list
    model: object
    tracker: MemoryTracker
    opt: nk.OptimizerState | None = None

    @property
    def n(self):
        return len(self.data)


@dataclass
class ScenarioReport:
    scenario: str
    accuracy: float
    eval: dict
    per_round: list
    comm_cost_gb: float
    memory_gb: float
    trainable_bytes: int
    participants: int
    peft: str = ""
    node_accuracies: list | None = None
    node_peaks: list = field(default_factory=list)
    node_sizes: list = field(default_factory=list)
    eval_fingerprint: str = ""
    runtime_s: float = 0.0
    config: dict = field(default_factory=dict)
    final_phi: dict | None = field(default=None, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("final_phi")
        if d["node_accuracies"] is None:
            d.pop("node_accuracies")
        return d


# ------------------------------------------------------------------ metrics

def comm_cost_per_round(k, b_train):
    """Bidirectional φ traffic of one round in GB: ``2 K B / 1024^3``."""
    if k < 1 or b_train < 0:
        raise FederationError("need K >= 1 participants and B_train >= 0")
    return 2 * k * b_train / GIB


def memory_footprint(peaks):
    """Mean per-node peak bytes in GB."""
    if len(peaks) < 1:
        raise FederationError("need at least one node peak")
    return sum(peaks) / len(peaks) / GIB


def phi_checksum(phi):
    h = hashlib.sha256()
    for k in sorted(phi):
        h.update(k.encode())
        h.update(np.ascontiguousarray(phi[k], dtype="<f4").tobytes())
    return h.hexdigest()[:16]


# ------------------------------------------------------------------ training

def _new_optimizer(cfg):
    return nk.make_optimizer(cfg.optimizer, cfg.lr, weight_decay=cfg.weight_decay,
                             warmup_steps=cfg.warmup_steps)


def _clip(params, max_norm):
    total = np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2))
                        for p in params.values() if p.grad is not None))
    if total > max_norm:
        factor = max_norm / (total + 1e-6)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)


def train_epoch(model, data, cfg, opt, node_id, epoch):
    """One shuffled pass of mini-batch optimization; returns per-step losses."""
    base = nk.Rng(cfg.seed, rngmod.SHUFFLE).child(node_id).child(epoch)
    order = base.generator().permutation(len(data))
    drop_gen = nk.Rng(cfg.seed, rngmod.DROPOUT).child(node_id).child(epoch).generator()
    params = model.trainable()
    losses = []
    for start in range(0, len(data), cfg.batch_size):
        batch = [data[i] for i in order[start:start + cfg.batch_size]]
        nk.zero_grads(params)
        loss = training_loss(model, batch, train=True, gen=drop_gen)
        loss.backward()
        if cfg.max_grad_norm is not None:
            _clip(params, cfg.max_grad_norm)
        nk.optimizer_step(opt, params)
        losses.append(loss.item())
    nk.zero_grads(params)
    return losses


def _train_segment(node, cfg, segment):
    """``local_epochs`` epochs for one round/segment, inside the node's tracker."""
    with node.tracker:
        if node.opt is None or cfg.reset_optimizer:
            node.opt = None  # release old moments before allocating new ones
            node.opt = _new_optimizer(cfg)
        losses = []
        for e in range(cfg.local_epochs):
            losses += train_epoch(node.model, node.data, cfg, node.opt, node.node_id,
                                  segment * cfg.local_epochs + e)
    return losses


def make_node(model, data, node_id):
    """A node with its own φ copy, charged to its own memory tracker."""
    if not data:
        raise FederationError(f"node {node_id} has no data")
    tracker = MemoryTracker(baseline=model.resident_bytes())
    with tracker:
        own = model.with_phi()
    return NodeState(node_id, list(data), own, tracker)


def local_update(node, global_phi, cfg, round_idx=0):
    """Load the broadcast φ, run ``local_epochs`` epochs, return (φ_k, losses)."""
    load_phi(node.model, global_phi)
    losses = _train_segment(node, cfg, round_idx)
    return extract_phi(node.model), losses


def aggregate(phis, sizes, node_ids=None):
    """Sample-weighted average ``sum_k (N_k / sum N) phi_k``.

    Accumulates in float64 in ascending node-id order, so the result does not
    depend on the order the node results arrive in.
    """
    if not phis or len(phis) != len(sizes):
        raise FederationError("need one sample count per φ")
    node_ids = list(range(len(phis))) if node_ids is None else list(node_ids)
    order = sorted(range(len(phis)), key=lambda i: node_ids[i])
    total = float(sum(sizes))
    if not total > 0:
        raise FederationError("total sample count must be positive")
    keys = list(phis[order[0]])
    for i in order:
        if set(phis[i]) != set(keys):
            raise FederationError(f"φ key mismatch at node {node_ids[i]}")
    out = {}
    for key in keys:
        shape = np.shape(phis[order[0]][key])
        acc = np.zeros(shape, dtype=np.float64)
        for i in order:
            arr = np.asarray(phis[i][key])
            if arr.shape != shape:
                raise FederationError(f"shape mismatch for {key} at node {node_ids[i]}")
            acc += (sizes[i] / total) * arr.astype(np.float64)
        out[key] = acc.astype(np.asarray(phis[order[0]][key]).dtype)
    return out


def _map_nodes(fn, nodes, workers):
    if workers > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, nodes))
    return [fn(n) for n in nodes]


def _evaluate(model, instances, cfg):
    return evaluate(model, instances, cfg.eval_chunk)


def _maybe_val(model, val, cfg):
    if val and cfg.log_validation:
        return _evaluate(model, val, cfg).accuracy
    return None


def run_federated(model, node_data, cfg, eval_set, val_set=None):
    """FedAvg over φ with every node participating in every round."""
    t0 = time.perf_counter()
    if not node_data:
        raise FederationError("need at least one node")
    nodes = [make_node(model, d, k) for k, d in enumerate(node_data)]
    sizes = [n.n for n in nodes]
    b_train = trainable_bytes(model)
    global_phi = extract_phi(model)
    model = model.with_phi()  # server copy; the caller's φ stays at its initial value
    rounds, best = [], (-1.0, None)
    for r in range(cfg.rounds):
        results = _map_nodes(lambda n: local_update(n, global_phi, cfg, r), nodes, cfg.workers)
        global_phi = aggregate([p for p, _ in results], sizes, [n.node_id for n in nodes])
        node_losses = [float(np.mean(l)) for _, l in results]
        load_phi(model, global_phi)
        val = _maybe_val(model, val_set, cfg)
        if val is not None and val > best[0]:
            best = (val, global_phi)
        rounds.append({"round": r + 1, "bytes_up": len(nodes) * b_train,
                       "bytes_down": len(nodes) * b_train,
                       "mean_loss": float(np.average(node_losses, weights=sizes)),
                       "node_losses": node_losses, "val_accuracy": val,
                       "phi_checksum": phi_checksum(global_phi)})
        log.info("federated round %d: loss %.4f val %s", r + 1, rounds[-1]["mean_loss"], val)
    if cfg.select_best_val and best[1] is not None:
        global_phi = best[1]
    load_phi(model, global_phi)
    res = _evaluate(model, eval_set, cfg)
    peaks = [n.tracker.peak for n in nodes]
    return ScenarioReport(
        scenario="federated", accuracy=res.accuracy, eval=res.to_dict(), per_round=rounds,
        comm_cost_gb=comm_cost_per_round(len(nodes), b_train), memory_gb=memory_footprint(peaks),
        trainable_bytes=b_train, participants=len(nodes), peft=model.spec.method,
        node_peaks=peaks, node_sizes=sizes, eval_fingerprint=fingerprint(eval_set),
        runtime_s=time.perf_counter() - t0, final_phi=global_phi)


def _train_alone(model, data, cfg, node_id, val_set):
    """Segmented training of one private model; returns (node, round logs, φ)."""
    node = make_node(model, data, node_id)
    logs, best = [], (-1.0, None)
    for r in range(cfg.rounds):
        losses = _train_segment(node, cfg, r)
        val = _maybe_val(node.model, val_set, cfg)
        phi = extract_phi(node.model)
        if val is not None and val > best[0]:
            best = (val, phi)
        logs.append({"round": r + 1, "bytes_up": 0, "bytes_down": 0,
                     "mean_loss": float(np.mean(losses)), "val_accuracy": val,
                     "phi_checksum": phi_checksum(phi)})
    final = best[1] if cfg.select_best_val and best[1] is not None else extract_phi(node.model)
    load_phi(node.model, final)
    return node, logs, final


def run_centralized(model, train, cfg, eval_set, val_set=None):
    """All training data pooled at one site for ``rounds * local_epochs`` epochs."""
    t0 = time.perf_counter()
    if not train:
        raise FederationError("empty training split")
    node, logs, final = _train_alone(model, train, cfg, 0, val_set)
    res = _evaluate(node.model, eval_set, cfg)
    return ScenarioReport(
        scenario="centralized", accuracy=res.accuracy, eval=res.to_dict(), per_round=logs,
        comm_cost_gb=0.0, memory_gb=memory_footprint([node.tracker.peak]),
        trainable_bytes=trainable_bytes(model), participants=1, peft=model.spec.method,
        node_peaks=[node.tracker.peak], node_sizes=[len(train)],
        eval_fingerprint=fingerprint(eval_set), runtime_s=time.perf_counter() - t0,
        final_phi=final)


def run_single_institution(model, node_data, cfg, eval_set, val_set=None):
    """Each node trains alone; the headline accuracy is the mean over nodes."""
    t0 = time.perf_counter()
    if not node_data:
        raise FederationError("need at least one node")

    def one(k):
        node, logs, final = _train_alone(model, node_data[k], cfg, k, val_set)
        return node, logs, _evaluate(node.model, eval_set, cfg)

    outs = _map_nodes(one, list(range(len(node_data))), cfg.workers)
    accs = [res.accuracy for _, _, res in outs]
    peaks = [node.tracker.peak for node, _, _ in outs]
    per_round = []
    for r in range(cfg.rounds):
        vals = [logs[r]["val_accuracy"] for _, logs, _ in outs]
        per_round.append({"round": r + 1, "bytes_up": 0, "bytes_down": 0,
                          "mean_loss": float(np.mean([logs[r]["mean_loss"] for _, logs, _ in outs])),
                          "node_losses": [logs[r]["mean_loss"] for _, logs, _ in outs],
                          "val_accuracy": None if vals[0] is None else float(np.mean(vals))})
    conf = np.sum([res.confusion for _, _, res in outs], axis=0).tolist()
    ev = {"n": outs[0][2].n, "correct": None, "accuracy": float(np.mean(accs)),
          "confusion": conf, "node_correct": [res.correct for _, _, res in outs]}
    return ScenarioReport(
        scenario="single", accuracy=float(np.mean(accs)), eval=ev, per_round=per_round,
        comm_cost_gb=0.0, memory_gb=memory_footprint(peaks), trainable_bytes=trainable_bytes(model),
        participants=len(node_data), peft=model.spec.method, node_accuracies=accs,
        node_peaks=peaks, node_sizes=[len(d) for d in node_data],
        eval_fingerprint=fingerprint(eval_set), runtime_s=time.perf_counter() - t0)
