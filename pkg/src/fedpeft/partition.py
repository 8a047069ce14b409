"""Dirichlet label-skew partitioning and Hellinger heterogeneity.

For every class, node proportions are drawn from ``Dirichlet(alpha * 1_M)``
(normalized ``Gamma(alpha, 1)`` draws) and turned into integer counts by
largest-remainder rounding, so per-class totals are conserved exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

# Concentrations chosen for the four benchmarks (FPB is the more skewed one).
ALPHA_PRESETS = {"fpb": 0.7, "fiqa-sa": 1.0, "medqa": 1.0, "medmcqa": 1.0}
DEFAULT_GRID = (100.0, 10.0, 5.0, 2.0, 1.0, 0.7, 0.5, 0.3, 0.1)
MAX_ATTEMPTS = 8
AGGREGATES = ("node_vs_global", "pairwise")


class PartitionError(ValueError):
    pass


def hellinger(p, q, tol=1e-9):
    """``(1/sqrt 2) * ||sqrt p - sqrt q||_2`` for two categorical distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise PartitionError("distributions must be 1-D and of equal length")
    for name, d in (("p", p), ("q", q)):
        if (d < 0).any() or abs(d.sum() - 1.0) > tol:
            raise PartitionError(f"{name} is not a normalized distribution")
    h = math.sqrt(float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)) / 2.0)
    return min(max(h, 0.0), 1.0)


def _distribution(counts):
    counts = np.asarray(counts, dtype=np.float64)
    return counts / counts.sum()


def heterogeneity(histograms, aggregate="node_vs_global"):
    """Mean Hellinger distance of node label distributions.

    ``node_vs_global`` compares each node to the pooled distribution;
    ``pairwise`` averages over all unordered node pairs.
    """
    hist = np.asarray(histograms, dtype=np.float64)
    dists = [_distribution(row) for row in hist]
    if aggregate == "node_vs_global":
        glob = _distribution(hist.sum(axis=0))
        return float(np.mean([hellinger(d, glob) for d in dists]))
    if aggregate == "pairwise":
        m = len(dists)
        vals = [hellinger(dists[i], dists[j]) for i in range(m) for j in range(i + 1, m)]
        return float(np.mean(vals)) if vals else 0.0
    raise PartitionError(f"unknown aggregate {aggregate!r}; choose from {AGGREGATES}")


@dataclass
class PartitionPlan:
    nodes: list
    histograms: list
    alpha: float
    achieved_hd: float
    seed: int
    classes: list = field(default_factory=list)
    aggregate: str = "node_vs_global"

    @property
    def m(self):
        return len(self.nodes)

    def to_dict(self):
        return {"alpha": self.alpha, "seed": self.seed, "achieved_hd": self.achieved_hd,
                "aggregate": self.aggregate, "classes": list(self.classes),
                "nodes": [list(map(int, n)) for n in self.nodes],
                "histograms": [list(map(int, h)) for h in self.histograms]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(nodes=[list(n) for n in d["nodes"]], histograms=[list(h) for h in d["histograms"]],
                   alpha=float(d["alpha"]), achieved_hd=float(d["achieved_hd"]), seed=int(d["seed"]),
                   classes=list(d.get("classes", [])), aggregate=d.get("aggregate", "node_vs_global"))


def largest_remainder(proportions, total):
    """Integer counts summing to ``total``; leftover units go to the largest fractions."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = int(total - counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _dirichlet(gen, alpha, m):
    g = gen.standard_gamma(alpha, size=m)
    s = g.sum()
    if not s > 0:  # every draw underflowed at tiny alpha: all mass on one node
        g = np.zeros(m)
        g[int(gen.integers(m))] = 1.0
        s = 1.0
    return g / s


def partition_dirichlet(labels, m, alpha, rng, indices=None, aggregate="node_vs_global",
                        max_attempts=MAX_ATTEMPTS):
    """Split instances across ``m`` nodes with Dirichlet label skew.

    ``labels[i]`` is the class of instance ``indices[i]`` (default ``i``).
    Redraws from the next sub-stream while any node is empty.
    """
    labels = np.asarray(labels, dtype=np.int64)
    indices = np.arange(len(labels)) if indices is None else np.asarray(indices, dtype=np.int64)
    if m < 2:
        raise PartitionError("need at least two nodes")
    if not alpha > 0:
        raise PartitionError("alpha must be positive")
    if len(labels) == 0:
        raise PartitionError("no instances to partition")
    if aggregate not in AGGREGATES:
        raise PartitionError(f"unknown aggregate {aggregate!r}")
    classes = sorted(int(c) for c in np.unique(labels))
    if classes[0] < 0:
        raise PartitionError("class ids must be non-negative")
    for attempt in range(max_attempts):
        gen = rng.child(attempt).generator()
        buckets = [[] for _ in range(m)]
        hist = np.zeros((m, len(classes)), dtype=np.int64)
        for ci, c in enumerate(classes):
            members = indices[labels == c]
            members = members[gen.permutation(len(members))]
            counts = largest_remainder(_dirichlet(gen, alpha, m), len(members))
            start = 0
            for node, cnt in enumerate(counts):
                buckets[node].extend(int(i) for i in members[start:start + cnt])
                hist[node, ci] = cnt
                start += cnt
        if all(buckets):
            hd = heterogeneity(hist, aggregate)
            return PartitionPlan([sorted(b) for b in buckets], hist.tolist(), float(alpha), hd,
                                 int(rng.seed), classes, aggregate)
    raise PartitionError(f"an empty node remained after {max_attempts} draws "
                         f"(alpha={alpha}, m={m}, n={len(labels)})")


def calibrate_alpha(labels, m, target=0.5, grid=DEFAULT_GRID, rng=None, **kw):
    """Largest grid alpha whose partition reaches ``target`` heterogeneity."""
    if not grid:
        raise PartitionError("empty alpha grid")
    if target > 0 and len(np.unique(np.asarray(labels))) < 2:
        raise PartitionError(f"no alpha reaches heterogeneity {target}: labels hold a single class")
    tried = []
    for alpha in sorted(grid, reverse=True):
        try:
            plan = partition_dirichlet(labels, m, alpha, rng, **kw)
        except PartitionError as exc:
            tried.append((alpha, str(exc)))
            continue
        tried.append((alpha, round(plan.achieved_hd, 4)))
        if plan.achieved_hd >= target:
            return alpha, plan
    raise PartitionError(f"no alpha reaches heterogeneity {target}; tried {tried}")


def resolve_alpha(value):
    """A number, or a preset name such as ``"fpb"``."""
    if isinstance(value, str):
        key = value.lower()
        if key in ALPHA_PRESETS:
            return ALPHA_PRESETS[key]
        try:
            return float(value)
        except ValueError:
            raise PartitionError(f"unknown alpha preset {value!r}; have {sorted(ALPHA_PRESETS)}") from None
    return float(value)


def plan_report(plan):
    """Per-node class proportions as CSV text (one row per node)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    classes = plan.classes or list(range(len(plan.histograms[0])))
    w.writerow(["node", "n", *[f"class_{c}" for c in classes]])
    for node, row in enumerate(plan.histograms):
        total = sum(row)
        w.writerow([node, total, *[repr(v / total) for v in row]])
    return out.getvalue()


def report_rows(plan):
    """The proportions behind :func:`plan_report` as floats."""
    return [[v / sum(row) for v in row] for row in plan.histograms]
