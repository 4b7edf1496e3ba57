"""
Cost model and critical-path analysis of the blocked elimination's task graph.

Costs are in units of field multiply-adds: an (x by y).(y by z) product
costs x*y*z. Two graphs can be analysed:

  model_graph  the layered model of the block grid in which every task of
               anti-diagonal layer i+j waits for the previous layer.
               Its critical path reproduces the closed-form bounds.
  plan_graph   the real task DAG of a ChiefPlan, costed by the model (with
               ranks taken from a run trace) or by measured durations.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction

import networkx as nx
import pandas as pd

logger = logging.getLogger(__name__)

MODES = ("worst_case", "well_conditioned", "measured")
ZERO_COST = ("Extend", "RowLengthen", "PreClearUp", "Copy")
PARTS = ("step1", "step3", "full")


@dataclass(frozen=True)
class CostModel:
    mode: str
    alpha: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown cost mode '{self.mode}', expected one of {MODES}")
        if self.alpha < 1:
            raise ValueError(f"Block dimension must be >= 1, got {self.alpha}")


def _exact(x):
    x = Fraction(x)
    return x.numerator if x.denominator == 1 else x


def task_cost(model: CostModel, kind: str, r: int = 0, r_prime: int = 0, i: int = 1, j: int = 1):
    alpha = model.alpha
    if r < 0 or r_prime < 0 or r + r_prime > alpha:
        raise ValueError(f"Ranks r={r}, r'={r_prime} do not fit a block of size {alpha}")
    cube = alpha ** 3
    if kind in ZERO_COST:
        return 0
    if kind == "ClearUp":
        return cube
    if kind not in ("ClearDown", "UpdateRow", "UpdateRowTrafo"):
        raise ValueError(f"Unknown task kind '{kind}'")

    if model.mode == "worst_case":
        return cube if kind == "ClearDown" else _exact(Fraction(5, 4) * cube)
    if model.mode == "well_conditioned":
        if kind == "ClearDown":
            return cube if i == j else 0
        return cube
    if kind == "ClearDown":
        if i == 1:
            return cube
        return (alpha * r * (alpha - r) + alpha * (alpha - r) * r_prime
                + r * r_prime * (alpha - r - r_prime))
    return alpha * alpha * (r + r_prime) + alpha * r * r_prime


def critical_path(g: nx.DiGraph, weight: str = "weight"):
    """Maximum total node weight over all paths of an acyclic graph."""
    best = {}
    try:
        order = list(nx.topological_sort(g))
    except nx.NetworkXUnfeasible as e:
        raise ValueError("Graph has a cycle; critical path undefined") from e
    for node in order:
        preds = [best[p] for p in g.predecessors(node)]
        best[node] = g.nodes[node].get(weight, 0) + (max(preds) if preds else 0)
    return _exact(max(best.values())) if best else 0


def avg_concurrency(total_cost, path):
    if not path:
        raise ValueError("Critical path is zero; concurrency undefined")
    return _exact(Fraction(total_cost) / Fraction(path))


def total_cost(a: int, b: int, alpha: int) -> int:
    return a * b * min(a, b) * alpha ** 3


def _step1_layers(g: nx.DiGraph, a: int, b: int, model: CostModel, with_transform: bool):
    """Add the Step-1 layers; returns the final sync node."""
    prev = None
    for layer in range(2, a + b + 1):
        cd_sync, up_sync = ("sync-cd", layer), ("sync-up", layer)
        g.add_node(cd_sync, weight=0)
        g.add_node(up_sync, weight=0)
        g.add_edge(cd_sync, up_sync)
        for i in range(max(1, layer - b), min(a, layer - 1) + 1):
            j = layer - i
            cd = ("ClearDown", i, j)
            g.add_node(cd, weight=task_cost(model, "ClearDown", i=i, j=j))
            g.add_edge(cd, cd_sync)
            if prev is not None:
                g.add_edge(prev, cd)
            for k in range(j + 1, b + 1):
                node = ("UpdateRow", i, j, k)
                g.add_node(node, weight=task_cost(model, "UpdateRow", i=i, j=j))
                g.add_edge(cd_sync, node)
                g.add_edge(node, up_sync)
            if with_transform:
                for h in range(1, i + 1):
                    node = ("UpdateRowTrafo", i, j, h)
                    g.add_node(node, weight=task_cost(model, "UpdateRowTrafo", i=i, j=j))
                    g.add_edge(cd_sync, node)
                    g.add_edge(node, up_sync)
        prev = up_sync
    return prev


def _step3_layers(g: nx.DiGraph, a: int, b: int, model: CostModel, start, with_transform: bool):
    """
    Clear-up of R by block column k = b..2, one layer per k, alongside the
    transformation clear-up charged as a chain of a multiplier updates.
    """
    cost = task_cost(model, "ClearUp")
    prev = start
    for k in range(b, 1, -1):
        sync = ("sync-up3", k)
        g.add_node(sync, weight=0)
        for j in range(1, k):
            for l in range(k, b + 1):
                node = ("ClearUp", j, l, k)
                g.add_node(node, weight=cost)
                if prev is not None:
                    g.add_edge(prev, node)
                g.add_edge(node, sync)
        prev = sync
    chain = start
    for t in range(1, a + 1 if with_transform else 1):
        node = ("ClearUpM", t)
        g.add_node(node, weight=cost)
        if chain is not None:
            g.add_edge(chain, node)
        chain = node


def model_graph(a: int, b: int, model: CostModel, part: str = "full") -> nx.DiGraph:
    """
    Layered model DAG of an a x b block grid.

    worst_case graphs include the transformation tasks and, for "full",
    Step 3 after Step 1. well_conditioned graphs leave the transformation
    out and their "full" graph is the Step-1 elimination of C and B.
    """
    if part not in PARTS:
        raise ValueError(f"Unknown part '{part}', expected one of {PARTS}")
    if model.mode == "measured":
        raise ValueError("The layered model needs worst_case or well_conditioned costs")
    if a < 1 or b < 1:
        raise ValueError(f"Block grid must be at least 1x1, got {a}x{b}")
    g = nx.DiGraph()
    worst = model.mode == "worst_case"
    end = None
    if part in ("step1", "full"):
        end = _step1_layers(g, a, b, model, with_transform=worst)
    if part == "step3" or (part == "full" and worst):
        _step3_layers(g, a, b, model, end, with_transform=worst)
    return g


def plan_graph(plan, model: CostModel = None, trace: pd.DataFrame = None) -> nx.DiGraph:
    """
    The real task DAG of `plan`. With a model, node weights are model costs
    (ranks for the measured mode come from the trace's ClearDown records);
    with only a trace, weights are measured durations in nanoseconds.
    """
    g = plan.to_networkx()
    if model is None:
        if trace is None:
            raise ValueError("Need a cost model or a trace")
        durations = dict(zip(trace["node"], trace["end_ns"] - trace["start_ns"]))
        for node in g.nodes:
            g.nodes[node]["weight"] = int(durations.get(node, 0))
        return g

    ranks = {}
    if trace is not None:
        cd = trace[trace["task_kind"] == "ClearDown"]
        ranks = {(int(i), int(j)): (int(r), int(rp)) for i, j, r, rp in zip(cd["i"], cd["j"], cd["r"], cd["r_prime"])}
    elif model.mode == "measured":
        raise ValueError("Measured costs need the ranks recorded in a trace")

    for node in plan.nodes:
        i, j = (node.coords + (1, 1))[:2]
        if node.kind in ("ClearDown", "UpdateRow", "UpdateRowTrafo"):
            r, r_prime = ranks.get((i, j), (0, 0))
        else:
            r, r_prime = 0, 0
        cost = task_cost(model, node.kind, r, r_prime, i, j)
        node.cost = cost
        g.nodes[node.id]["weight"] = cost
    return g


def report(a: int, b: int, alpha: int, mode: str) -> pd.DataFrame:
    model = CostModel(mode, alpha)
    step1 = critical_path(model_graph(a, b, model, "step1"))
    step3 = critical_path(model_graph(a, b, model, "step3"))
    path = critical_path(model_graph(a, b, model, "full"))
    total = total_cost(a, b, alpha)
    ratio = avg_concurrency(total, path)
    logger.info(f"Model {mode} a={a} b={b} alpha={alpha}: critical path {path}, concurrency {float(ratio):.3f}")
    return pd.DataFrame([{
        "a": a, "b": b, "alpha": alpha, "mode": mode,
        "total_cost": total, "step1_path": step1, "step3_path": step3,
        "critical_path": path, "avg_concurrency": ratio,
        "avg_concurrency_float": float(ratio),
    }])
