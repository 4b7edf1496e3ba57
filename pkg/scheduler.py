"""
Task-model execution engine.

A TaskGraph holds write-once package slots and task nodes; run() executes
the nodes on a fixed pool of worker threads. A node becomes runnable when
every input slot is ready; among runnable nodes the lowest priority value
goes first, ties broken by insertion order.
"""
import heapq
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import networkx as nx
import pandas as pd

logger = logging.getLogger(__name__)

PENDING = "pending"
READY = "ready"

TRACE_COLUMNS = [
    "task_kind", "i", "j", "k", "worker", "start_ns", "end_ns", "live_bytes",
    "r", "r_prime", "step", "node",
]


class PlanError(ValueError):
    """Single-writer violation or cyclic plan."""


class TaskFailure(RuntimeError):
    def __init__(self, node: "TaskNode", original: BaseException):
        self.node = node
        self.original = original
        super().__init__(f"Task {node.kind}{node.coords} failed: {type(original).__name__}: {original}")


def payload_nbytes(obj) -> int:
    if obj is None:
        return 0
    if isinstance(obj, (tuple, list)):
        return sum(payload_nbytes(x) for x in obj)
    return int(getattr(obj, "nbytes", 0))


@dataclass
class PackageSlot:
    id: tuple
    state: str = PENDING
    payload: Any = None
    consumers_remaining: int = 0
    producer: Optional[int] = None
    source: bool = False
    pinned: bool = False
    nbytes: int = 0


@dataclass
class TaskNode:
    kind: str
    coords: tuple
    inputs: list
    outputs: list
    fn: Callable
    priority: int = 0
    step: int = 1
    cost: float = 0
    # Optional callable(outputs) -> dict with 'r' and 'r_prime' for the trace.
    stats: Optional[Callable] = None
    id: int = -1

    def trace_coords(self) -> tuple:
        padded = tuple(self.coords) + (-1, -1, -1)
        return padded[:3]


class TaskGraph:
    def __init__(self):
        self.slots = {}
        self.nodes = []

    def _slot(self, slot_id) -> PackageSlot:
        slot = self.slots.get(slot_id)
        if slot is None:
            slot = PackageSlot(slot_id)
            self.slots[slot_id] = slot
        return slot

    def add_source(self, slot_id, payload, pinned: bool = False):
        slot = self._slot(slot_id)
        if slot.producer is not None or slot.source:
            raise PlanError(f"Slot {slot_id} already has a writer")
        slot.source = True
        slot.state = READY
        slot.payload = payload
        slot.nbytes = payload_nbytes(payload)
        slot.pinned = pinned

    def plan_add(self, node: TaskNode) -> int:
        for slot_id in node.outputs:
            slot = self.slots.get(slot_id)
            if slot is not None and (slot.producer is not None or slot.source):
                raise PlanError(f"Slot {slot_id} is written by more than one task ({node.kind}{node.coords})")
        node.id = len(self.nodes)
        self.nodes.append(node)
        for slot_id in node.outputs:
            self._slot(slot_id).producer = node.id
        for slot_id in node.inputs:
            self._slot(slot_id).consumers_remaining += 1
        return node.id

    def pin(self, slot_id):
        self._slot(slot_id).pinned = True

    def payload(self, slot_id):
        return self.slots[slot_id].payload

    def count(self, kind: str = None) -> int:
        if kind is None:
            return len(self.nodes)
        return sum(1 for n in self.nodes if n.kind == kind)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for node in self.nodes:
            g.add_node(node.id, kind=node.kind, coords=node.coords, step=node.step, weight=node.cost)
        for node in self.nodes:
            for slot_id in node.inputs:
                producer = self.slots[slot_id].producer
                if producer is not None:
                    g.add_edge(producer, node.id, slot=slot_id)
        return g

    def check_acyclic(self):
        g = self.to_networkx()
        if not nx.is_directed_acyclic_graph(g):
            cycle = nx.find_cycle(g)
            raise PlanError(f"Plan contains a dependency cycle through nodes {[u for u, _ in cycle]}")


@dataclass
class RunReport:
    tasks_run: int
    workers: int
    wall_ns: int
    peak_live_bytes: int
    trace: pd.DataFrame = field(repr=False)

    @property
    def wall_seconds(self) -> float:
        return self.wall_ns / 1e9


class _Executor:
    def __init__(self, graph: TaskGraph, workers: int, retain: bool):
        self.graph = graph
        self.workers = workers
        self.retain = retain
        self.cond = threading.Condition()
        self.heap = []
        self.pending = {}
        self.consumers = {}
        self.completed = 0
        self.failure = None
        self.records = []
        self.live_bytes = 0
        self.peak = 0
        self.t0 = 0

    def prepare(self):
        for slot in self.graph.slots.values():
            if slot.producer is None and not slot.source:
                # Absent package: no writer, born ready without payload.
                slot.state = READY
            if slot.state == READY:
                self.live_bytes += slot.nbytes
        self.peak = self.live_bytes
        for node in self.graph.nodes:
            waiting = 0
            for slot_id in node.inputs:
                self.consumers.setdefault(slot_id, []).append(node.id)
                if self.graph.slots[slot_id].state != READY:
                    waiting += 1
            self.pending[node.id] = waiting
            if waiting == 0:
                heapq.heappush(self.heap, (node.priority, node.id))

    def _release(self, slot: PackageSlot):
        if slot.pinned or self.retain or slot.payload is None:
            return
        self.live_bytes -= slot.nbytes
        slot.payload = None

    def _finish(self, node: TaskNode, results: tuple):
        for slot_id, value in zip(node.outputs, results):
            slot = self.graph.slots[slot_id]
            slot.payload = value
            slot.nbytes = payload_nbytes(value)
            slot.state = READY
            self.live_bytes += slot.nbytes
            for consumer in self.consumers.get(slot_id, ()):
                self.pending[consumer] -= 1
                if self.pending[consumer] == 0:
                    target = self.graph.nodes[consumer]
                    heapq.heappush(self.heap, (target.priority, target.id))
        self.peak = max(self.peak, self.live_bytes)
        for slot_id in node.inputs:
            slot = self.graph.slots[slot_id]
            slot.consumers_remaining -= 1
            if slot.consumers_remaining == 0:
                self._release(slot)
        for slot_id in node.outputs:
            slot = self.graph.slots[slot_id]
            if slot.consumers_remaining == 0:
                self._release(slot)
        self.completed += 1

    def work(self, worker: int):
        nodes = self.graph.nodes
        while True:
            with self.cond:
                while not self.heap and self.failure is None and self.completed < len(nodes):
                    self.cond.wait()
                if self.failure is not None or not self.heap:
                    return
                _, node_id = heapq.heappop(self.heap)
            node = nodes[node_id]
            args = [self.graph.slots[s].payload for s in node.inputs]
            start = time.perf_counter_ns()
            logger.debug(f"Worker {worker} starts {node.kind}{node.coords}")
            try:
                result = node.fn(*args)
                results = (result,) if len(node.outputs) == 1 else tuple(result)
                stats = node.stats(results) if node.stats else {}
            except Exception as e:
                failure = TaskFailure(node, e)
                logger.error(str(failure))
                with self.cond:
                    if self.failure is None:
                        self.failure = failure
                    self.cond.notify_all()
                return
            end = time.perf_counter_ns()
            with self.cond:
                self._finish(node, results)
                i, j, k = node.trace_coords()
                self.records.append({
                    "task_kind": node.kind, "i": i, "j": j, "k": k, "worker": worker,
                    "start_ns": start - self.t0, "end_ns": end - self.t0,
                    "live_bytes": self.live_bytes,
                    "r": stats.get("r", -1), "r_prime": stats.get("r_prime", -1),
                    "step": node.step, "node": node.id,
                })
                self.cond.notify_all()


def run(graph: TaskGraph, workers: int = 1, trace_sink=None, retain: bool = False) -> RunReport:
    """
    Execute every node of `graph` exactly once on `workers` threads.

    Payloads of unpinned slots are dropped once their last consumer has run
    unless `retain` is set. Raises TaskFailure on the first failing task.
    """
    if workers < 1:
        raise ValueError(f"Need at least one worker, got {workers}")
    graph.check_acyclic()
    ex = _Executor(graph, workers, retain)
    ex.prepare()
    logger.info(f"Running {len(graph.nodes)} tasks on {workers} worker(s)")

    ex.t0 = time.perf_counter_ns()
    threads = [threading.Thread(target=ex.work, args=(w,), name=f"worker-{w}", daemon=True)
               for w in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter_ns() - ex.t0

    if ex.failure is not None:
        raise ex.failure

    trace = pd.DataFrame(ex.records, columns=TRACE_COLUMNS)
    if trace_sink is not None:
        trace.to_csv(trace_sink, index=False)
        logger.info(f"Trace with {len(trace)} records written to {trace_sink}")
    logger.info(f"Completed {ex.completed} tasks in {wall / 1e9:.3f}s, peak live bytes {ex.peak}")
    return RunReport(ex.completed, workers, wall, ex.peak, trace)
