"""
Distributed evaluation of the explicit filter's two decisions: average
consensus for ellipsoid membership and min-consensus flooding for the
backup set. Rounds are synchronous and simulated in-process.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np
import pandas as pd

from explicit_filter import SafetyFilter, backup_input
from models import (
    CertifiedSetFamily, ConsensusError, FilterDecision, FilterKind, MembershipMode, SafetyFault, Tolerances,
)
from network_model import CommGraph, NetworkModel, robust_successors, worst_case_values
from synthesis import check_fingerprint

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 10_000


@dataclass
class ConsensusRun:
    """One consensus execution with its stopping data"""
    graph: CommGraph
    initial: np.ndarray
    scheme: str
    final: np.ndarray
    iterations: int
    residual: float
    history: List[np.ndarray] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Long-form (round, node, component, value) table of the recorded rounds"""
        rows = []
        for k, values in enumerate(self.history):
            values = np.asarray(values, dtype=float).reshape(self.graph.node_count, -1)
            for node in range(values.shape[0]):
                for c in range(values.shape[1]):
                    rows.append({'round': k, 'node': node, 'component': c, 'value': values[node, c]})
        return pd.DataFrame(rows, columns=['round', 'node', 'component', 'value'])

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)


def _require_connected(graph: CommGraph):
    if not graph.is_connected():
        raise ConsensusError(f"communication graph with {graph.node_count} nodes is disconnected")


def metropolis_weights(graph: CommGraph) -> np.ndarray:
    """w_ij = 1 / (1 + max(deg_i, deg_j)) on edges, rows completed on the diagonal"""
    W = np.zeros((graph.node_count, graph.node_count))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(graph.degree(i), graph.degree(j)))
    W[np.diag_indices_from(W)] = 1.0 - W.sum(axis=1)
    return W


def average_consensus(graph: CommGraph, values, tol: float = 1e-10, max_iter: int = DEFAULT_MAX_ITER,
                      record: bool = False) -> ConsensusRun:
    """Synchronous Metropolis averaging until every node is within tol of the mean"""
    _require_connected(graph)
    initial = np.asarray(values, dtype=float)
    if initial.shape[0] != graph.node_count or not np.all(np.isfinite(initial)):
        raise ConsensusError(f"need {graph.node_count} finite node values, got shape {initial.shape}")
    W = metropolis_weights(graph)
    mean = initial.mean(axis=0)
    current = initial.copy()
    history = [current.copy()] if record else []
    residual = float(np.max(np.abs(current - mean)))
    iterations = 0
    while residual >= tol:
        if iterations >= max_iter:
            raise ConsensusError(f"average consensus did not converge in {max_iter} rounds (residual {residual:.3e})")
        current = W @ current
        iterations += 1
        residual = float(np.max(np.abs(current - mean)))
        if record:
            history.append(current.copy())
    logger.debug("Average consensus converged in %d rounds (residual %.2e)", iterations, residual)
    return ConsensusRun(graph, initial, 'metropolis', current, iterations, residual, history)


def _as_objects(items: Sequence[Any]) -> np.ndarray:
    out = np.empty(len(items), dtype=object)
    out[:] = list(items)
    return out


def min_consensus(graph: CommGraph, keys, record: bool = False) -> ConsensusRun:
    """Flood the minimum for exactly diameter(G) rounds.

    A 2-D float array is minimized elementwise per column; any other sequence
    of comparable keys, e.g. (cost, index) tuples, lexicographically.
    """
    _require_connected(graph)
    if len(keys) != graph.node_count:
        raise ConsensusError(f"need {graph.node_count} node keys, got {len(keys)}")
    elementwise = isinstance(keys, np.ndarray) and keys.ndim == 2
    current = keys.astype(float) if elementwise else list(keys)
    history = [np.array(current) if elementwise else _as_objects(current)] if record else []
    rounds = graph.diameter()
    closed = [graph.closed_neighborhood(i) for i in range(graph.node_count)]
    for _ in range(rounds):
        if elementwise:
            current = np.array([current[hood].min(axis=0) for hood in closed])
        else:
            current = [min(current[j] for j in hood) for hood in closed]
        if record:
            history.append(np.array(current) if elementwise else _as_objects(current))
    final = current if elementwise else _as_objects(current)
    initial = np.array(keys, dtype=float) if elementwise else _as_objects(keys)
    return ConsensusRun(graph, initial, 'min-flood', final, rounds, 0.0, history)


def membership_by_consensus(graph: CommGraph, x: np.ndarray, shapes: Sequence[np.ndarray], model: NetworkModel,
                            tol: float = 1e-10, max_iter: int = DEFAULT_MAX_ITER) -> bool:
    """Node i contributes x_i^T P_i x_i; the consensus limit is J(x), compared with 1/N + tol"""
    local = np.array([float(model.agent_state(x, i) @ P @ model.agent_state(x, i)) for i, P in enumerate(shapes)])
    run = average_consensus(graph, local, tol, max_iter)
    return bool(run.final[0] <= 1.0 / graph.node_count + tol)


def consensus_explicit_step(model: NetworkModel, family: CertifiedSetFamily, x: np.ndarray, u_learning: np.ndarray,
                            k: int = 0, membership: MembershipMode = MembershipMode.GLOBAL_SUM,
                            tolerances: Optional[Tolerances] = None, runs: Optional[List[ConsensusRun]] = None,
                            max_iter: int = DEFAULT_MAX_ITER) -> FilterDecision:
    """Explicit filter decision computed only from neighbor exchanges"""
    tol = tolerances or Tolerances()
    graph = model.graph
    N = model.N
    x = np.asarray(x, dtype=float)
    u_learning = np.asarray(u_learning, dtype=float)
    regions = family.regions

    # certification: per-agent worst corner values for every set, averaged across the network
    successors = robust_successors(model, x, u_learning, tol.vertex_cap)
    local = np.column_stack([worst_case_values(successors, r.shapes) for r in regions])
    averaged = average_consensus(graph, local, tol.consensus, max_iter)
    flags = np.zeros((N, 1 + len(regions)))
    for i, U in enumerate(model.input_sets):
        flags[i, 0] = U.residual(model.agent_input(u_learning, i)) <= tol.linear
        if membership == MembershipMode.GLOBAL_SUM:
            flags[i, 1:] = averaged.final[i] <= (1.0 + tol.membership) / N + tol.consensus
        else:
            flags[i, 1:] = local[i] <= 1.0 / N + tol.membership
    # elementwise min of 0/1 flags is a network-wide AND
    agreed = min_consensus(graph, flags)
    values = {r.index: float(averaged.final[0, c] * N) for c, r in enumerate(regions)}
    if runs is not None:
        runs.extend([averaged, agreed])
    row = agreed.final[0]
    if row[0]:
        for col, region in enumerate(regions):
            if row[1 + col]:
                return FilterDecision(k, u_learning.copy(), u_learning.copy(), False, region.index, values)

    # backup: membership of x and cost of each backup law, then flood the cheapest eligible set
    quad = np.column_stack([[float(model.agent_state(x, i) @ P @ model.agent_state(x, i))
                             for i, P in enumerate(r.shapes)] for r in regions])
    costs = np.column_stack([[float(np.linalg.norm(model.agent_input(u_learning, i) - model.agent_input(backup_input(r, model, x), i)))
                              for i in range(N)] for r in regions])
    summed = average_consensus(graph, np.hstack([quad, costs]), tol.consensus, max_iter)
    M = len(regions)
    keys = []
    for i in range(N):
        best = (np.inf, np.inf)
        for col, region in enumerate(regions):
            if summed.final[i, col] * N <= 1.0 + tol.backup_membership:
                best = min(best, (summed.final[i, M + col] * N, region.index))
        keys.append(best)
    chosen = min_consensus(graph, keys)
    if runs is not None:
        runs.extend([summed, chosen])
    cost, b = chosen.final[0]
    if not np.isfinite(b):
        raise SafetyFault(f"state lies in none of the {M} certified sets")
    region = next(r for r in regions if r.index == b)
    return FilterDecision(k, u_learning.copy(), backup_input(region, model, x), True, int(b), values)


class DistributedExplicitFilter(SafetyFilter):
    """Explicit filter whose decisions are reached by consensus among the agents"""

    kind = FilterKind.EXPLICIT

    def __init__(self, model: NetworkModel, family: CertifiedSetFamily,
                 membership: MembershipMode = MembershipMode.GLOBAL_SUM, tolerances: Optional[Tolerances] = None,
                 max_iter: int = DEFAULT_MAX_ITER):
        super().__init__(model, tolerances)
        check_fingerprint(family, model)
        if not model.graph.is_connected():
            raise ConsensusError("distributed filtering needs a connected communication graph")
        self.family = family
        self.membership = membership
        self.max_iter = max_iter
        self.runs: List[ConsensusRun] = []

    def decide(self, x, u_learning, k=0):
        self.runs = []
        return consensus_explicit_step(self.model, self.family, x, u_learning, k, self.membership,
                                       self.tolerances, self.runs, self.max_iter)

    def admits_initial(self, x):
        return any(membership_by_consensus(self.model.graph, x, r.shapes, self.model, self.tolerances.consensus,
                                           self.max_iter) for r in self.family.regions)
