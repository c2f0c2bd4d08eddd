"""
Network of coupled uncertain linear agents.

Agents are indexed from 0 inside Python; the JSON model format uses the
1-indexed edge lists of the communication graph. Every per-neighborhood
quantity (x_{N_i}, W_i, A_i, K_i, H_i) follows the same convention: the
closed neighborhood of agent i sorted ascending, agent i included.
"""
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.optimize import linprog

from models import ModelError, VertexLimitError

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.05
THETA_ATOL = 1e-12


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph over agents 0..N-1"""
    node_count: int
    edges: FrozenSet[Tuple[int, int]] = frozenset()

    def __post_init__(self):
        if self.node_count < 1:
            raise ModelError(f"graph needs at least one node, got {self.node_count}")
        normalized = set()
        for i, j in self.edges:
            if i == j:
                raise ModelError(f"self-loop on node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ModelError(f"edge ({i}, {j}) outside 0..{self.node_count - 1}")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, 'edges', frozenset(normalized))

    @classmethod
    def line(cls, node_count: int) -> "CommGraph":
        return cls(node_count, frozenset((i, i + 1) for i in range(node_count - 1)))

    @classmethod
    def from_one_indexed(cls, node_count: int, edges: Sequence[Sequence[int]]) -> "CommGraph":
        return cls(node_count, frozenset((int(i) - 1, int(j) - 1) for i, j in edges))

    def one_indexed_edges(self) -> List[List[int]]:
        return [[i + 1, j + 1] for i, j in sorted(self.edges)]

    def neighbors(self, i: int) -> List[int]:
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    def closed_neighborhood(self, i: int) -> List[int]:
        return sorted(set(self.neighbors(i)) | {i})

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.node_count))
        graph.add_edges_from(self.edges)
        return graph

    def is_connected(self) -> bool:
        return nx.is_connected(self.to_networkx())

    def diameter(self) -> int:
        if self.node_count == 1:
            return 0
        return nx.diameter(self.to_networkx())


@dataclass(frozen=True)
class Neighborhood:
    """Closed neighborhood of one agent and its layout inside x_{N_i}"""
    agent: int
    members: Tuple[int, ...]
    offsets: Tuple[int, ...]      # start of each member's block inside x_{N_i}
    dims: Tuple[int, ...]

    @property
    def dim(self) -> int:
        return int(sum(self.dims))

    def block(self, member: int) -> slice:
        pos = self.members.index(member)
        return slice(self.offsets[pos], self.offsets[pos] + self.dims[pos])

    @property
    def own_block(self) -> slice:
        return self.block(self.agent)


@dataclass(frozen=True, eq=False)
class LiftingMatrix:
    """0/1 selection matrix T_i (agent state) or W_i (neighborhood state)"""
    kind: str
    agent: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.kind not in ('T', 'W'):
            raise ModelError(f"unknown lifting kind {self.kind!r}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape


def state_offsets(dims: Sequence[int]) -> List[int]:
    return [int(v) for v in np.concatenate([[0], np.cumsum(dims)[:-1]])]


def build_neighborhood(graph: CommGraph, dims: Sequence[int], i: int) -> Neighborhood:
    members = graph.closed_neighborhood(i)
    member_dims = [int(dims[j]) for j in members]
    return Neighborhood(i, tuple(members), tuple(state_offsets(member_dims)), tuple(member_dims))


def build_lifting(graph: CommGraph, dims: Sequence[int]) -> Tuple[List[LiftingMatrix], List[LiftingMatrix]]:
    """Build T_i and W_i for every agent"""
    if len(dims) != graph.node_count or any(int(d) < 1 for d in dims):
        raise ModelError(f"need one positive state dimension per node, got {list(dims)}")
    n = int(sum(dims))
    offsets = state_offsets(dims)
    T_list, W_list = [], []
    for i in range(graph.node_count):
        T = np.zeros((dims[i], n))
        T[:, offsets[i]:offsets[i] + dims[i]] = np.eye(dims[i])
        rows = [offsets[j] + r for j in graph.closed_neighborhood(i) for r in range(dims[j])]
        W = np.zeros((len(rows), n))
        W[np.arange(len(rows)), rows] = 1.0
        T_list.append(LiftingMatrix('T', i, T))
        W_list.append(LiftingMatrix('W', i, W))
    return T_list, W_list


@dataclass(frozen=True, eq=False)
class UncertainAffineDynamics:
    """x_i+ = A_i(theta) x_{N_i} + B_i(theta) u_i, affine in theta"""
    A0: np.ndarray
    B0: np.ndarray
    A_sens: Tuple[np.ndarray, ...] = ()
    B_sens: Tuple[np.ndarray, ...] = ()
    theta_nominal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_lo: Optional[np.ndarray] = None
    theta_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        if A0.shape[0] != B0.shape[0]:
            raise ModelError(f"A0 has {A0.shape[0]} rows but B0 has {B0.shape[0]}")
        nominal = np.asarray(self.theta_nominal, dtype=float).reshape(-1)
        p = nominal.size
        A_sens = tuple(np.asarray(a, dtype=float).reshape(A0.shape) for a in self.A_sens) or \
            tuple(np.zeros_like(A0) for _ in range(p))
        B_sens = tuple(np.asarray(b, dtype=float).reshape(B0.shape) for b in self.B_sens) or \
            tuple(np.zeros_like(B0) for _ in range(p))
        if len(A_sens) != p or len(B_sens) != p:
            raise ModelError(f"need {p} sensitivity matrices, got {len(A_sens)} and {len(B_sens)}")
        lo = nominal.copy() if self.theta_lo is None else np.asarray(self.theta_lo, dtype=float).reshape(-1)
        hi = nominal.copy() if self.theta_hi is None else np.asarray(self.theta_hi, dtype=float).reshape(-1)
        if lo.size != p or hi.size != p:
            raise ModelError("parameter box does not match the nominal parameter dimension")
        if np.any(lo > nominal + THETA_ATOL) or np.any(nominal > hi + THETA_ATOL):
            raise ModelError(f"nominal parameter {nominal} outside box [{lo}, {hi}]")
        object.__setattr__(self, 'A0', A0)
        object.__setattr__(self, 'B0', B0)
        object.__setattr__(self, 'A_sens', A_sens)
        object.__setattr__(self, 'B_sens', B_sens)
        object.__setattr__(self, 'theta_nominal', nominal)
        object.__setattr__(self, 'theta_lo', lo)
        object.__setattr__(self, 'theta_hi', hi)

    @classmethod
    def with_uncertainty(cls, A0, B0, A_sens, B_sens, theta_nominal, gamma: float) -> "UncertainAffineDynamics":
        """Box [(1-gamma) theta_nominal, (1+gamma) theta_nominal], ordered elementwise"""
        if gamma < 0:
            raise ModelError(f"uncertainty level must be non-negative, got {gamma}")
        nominal = np.asarray(theta_nominal, dtype=float).reshape(-1)
        a, b = (1.0 - gamma) * nominal, (1.0 + gamma) * nominal
        return cls(A0, B0, tuple(A_sens), tuple(B_sens), nominal, np.minimum(a, b), np.maximum(a, b))

    @property
    def p(self) -> int:
        return self.theta_nominal.size

    @property
    def state_dim(self) -> int:
        return self.A0.shape[0]

    @property
    def neighborhood_dim(self) -> int:
        return self.A0.shape[1]

    @property
    def input_dim(self) -> int:
        return self.B0.shape[1]


def theta_vertices(dyn: UncertainAffineDynamics, cap: int = 2 ** 16) -> List[np.ndarray]:
    """Corners of the parameter box in lexicographic order (lo before hi)"""
    axes = []
    for lo, hi in zip(dyn.theta_lo, dyn.theta_hi):
        axes.append((lo,) if abs(hi - lo) <= THETA_ATOL else (lo, hi))
    count = int(np.prod([len(a) for a in axes])) if axes else 1
    if count > cap:
        raise VertexLimitError(
            f"{count} parameter vertices exceed the cap of {cap}; "
            f"reduce the uncertainty structure (fewer or collapsed parameters)"
        )
    return [np.array(corner, dtype=float) for corner in itertools.product(*axes)]


def eval_dynamics(dyn: UncertainAffineDynamics, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """A_i(theta), B_i(theta)"""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != dyn.p:
        raise ModelError(f"expected {dyn.p} parameters, got {theta.size}")
    if np.any(theta < dyn.theta_lo - THETA_ATOL) or np.any(theta > dyn.theta_hi + THETA_ATOL):
        raise ModelError(f"parameter {theta} outside box [{dyn.theta_lo}, {dyn.theta_hi}]")
    A = dyn.A0.copy()
    B = dyn.B0.copy()
    for t, A_r, B_r in zip(theta, dyn.A_sens, dyn.B_sens):
        A += t * A_r
        B += t * B_r
    return A, B


@dataclass(frozen=True, eq=False)
class PolytopicSet:
    """{z | H z <= h} with the origin strictly inside"""
    H: np.ndarray
    h: np.ndarray
    role: str = "state"

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape[0] != h.size:
            raise ModelError(f"{H.shape[0]} constraint rows but {h.size} bounds")
        if np.any(h <= 0):
            raise ModelError(f"{self.role} set must contain the origin in its interior (h > 0), got h = {h}")
        if self.role not in ('state', 'input'):
            raise ModelError(f"unknown polytope role {self.role!r}")
        object.__setattr__(self, 'H', H)
        object.__setattr__(self, 'h', h)

    @classmethod
    def from_table(cls, H, h, role: str = "state") -> "PolytopicSet":
        """Read tabulated (H, h) treating paired rows as symmetric bounds of magnitude |h|"""
        h = np.asarray(h, dtype=float).reshape(-1)
        if np.any(h <= 0):
            logger.debug("Repairing %s bounds %s to their magnitudes", role, h.tolist())
        return cls(H, np.abs(h), role)

    @classmethod
    def box(cls, bounds: Sequence[float], role: str = "state") -> "PolytopicSet":
        bounds = np.asarray(bounds, dtype=float)
        eye = np.eye(bounds.size)
        return cls(np.vstack([eye, -eye]), np.concatenate([bounds, bounds]), role)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def residual(self, z: np.ndarray) -> float:
        """max_l (H_l z - h_l); positive means violation"""
        return float(np.max(self.H @ z - self.h))

    def contains(self, z: np.ndarray, tol: float = 0.0) -> bool:
        return self.residual(z) <= tol

    def embed(self, width: int, columns: slice) -> "PolytopicSet":
        """Same constraint written over a wider vector where z occupies `columns`"""
        H = np.zeros((self.H.shape[0], width))
        H[:, columns] = self.H
        return PolytopicSet(H, self.h, self.role)


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Communication graph, agent dynamics and constraints of the whole network"""
    graph: CommGraph
    dynamics: Tuple[UncertainAffineDynamics, ...]
    state_sets: Tuple[PolytopicSet, ...]
    input_sets: Tuple[PolytopicSet, ...]
    name: str = "custom"
    dt: float = DEFAULT_DT
    gamma: float = 0.0
    builder: Optional[Dict] = None
    position_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        N = self.graph.node_count
        if not (len(self.dynamics) == len(self.state_sets) == len(self.input_sets) == N):
            raise ModelError(f"need dynamics and constraint sets for all {N} agents")
        dims = [d.state_dim for d in self.dynamics]
        T, W = build_lifting(self.graph, dims)
        hoods = [build_neighborhood(self.graph, dims, i) for i in range(N)]
        for i, (dyn, X, U) in enumerate(zip(self.dynamics, self.state_sets, self.input_sets)):
            if dyn.neighborhood_dim != hoods[i].dim:
                raise ModelError(f"agent {i}: A_i has {dyn.neighborhood_dim} columns, neighborhood has {hoods[i].dim}")
            if X.dim != hoods[i].dim or X.role != 'state':
                raise ModelError(f"agent {i}: state set must act on x_N_i ({hoods[i].dim} columns)")
            if U.dim != dyn.input_dim or U.role != 'input':
                raise ModelError(f"agent {i}: input set must act on u_i ({dyn.input_dim} columns)")
        n = int(sum(dims))
        mask = np.ones(n, dtype=bool) if self.position_mask is None else np.asarray(self.position_mask, dtype=bool)
        if mask.size != n:
            raise ModelError(f"position mask has {mask.size} entries, state has {n}")
        offsets = state_offsets(dims)
        index_N = [np.array([offsets[j] + r for j in hoods[i].members for r in range(dims[j])], dtype=int)
                   for i in range(N)]
        object.__setattr__(self, 'position_mask', mask)
        object.__setattr__(self, 'neighborhoods', tuple(hoods))
        object.__setattr__(self, 'T', tuple(T))
        object.__setattr__(self, 'W', tuple(W))
        object.__setattr__(self, '_index_N', tuple(index_N))
        object.__setattr__(self, '_state_offsets', tuple(offsets))
        object.__setattr__(self, '_input_offsets', tuple(state_offsets([d.input_dim for d in self.dynamics])))
        object.__setattr__(self, '_vertex_cache', {})

    @property
    def N(self) -> int:
        return self.graph.node_count

    @property
    def state_dims(self) -> List[int]:
        return [d.state_dim for d in self.dynamics]

    @property
    def input_dims(self) -> List[int]:
        return [d.input_dim for d in self.dynamics]

    @property
    def n(self) -> int:
        return int(sum(self.state_dims))

    @property
    def m(self) -> int:
        return int(sum(self.input_dims))

    def agent_slice(self, i: int) -> slice:
        return slice(self._state_offsets[i], self._state_offsets[i] + self.state_dims[i])

    def input_slice(self, i: int) -> slice:
        return slice(self._input_offsets[i], self._input_offsets[i] + self.input_dims[i])

    def agent_state(self, x: np.ndarray, i: int) -> np.ndarray:
        return x[self.agent_slice(i)]

    def neighborhood_state(self, x: np.ndarray, i: int) -> np.ndarray:
        return x[self._index_N[i]]

    def neighborhood_index(self, i: int) -> np.ndarray:
        return self._index_N[i]

    def agent_input(self, u: np.ndarray, i: int) -> np.ndarray:
        return u[self.input_slice(i)]

    def vertices(self, i: int, cap: int = 2 ** 16) -> List[np.ndarray]:
        return theta_vertices(self.dynamics[i], cap)

    def vertex_dynamics(self, i: int, cap: int = 2 ** 16) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(A_i, B_i) at every corner of agent i's parameter box, cached"""
        if (i, cap) not in self._vertex_cache:
            self._vertex_cache[(i, cap)] = [eval_dynamics(self.dynamics[i], t) for t in self.vertices(i, cap)]
        return self._vertex_cache[(i, cap)]

    def theta_nominal(self) -> List[np.ndarray]:
        return [d.theta_nominal.copy() for d in self.dynamics]

    def state_residuals(self, x: np.ndarray) -> np.ndarray:
        return np.array([X.residual(self.neighborhood_state(x, i)) for i, X in enumerate(self.state_sets)])

    def input_residuals(self, u: np.ndarray) -> np.ndarray:
        return np.array([U.residual(self.agent_input(u, i)) for i, U in enumerate(self.input_sets)])

    def to_dict(self, inline: bool = False) -> Dict:
        if self.builder is not None and not inline:
            return {'builder': self.builder['name'], 'params': dict(self.builder['params'])}
        agents = []
        for dyn, X, U in zip(self.dynamics, self.state_sets, self.input_sets):
            agents.append({
                'A0': dyn.A0.tolist(), 'B0': dyn.B0.tolist(),
                'A_sens': [a.tolist() for a in dyn.A_sens],
                'B_sens': [b.tolist() for b in dyn.B_sens],
                'theta_nominal': dyn.theta_nominal.tolist(),
                'theta_lo': dyn.theta_lo.tolist(), 'theta_hi': dyn.theta_hi.tolist(),
                'H': X.H.tolist(), 'h': X.h.tolist(), 'O': U.H.tolist(), 'o': U.h.tolist(),
            })
        return {
            'name': self.name, 'node_count': self.N, 'edges': self.graph.one_indexed_edges(),
            'dt': self.dt, 'gamma': self.gamma, 'agents': agents,
            'position_mask': self.position_mask.astype(int).tolist(),
        }

    def fingerprint(self) -> str:
        """SHA-256 of the canonical inline model description"""
        canonical = json.dumps(self.to_dict(inline=True), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()


def assemble_global(model: NetworkModel, thetas: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Dense A(theta), B(theta) of the whole network"""
    if len(thetas) != model.N:
        raise ModelError(f"need one parameter vector per agent, got {len(thetas)}")
    A = np.zeros((model.n, model.n))
    B = np.zeros((model.n, model.m))
    for i, dyn in enumerate(model.dynamics):
        A_i, B_i = eval_dynamics(dyn, thetas[i])
        A[model.agent_slice(i)] = A_i @ model.W[i].matrix
        B[model.agent_slice(i), model.input_slice(i)] = B_i
    return A, B


def step(model: NetworkModel, x: np.ndarray, u: np.ndarray, thetas: Sequence[np.ndarray]) -> np.ndarray:
    """One step of the true network dynamics"""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.size != model.n or u.size != model.m:
        raise ModelError(f"expected x in R^{model.n} and u in R^{model.m}, got {x.size} and {u.size}")
    x_next = np.empty(model.n)
    for i, dyn in enumerate(model.dynamics):
        A_i, B_i = eval_dynamics(dyn, thetas[i])
        x_next[model.agent_slice(i)] = A_i @ model.neighborhood_state(x, i) + B_i @ model.agent_input(u, i)
    return x_next


def robust_successors(model: NetworkModel, x: np.ndarray, u: np.ndarray, cap: int = 2 ** 16) -> List[np.ndarray]:
    """Per agent, the one-step predictions x_i+ at every parameter corner (rows)"""
    out = []
    for i in range(model.N):
        x_N = model.neighborhood_state(x, i)
        u_i = model.agent_input(u, i)
        out.append(np.array([A @ x_N + B @ u_i for A, B in model.vertex_dynamics(i, cap)]))
    return out


def worst_case_values(successors: Sequence[np.ndarray], shapes: Sequence[np.ndarray]) -> np.ndarray:
    """Per agent, max over corners of x_i+^T P_i x_i+"""
    return np.array([float(np.max(np.einsum('va,ab,vb->v', nxt, P, nxt))) for nxt, P in zip(successors, shapes)])


def theta_nominal_global(model: NetworkModel) -> np.ndarray:
    """Nominal parameters of all agents stacked in agent order"""
    return np.concatenate(model.theta_nominal()) if model.N else np.zeros(0)


def sample_theta_vertex(model: NetworkModel, rng: np.random.Generator, cap: int = 2 ** 16) -> List[np.ndarray]:
    """Per-agent parameter drawn uniformly from the box corners"""
    thetas = []
    for i in range(model.N):
        verts = model.vertices(i, cap)
        thetas.append(verts[int(rng.integers(len(verts)))])
    return thetas


def global_state_polytope(model: NetworkModel) -> PolytopicSet:
    """X = {x | H_i W_i x <= h_i for all i}"""
    H = np.vstack([X.H @ model.W[i].matrix for i, X in enumerate(model.state_sets)])
    h = np.concatenate([X.h for X in model.state_sets])
    return PolytopicSet(H, h, 'state')


def coordinate_bounds(polytope: PolytopicSet, mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-coordinate bounding box by linear programming; coordinates outside `mask` are fixed to 0"""
    dim = polytope.dim
    mask = np.ones(dim, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    bounds = [(None, None) if mask[c] else (0.0, 0.0) for c in range(dim)]
    lower, upper = np.zeros(dim), np.zeros(dim)
    for c in np.flatnonzero(mask):
        for sign, target in ((1.0, lower), (-1.0, upper)):
            cost = np.zeros(dim)
            cost[c] = sign
            result = linprog(cost, A_ub=polytope.H, b_ub=polytope.h, bounds=bounds, method='highs')
            if result.status == 3:
                target[c] = -np.inf * sign
            elif not result.success:
                raise ModelError(f"bounding LP failed on coordinate {c}: {result.message}")
            else:
                target[c] = result.x[c]
    return lower, upper


def _local_state_rows(local_H: np.ndarray, hood: Neighborhood) -> np.ndarray:
    H = np.zeros((local_H.shape[0], hood.dim))
    H[:, hood.own_block] = local_H
    return H


def build_mass_spring_damper_chain(
    N: int,
    m: float = 1.0,
    k: float = 2.0,
    d: float = 1.0,
    dt: float = DEFAULT_DT,
    gamma: float = 0.0,
    position_bound: float = 1.0,
    velocity_bound: float = 3.0,
    input_bound: float = 1.0,
) -> NetworkModel:
    """Line of masses coupled by springs and dampers, forward-Euler discretized.

    Agent state is (position, velocity); the uncertain parameters of agent i
    are (k_ij, d_ij) for each neighbor j in ascending order.
    """
    if N < 1 or dt <= 0:
        raise ModelError(f"need N >= 1 and dt > 0, got N={N}, dt={dt}")
    graph = CommGraph.line(N)
    dims = [2] * N
    local_H = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    local_h = np.array([position_bound, -position_bound, velocity_bound, -velocity_bound])
    dynamics, state_sets, input_sets = [], [], []
    for i in range(N):
        hood = build_neighborhood(graph, dims, i)
        own = hood.own_block.start
        A0 = np.zeros((2, hood.dim))
        A0[0, own], A0[0, own + 1] = 1.0, dt
        A0[1, own + 1] = 1.0
        B0 = np.array([[0.0], [dt / m]])
        A_sens, nominal = [], []
        for j in graph.neighbors(i):
            other = hood.block(j).start
            spring = np.zeros_like(A0)
            spring[1, other] += dt / m
            spring[1, own] -= dt / m
            damper = np.zeros_like(A0)
            damper[1, other + 1] += dt / m
            damper[1, own + 1] -= dt / m
            A_sens += [spring, damper]
            nominal += [k, d]
        dynamics.append(UncertainAffineDynamics.with_uncertainty(
            A0, B0, A_sens, [np.zeros_like(B0)] * len(A_sens), nominal, gamma))
        state_sets.append(PolytopicSet.from_table(_local_state_rows(local_H, hood), local_h, 'state'))
        input_sets.append(PolytopicSet.from_table(np.array([[1.0], [-1.0]]), np.array([input_bound, -input_bound]), 'input'))
    params = dict(N=N, m=m, k=k, d=d, dt=dt, gamma=gamma, position_bound=position_bound,
                  velocity_bound=velocity_bound, input_bound=input_bound)
    return NetworkModel(
        graph, tuple(dynamics), tuple(state_sets), tuple(input_sets),
        name=f"mass-spring-damper-{N}", dt=dt, gamma=gamma,
        builder={'name': 'mass_spring_damper_chain', 'params': params},
        position_mask=np.tile([True, False], N),
    )


def build_mass_damper_2d(
    N: int,
    m: float = 1.0,
    a: float = 0.1,
    d: float = 0.5,
    dt: float = DEFAULT_DT,
    gamma: float = 0.0,
    position_bound: float = 10.0,
    input_bound: float = 5.0,
) -> NetworkModel:
    """Planar mass-damper agents on a line graph.

    Agent state is (x, x_dot, y, y_dot) with one input acting on both axes;
    the uncertain parameters are (a_i, d_ij for each neighbor j ascending).
    Positions satisfy |x| + |y| <= position_bound, velocities are free.
    """
    if N < 1 or dt <= 0:
        raise ModelError(f"need N >= 1 and dt > 0, got N={N}, dt={dt}")
    graph = CommGraph.line(N)
    dims = [4] * N
    table_H = np.array([[10.0, 0, 10.0, 0], [10.0, 0, -10.0, 0], [-10.0, 0, 10.0, 0], [-10.0, 0, -10.0, 0]])
    table_h = np.full(4, 10.0 * position_bound)
    dynamics, state_sets, input_sets = [], [], []
    for i in range(N):
        hood = build_neighborhood(graph, dims, i)
        own = hood.own_block.start
        A0 = np.zeros((4, hood.dim))
        for axis in (0, 2):
            A0[axis, own + axis], A0[axis, own + axis + 1] = 1.0, dt
            A0[axis + 1, own + axis + 1] = 1.0
        B0 = np.array([[0.0], [dt / m], [0.0], [dt / m]])
        local = np.zeros_like(A0)
        local[1, own + 1] = local[3, own + 3] = dt / m
        A_sens, nominal = [local], [a]
        for j in graph.neighbors(i):
            other = hood.block(j).start
            damper = np.zeros_like(A0)
            for axis in (1, 3):
                damper[axis, other + axis] += dt / m
                damper[axis, own + axis] -= dt / m
            A_sens.append(damper)
            nominal.append(d)
        dynamics.append(UncertainAffineDynamics.with_uncertainty(
            A0, B0, A_sens, [np.zeros_like(B0)] * len(A_sens), nominal, gamma))
        state_sets.append(PolytopicSet.from_table(_local_state_rows(table_H, hood), table_h, 'state'))
        input_sets.append(PolytopicSet.from_table(np.array([[1.0], [-1.0]]), np.array([input_bound, -input_bound]), 'input'))
    params = dict(N=N, m=m, a=a, d=d, dt=dt, gamma=gamma, position_bound=position_bound, input_bound=input_bound)
    return NetworkModel(
        graph, tuple(dynamics), tuple(state_sets), tuple(input_sets),
        name=f"mass-damper-2d-{N}", dt=dt, gamma=gamma,
        builder={'name': 'mass_damper_2d', 'params': params},
        position_mask=np.tile([True, False, True, False], N),
    )


BUILDERS = {
    'mass_spring_damper_chain': build_mass_spring_damper_chain,
    'mass_damper_2d': build_mass_damper_2d,
}


def with_gamma(model: NetworkModel, gamma: float) -> NetworkModel:
    """Same network with the parameter box rebuilt at uncertainty level gamma"""
    if model.builder is not None:
        params = dict(model.builder['params'], gamma=gamma)
        return BUILDERS[model.builder['name']](**params)
    dynamics = tuple(
        UncertainAffineDynamics.with_uncertainty(d.A0, d.B0, d.A_sens, d.B_sens, d.theta_nominal, gamma)
        for d in model.dynamics
    )
    return NetworkModel(model.graph, dynamics, model.state_sets, model.input_sets, model.name, model.dt, gamma,
                        None, model.position_mask)


def sampling_mask(model: NetworkModel) -> np.ndarray:
    """All coordinates when the state polytope is bounded, else only the position coordinates"""
    lower, upper = coordinate_bounds(global_state_polytope(model))
    if np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)):
        return np.ones(model.n, dtype=bool)
    return model.position_mask.copy()


def model_from_dict(data: Dict) -> NetworkModel:
    """Build a model from a builder reference or inline matrices"""
    if 'builder' in data:
        name = data['builder']
        if name not in BUILDERS:
            raise ModelError(f"unknown model builder {name!r}; choose from {sorted(BUILDERS)}")
        try:
            return BUILDERS[name](**data.get('params', {}))
        except TypeError as exc:
            raise ModelError(f"builder {name}: {exc}") from exc
    try:
        graph = CommGraph.from_one_indexed(int(data['node_count']), data.get('edges', []))
        gamma = float(data.get('gamma', 0.0))
        dynamics, state_sets, input_sets = [], [], []
        for agent in data['agents']:
            A0 = np.array(agent['A0'], dtype=float)
            B0 = np.array(agent['B0'], dtype=float)
            A_sens = [np.array(a, dtype=float) for a in agent.get('A_sens', [])]
            B_sens = [np.array(b, dtype=float) for b in agent.get('B_sens', [])] or [np.zeros_like(B0)] * len(A_sens)
            nominal = agent.get('theta_nominal', [])
            if 'theta_lo' in agent:
                dyn = UncertainAffineDynamics(A0, B0, tuple(A_sens), tuple(B_sens), np.array(nominal, dtype=float),
                                              np.array(agent['theta_lo'], dtype=float),
                                              np.array(agent['theta_hi'], dtype=float))
            else:
                dyn = UncertainAffineDynamics.with_uncertainty(A0, B0, A_sens, B_sens, nominal, gamma)
            dynamics.append(dyn)
            state_sets.append(PolytopicSet(agent['H'], agent['h'], 'state'))
            input_sets.append(PolytopicSet(agent['O'], agent['o'], 'input'))
    except KeyError as exc:
        raise ModelError(f"model description is missing field {exc}") from exc
    return NetworkModel(
        graph, tuple(dynamics), tuple(state_sets), tuple(input_sets),
        name=data.get('name', 'custom'), dt=float(data.get('dt', DEFAULT_DT)), gamma=gamma,
        position_mask=data.get('position_mask'),
    )


def load_model(path: str) -> NetworkModel:
    with open(path) as handle:
        return model_from_dict(json.load(handle))
