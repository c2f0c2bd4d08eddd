"""
Voronoi partition of the constrained state space into polytopic regions
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from models import PartitionError
from network_model import NetworkModel, PolytopicSet, coordinate_bounds, global_state_polytope

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 200_000
BOUNDARY_TOL = 1e-9


@dataclass
class Region:
    """R^j = {x | A x <= b}: Voronoi bisectors followed by the bounding faces"""
    index: int
    A: np.ndarray
    b: np.ndarray
    seed: np.ndarray

    def residual(self, x: np.ndarray) -> float:
        return float(np.max(self.A @ x - self.b))

    def contains(self, x: np.ndarray, tol: float = BOUNDARY_TOL) -> bool:
        return self.residual(x) <= tol

    def to_dict(self) -> Dict:
        return {'index': self.index, 'A': self.A.tolist(), 'b': self.b.tolist(), 'seed': self.seed.tolist()}


@dataclass
class PartitionSpec:
    """What to partition and how to draw the generators"""
    M: int
    rng_seed: int
    bounding: PolytopicSet
    mask: Optional[np.ndarray] = None          # coordinates the generators vary in; the rest stay 0
    seeds: Optional[np.ndarray] = None         # explicit generators override sampling

    def __post_init__(self):
        if self.M < 1:
            raise PartitionError(f"need at least one region, got M={self.M}")


@dataclass
class Partition:
    """Generators, bounding polytope and the resulting cells"""
    seeds: np.ndarray
    bounding: PolytopicSet
    regions: List[Region] = field(default_factory=list)
    rng_seed: Optional[int] = None
    mask: Optional[np.ndarray] = None

    @property
    def M(self) -> int:
        return len(self.regions)

    def locate(self, x: np.ndarray) -> int:
        return locate(x, self)

    def to_dict(self) -> Dict:
        return {
            'M': self.M,
            'rng_seed': self.rng_seed,
            'seeds': self.seeds.tolist(),
            'bounding': {'H': self.bounding.H.tolist(), 'h': self.bounding.h.tolist()},
            'mask': None if self.mask is None else np.asarray(self.mask).astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Partition":
        bounding = PolytopicSet(data['bounding']['H'], data['bounding']['h'], 'state')
        seeds = np.atleast_2d(np.array(data['seeds'], dtype=float))
        mask = data.get('mask')
        return cls(seeds, bounding, voronoi_cells(seeds, bounding), data.get('rng_seed'),
                   None if mask is None else np.asarray(mask, dtype=bool))

    def save(self, path: str):
        with open(path, 'w') as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "Partition":
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


def sample_uniform(polytope: PolytopicSet, count: int, rng: np.random.Generator,
                   mask: Optional[np.ndarray] = None, budget: int = DEFAULT_BUDGET,
                   box: Optional[tuple] = None) -> np.ndarray:
    """Uniform rejection samples inside the polytope, restricted to the `mask` coordinates"""
    dim = polytope.dim
    mask = np.ones(dim, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lower, upper = box if box is not None else coordinate_bounds(polytope, mask)
    if not (np.all(np.isfinite(lower[mask])) and np.all(np.isfinite(upper[mask]))):
        raise PartitionError("sampling domain is unbounded; restrict the generator subspace")
    if np.any(upper[mask] - lower[mask] <= 0):
        raise PartitionError("sampling domain is degenerate along a free coordinate")
    accepted: List[np.ndarray] = []
    drawn = 0
    batch = max(64, 4 * count)
    while len(accepted) < count:
        if drawn >= budget:
            raise PartitionError(f"rejection budget of {budget} draws exhausted with {len(accepted)}/{count} samples")
        size = min(batch, budget - drawn)
        points = np.zeros((size, dim))
        points[:, mask] = rng.uniform(lower[mask], upper[mask], size=(size, int(mask.sum())))
        drawn += size
        inside = np.all(points @ polytope.H.T <= polytope.h, axis=1)
        accepted.extend(points[inside])
    return np.array(accepted[:count])


def sample_seeds(polytope: PolytopicSet, M: int, rng: np.random.Generator,
                 mask: Optional[np.ndarray] = None, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """M distinct generators drawn uniformly inside the polytope"""
    if M < 1:
        raise PartitionError(f"need at least one region, got M={M}")
    seeds = sample_uniform(polytope, M, rng, mask, budget)
    if len({tuple(s) for s in seeds}) != M:
        raise PartitionError("sampled generators are not distinct")
    return seeds


def voronoi_cells(seeds: np.ndarray, bounding: PolytopicSet) -> List[Region]:
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[0] < 1:
        raise PartitionError("need at least one generator")
    if seeds.shape[1] != bounding.dim:
        raise PartitionError(f"generators have dimension {seeds.shape[1]}, bounding polytope {bounding.dim}")
    if len({tuple(s) for s in seeds}) != seeds.shape[0]:
        raise PartitionError("duplicate generators")
    sq = np.sum(seeds ** 2, axis=1)
    regions = []
    for j, s_j in enumerate(seeds):
        others = [l for l in range(seeds.shape[0]) if l != j]
        A = np.vstack([2.0 * (seeds[others] - s_j), bounding.H]) if others else bounding.H.copy()
        b = np.concatenate([sq[others] - sq[j], bounding.h]) if others else bounding.h.copy()
        regions.append(Region(j, A, b, s_j.copy()))
    return regions


def locate(x: np.ndarray, partition: Partition) -> int:
    """Nearest generator, lowest index on ties"""
    x = np.asarray(x, dtype=float)
    if not partition.bounding.contains(x, BOUNDARY_TOL):
        raise PartitionError("point lies outside the bounding polytope")
    distances = np.sum((partition.seeds - x) ** 2, axis=1)
    return int(np.argmin(distances))


def build_partition(spec: PartitionSpec) -> Partition:
    if spec.seeds is not None:
        seeds = np.atleast_2d(np.asarray(spec.seeds, dtype=float))
        if seeds.shape[0] != spec.M:
            raise PartitionError(f"{seeds.shape[0]} explicit generators for M={spec.M}")
        for s in seeds:
            if not spec.bounding.contains(s, BOUNDARY_TOL):
                raise PartitionError(f"generator {s.tolist()} lies outside the bounding polytope")
    else:
        seeds = sample_seeds(spec.bounding, spec.M, np.random.default_rng(spec.rng_seed), spec.mask)
    partition = Partition(seeds, spec.bounding, voronoi_cells(seeds, spec.bounding), spec.rng_seed, spec.mask)
    logger.debug("Built partition with %d regions (rng seed %s)", partition.M, spec.rng_seed)
    return partition


def partition_model(model: NetworkModel, M: int, rng_seed: int, subspace: str = "position") -> Partition:
    """Partition the model's global state polytope; `subspace` is 'position' or 'full'"""
    if subspace not in ('position', 'full'):
        raise PartitionError(f"unknown generator subspace {subspace!r}")
    mask = model.position_mask if subspace == 'position' else None
    return build_partition(PartitionSpec(M, rng_seed, global_state_polytope(model), mask))
