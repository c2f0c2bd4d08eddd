"""
Data models for the distributed safety framework
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np

__version__ = "0.4.0"


class SafetyFrameworkError(Exception):
    """Base class for all errors raised by the toolkit"""


class ModelError(SafetyFrameworkError):
    """Invalid network model, dimensions, polytope or parameter"""


class VertexLimitError(ModelError):
    """Uncertainty box has more corners than the configured cap"""


class DimensionError(ModelError):
    """Shape mismatch while assembling an LMI"""


class SolverError(SafetyFrameworkError):
    """Numerical failure of the conic solver"""

    def __init__(self, message: str, label: str = "", residual: float = float("nan")):
        super().__init__(message)
        self.label = label
        self.residual = residual


class InfeasibleError(SolverError):
    """The solver certified the problem infeasible"""


class PartitionError(SafetyFrameworkError):
    """Invalid partition input or degenerate sampling domain"""


class FingerprintMismatchError(SafetyFrameworkError):
    """A certified set family was synthesized for a different model"""


class SafetyFault(SafetyFrameworkError):
    """The current state lies in no certified set"""


class ConsensusError(SafetyFrameworkError):
    """Disconnected graph or consensus that did not converge"""


class ConfigError(SafetyFrameworkError):
    """Malformed experiment configuration"""


class SolveStatus(Enum):
    """Outcome of a semidefinite program"""
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"


class ObjectiveMode(Enum):
    """Direction of the trace objective in region synthesis"""
    MAXIMIZE_TRACE = "max-trace"
    MINIMIZE_TRACE = "min-trace"


class MembershipMode(Enum):
    """How membership in a structured ellipsoid is tested"""
    GLOBAL_SUM = "global-sum"
    LOCAL_CONSERVATIVE = "local-conservative"


class FilterKind(Enum):
    """Safety filter wrapped around the learning input"""
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    NONE = "none"


class PolicyKind(Enum):
    """Scripted stand-ins for a learning algorithm"""
    RANDOM_IN_U = "random-in-U"
    NOISY_REGULATION = "noisy-regulation"
    ADVERSARIAL_OUTWARD = "adversarial-outward"
    ZERO = "zero"


class InitialStateMode(Enum):
    """How the first state of an episode is chosen"""
    SAMPLE_IN_UNION = "rejection-sample-in-union"
    GIVEN_POINT = "given-point"


class ThetaMode(Enum):
    """How the true parameter is chosen at each simulation step"""
    NOMINAL = "nominal"
    FIXED = "fixed"
    RANDOM_VERTEX = "random-vertex"


@dataclass
class Tolerances:
    """Numerical tolerances shared by synthesis, filters and checks"""
    psd: float = 1e-7
    linear: float = 1e-8
    strict_pd: float = 1e-6
    certification: float = 1e-6
    membership: float = 1e-9
    backup_membership: float = 1e-6
    validation: float = 1e-6
    consensus: float = 1e-10
    margin: float = 1e-6          # relative tightening of bounds and decrease in every SDP
    vertex_cap: int = 2 ** 16

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "Tolerances":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"tolerances: unknown field(s) {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class CertifiedRegion:
    """One robust invariant ellipsoid with its backup gains"""
    index: int
    seed: np.ndarray
    region_A: np.ndarray
    region_b: np.ndarray
    ellipsoids: List[np.ndarray]       # E_i^j
    gains: List[np.ndarray]            # K_i^j over the closed neighborhood
    witness: np.ndarray
    objective: float
    objective_mode: ObjectiveMode = ObjectiveMode.MAXIMIZE_TRACE
    status: SolveStatus = SolveStatus.OPTIMAL
    y_blocks: List[np.ndarray] = field(default_factory=list)
    coupling: List[np.ndarray] = field(default_factory=list)
    solve_time: float = 0.0
    # set on skipped regions only
    violated_label: str = ""
    violation: float = float('nan')

    @cached_property
    def shapes(self) -> List[np.ndarray]:
        """P_i^j = (E_i^j)^{-1}"""
        return [np.linalg.inv(E) for E in self.ellipsoids]

    def to_dict(self) -> Dict:
        return {
            'index': self.index,
            'seed': self.seed.tolist(),
            'A_R': self.region_A.tolist(),
            'b_R': self.region_b.tolist(),
            'P': [P.tolist() for P in self.shapes],
            'E': [E.tolist() for E in self.ellipsoids],
            'K': [K.tolist() for K in self.gains],
            'Y': [Y.tolist() for Y in self.y_blocks],
            'S': [S.tolist() for S in self.coupling],
            'witness': self.witness.tolist(),
            'objective': self.objective,
            'objective_mode': self.objective_mode.value,
            'status': self.status.value,
            'solve_time': self.solve_time,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CertifiedRegion":
        as_arrays = lambda key: [np.array(v, dtype=float) for v in data.get(key, [])]
        ellipsoids = as_arrays('E')
        if not ellipsoids:
            ellipsoids = [np.linalg.inv(P) for P in as_arrays('P')]
        return cls(
            index=int(data['index']),
            seed=np.array(data['seed'], dtype=float),
            region_A=np.array(data['A_R'], dtype=float),
            region_b=np.array(data['b_R'], dtype=float),
            ellipsoids=ellipsoids,
            gains=[np.atleast_2d(K) for K in as_arrays('K')],
            witness=np.array(data['witness'], dtype=float),
            objective=float(data['objective']),
            objective_mode=ObjectiveMode(data.get('objective_mode', ObjectiveMode.MAXIMIZE_TRACE.value)),
            status=SolveStatus(data.get('status', SolveStatus.OPTIMAL.value)),
            y_blocks=[np.atleast_2d(Y) for Y in as_arrays('Y')],
            coupling=as_arrays('S'),
            solve_time=float(data.get('solve_time', 0.0)),
        )


@dataclass
class CertifiedSetFamily:
    """Union of certified regions synthesized for one model"""
    model_fingerprint: str
    regions: List[CertifiedRegion] = field(default_factory=list)
    settings: Dict = field(default_factory=dict)
    skipped: List[Dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.regions)

    def to_dict(self) -> Dict:
        return {
            'model_fingerprint': self.model_fingerprint,
            'code_version': __version__,
            'settings': self.settings,
            'regions': [region.to_dict() for region in self.regions],
            'skipped': self.skipped,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CertifiedSetFamily":
        return cls(
            model_fingerprint=data['model_fingerprint'],
            regions=[CertifiedRegion.from_dict(r) for r in data.get('regions', [])],
            settings=data.get('settings', {}),
            skipped=data.get('skipped', []),
        )


@dataclass
class ValidationReport:
    """Sampling-based check of one certified region"""
    region_index: int
    n_samples: int
    max_successor_value: float
    max_decrease_violation: float
    max_state_residual: float
    max_input_residual: float
    gain_recovery_error: float
    witness_value: float
    witness_region_residual: float
    passed: bool

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class FilterDecision:
    """Record of one explicit (or pass-through) filter step"""
    step: int
    u_learning: np.ndarray
    u_applied: np.ndarray
    intervened: bool
    set_index: Optional[int] = None
    membership_values: Dict[int, float] = field(default_factory=dict)
    fallback: bool = False

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.u_applied - self.u_learning))

    def to_dict(self) -> Dict:
        return {
            'step': self.step,
            'u_learning': self.u_learning.tolist(),
            'u_applied': self.u_applied.tolist(),
            'intervened': self.intervened,
            'set_index': self.set_index,
            'membership_values': {str(j): v for j, v in self.membership_values.items()},
            'fallback': self.fallback,
        }


@dataclass
class ImplicitDecision:
    """Outcome of one implicit (online SDP) filter step"""
    delta_u: np.ndarray
    u_learning: np.ndarray
    status: SolveStatus
    certified: bool = False
    ellipsoids: List[np.ndarray] = field(default_factory=list)
    gains: List[np.ndarray] = field(default_factory=list)
    residuals: Dict[str, float] = field(default_factory=dict)
    violated_label: str = ""

    @property
    def u_applied(self) -> np.ndarray:
        return self.u_learning + self.delta_u

    def to_dict(self) -> Dict:
        return {
            'delta_u': self.delta_u.tolist(),
            'u_learning': self.u_learning.tolist(),
            'u_applied': self.u_applied.tolist(),
            'status': self.status.value,
            'certified': self.certified,
            'residuals': self.residuals,
            'violated_label': self.violated_label,
        }


@dataclass
class EpisodeStep:
    """One simulated step"""
    k: int
    x: np.ndarray
    u_learning: np.ndarray
    u_applied: np.ndarray
    intervened: bool
    set_index: Optional[int]
    state_residuals: np.ndarray      # per agent, positive = violation
    input_residuals: np.ndarray
    reward: float

    @property
    def max_residual(self) -> float:
        return float(max(np.max(self.state_residuals), np.max(self.input_residuals)))


@dataclass
class EpisodeTrace:
    """Time-indexed record of a closed-loop episode"""
    model_fingerprint: str
    filter_kind: FilterKind
    policy_kind: PolicyKind
    theta_true: List[np.ndarray]
    seed: int
    steps: List[EpisodeStep] = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    final_residuals: Optional[np.ndarray] = None      # state residuals of x_T
    theta_mode: str = "nominal"
    violation_tol: float = 1e-8
    reward_note: str = "quadratic stand-in: -(|x|^2 + |u|^2) - 100 per violating step"

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def final_violated(self) -> bool:
        return self.final_residuals is not None and float(np.max(self.final_residuals)) > self.violation_tol

    @property
    def violations(self) -> int:
        """Violating steps, counting the terminal state x_T as one more"""
        return sum(1 for s in self.steps if s.max_residual > self.violation_tol) + int(self.final_violated)

    @property
    def intervention_rate(self) -> float:
        if not self.steps:
            return 0.0
        return sum(1 for s in self.steps if s.intervened) / len(self.steps)

    def states(self) -> np.ndarray:
        return np.array([s.x for s in self.steps])


@dataclass
class CoverageReport:
    """Monte Carlo estimate of the covered fraction of the state space"""
    M: int
    gamma: float
    n_samples: int
    covered: int
    per_set_counts: Dict[int, int] = field(default_factory=dict)
    partition_id: int = 0

    @property
    def fraction(self) -> float:
        return self.covered / self.n_samples if self.n_samples else 0.0

    @property
    def standard_error(self) -> float:
        p = self.fraction
        return float(np.sqrt(p * (1.0 - p) / self.n_samples)) if self.n_samples else 0.0

    def to_dict(self) -> Dict:
        return {
            'M': self.M,
            'gamma': self.gamma,
            'partition_id': self.partition_id,
            'n_samples': self.n_samples,
            'covered': self.covered,
            'fraction': self.fraction,
            'standard_error': self.standard_error,
            'per_set_counts': {str(j): c for j, c in self.per_set_counts.items()},
        }
