"""
Explicit safety filter over a precomputed certified set family, and the
filter objects shared by the simulator, the CLI and the service.
"""
import abc
import logging
from typing import Dict, Optional, Tuple

import numpy as np

from implicit_filter import implicit_step
from models import (
    CertifiedRegion, CertifiedSetFamily, FilterDecision, FilterKind, ImplicitDecision, MembershipMode,
    SafetyFault, SolveStatus, SolverError, Tolerances,
)
from network_model import NetworkModel, robust_successors, worst_case_values
from synthesis import check_fingerprint

logger = logging.getLogger(__name__)


def local_values(x: np.ndarray, region: CertifiedRegion, model: NetworkModel) -> np.ndarray:
    """x_i^T P_i x_i per agent"""
    return np.array([float(model.agent_state(x, i) @ P @ model.agent_state(x, i))
                     for i, P in enumerate(region.shapes)])


def membership_value(x: np.ndarray, region: CertifiedRegion, model: NetworkModel) -> float:
    """J(x) = (1/N) sum_i x_i^T P_i x_i; x is in the set iff J(x) <= 1/N"""
    return float(np.sum(local_values(x, region, model))) / model.N


def containing_sets(family: CertifiedSetFamily, model: NetworkModel, x: np.ndarray, tol: float = 0.0) -> list:
    """Indices of the sets whose ellipsoid holds x"""
    return [r.index for r in family.regions if np.sum(local_values(x, r, model)) <= 1.0 + tol]


def _inputs_admissible(model: NetworkModel, u: np.ndarray, tol: float) -> bool:
    return all(U.residual(model.agent_input(u, i)) <= tol for i, U in enumerate(model.input_sets))


def _certify(model: NetworkModel, family: CertifiedSetFamily, x: np.ndarray, u_learning: np.ndarray,
             membership: MembershipMode, tol: Tolerances) -> Tuple[Optional[int], Dict[int, float]]:
    """Smallest index of a set holding every corner prediction, with J+ recorded for all sets"""
    if not _inputs_admissible(model, u_learning, tol.linear):
        return None, {}
    successors = robust_successors(model, x, u_learning, tol.vertex_cap)
    values: Dict[int, float] = {}
    chosen = None
    for region in sorted(family.regions, key=lambda r: r.index):
        per_agent = worst_case_values(successors, region.shapes)
        values[region.index] = float(np.sum(per_agent))
        if membership == MembershipMode.GLOBAL_SUM:
            inside = values[region.index] <= 1.0 + tol.membership
        else:
            inside = bool(np.all(per_agent <= 1.0 / model.N + tol.membership))
        if inside and chosen is None:
            chosen = region.index
    return chosen, values


def robust_onestep_certify(model: NetworkModel, family: CertifiedSetFamily, x: np.ndarray, u_learning: np.ndarray,
                           membership: MembershipMode = MembershipMode.GLOBAL_SUM,
                           tolerances: Optional[Tolerances] = None, check: bool = True) -> Optional[int]:
    """Smallest set index holding the prediction at every parameter corner, or None"""
    if check:
        check_fingerprint(family, model)
    index, _ = _certify(model, family, np.asarray(x, dtype=float), np.asarray(u_learning, dtype=float),
                        membership, tolerances or Tolerances())
    return index


def backup_input(region: CertifiedRegion, model: NetworkModel, x: np.ndarray) -> np.ndarray:
    """u_i = K_i x_{N_i} for every agent"""
    return np.concatenate([K @ model.neighborhood_state(x, i) for i, K in enumerate(region.gains)])


def best_backup(model: NetworkModel, family: CertifiedSetFamily, x: np.ndarray, u_learning: np.ndarray,
                tolerances: Optional[Tolerances] = None) -> int:
    """Set holding x whose backup law changes u_learning least (sum of per-agent norms)"""
    tol = tolerances or Tolerances()
    best, best_cost = None, np.inf
    for region in family.regions:
        if np.sum(local_values(x, region, model)) > 1.0 + tol.backup_membership:
            continue
        u_backup = backup_input(region, model, x)
        cost = sum(float(np.linalg.norm(model.agent_input(u_learning, i) - model.agent_input(u_backup, i)))
                   for i in range(model.N))
        if cost < best_cost:
            best, best_cost = region.index, cost
    if best is None:
        raise SafetyFault(f"state lies in none of the {len(family)} certified sets")
    return best


def explicit_step(model: NetworkModel, family: CertifiedSetFamily, x: np.ndarray, u_learning: np.ndarray,
                  k: int = 0, membership: MembershipMode = MembershipMode.GLOBAL_SUM,
                  tolerances: Optional[Tolerances] = None, check: bool = True) -> FilterDecision:
    tol = tolerances or Tolerances()
    if check:
        check_fingerprint(family, model)
    x = np.asarray(x, dtype=float)
    u_learning = np.asarray(u_learning, dtype=float)
    index, values = _certify(model, family, x, u_learning, membership, tol)
    if index is not None:
        return FilterDecision(k, u_learning.copy(), u_learning.copy(), False, index, values)
    b = best_backup(model, family, x, u_learning, tol)
    region = next(r for r in family.regions if r.index == b)
    return FilterDecision(k, u_learning.copy(), backup_input(region, model, x), True, b, values)


class SafetyFilter(abc.ABC):
    """Maps (x, u_learning) to the input actually applied"""

    kind: FilterKind

    def __init__(self, model: NetworkModel, tolerances: Optional[Tolerances] = None):
        self.model = model
        self.tolerances = tolerances or Tolerances()

    @abc.abstractmethod
    def decide(self, x: np.ndarray, u_learning: np.ndarray, k: int = 0) -> FilterDecision:
        raise NotImplementedError

    def admits_initial(self, x: np.ndarray) -> bool:
        """Whether an episode may start at x"""
        return bool(np.all(self.model.state_residuals(x) <= 0.0))


class PassThroughFilter(SafetyFilter):
    """No filtering; used to show what happens without a safety layer"""

    kind = FilterKind.NONE

    def __init__(self, model: NetworkModel, family: Optional[CertifiedSetFamily] = None,
                 tolerances: Optional[Tolerances] = None):
        super().__init__(model, tolerances)
        self.family = family

    def decide(self, x, u_learning, k=0):
        u_learning = np.asarray(u_learning, dtype=float)
        return FilterDecision(k, u_learning.copy(), u_learning.copy(), False)

    def admits_initial(self, x):
        if self.family is None:
            return super().admits_initial(x)
        return bool(containing_sets(self.family, self.model, x))


class ExplicitSafetyFilter(SafetyFilter):
    """Pass-through when a certified set holds the robust prediction, best backup law otherwise"""

    kind = FilterKind.EXPLICIT

    def __init__(self, model: NetworkModel, family: CertifiedSetFamily,
                 membership: MembershipMode = MembershipMode.GLOBAL_SUM, tolerances: Optional[Tolerances] = None):
        super().__init__(model, tolerances)
        check_fingerprint(family, model)
        self.family = family
        self.membership = membership

    def decide(self, x, u_learning, k=0):
        return explicit_step(self.model, self.family, x, u_learning, k, self.membership, self.tolerances, check=False)

    def admits_initial(self, x):
        return bool(containing_sets(self.family, self.model, x))


class ImplicitSafetyFilter(SafetyFilter):
    """Online SDP per step; falls back to the family's backup law when the step has no solution"""

    kind = FilterKind.IMPLICIT

    def __init__(self, model: NetworkModel, family: Optional[CertifiedSetFamily] = None,
                 membership: MembershipMode = MembershipMode.GLOBAL_SUM, tolerances: Optional[Tolerances] = None,
                 solver: Optional[str] = None):
        super().__init__(model, tolerances)
        if family is not None:
            check_fingerprint(family, model)
        self.family = family
        self.membership = membership
        self.solver = solver
        self.last_decision: Optional[ImplicitDecision] = None

    def solve(self, x, u_learning) -> Optional[ImplicitDecision]:
        try:
            self.last_decision = implicit_step(self.model, x, u_learning, self.membership, self.tolerances, self.solver)
        except SolverError as exc:
            logger.warning("Implicit step failed numerically: %s", exc)
            self.last_decision = None
        return self.last_decision

    def decide(self, x, u_learning, k=0):
        x = np.asarray(x, dtype=float)
        u_learning = np.asarray(u_learning, dtype=float)
        decision = self.solve(x, u_learning)
        if decision is not None and decision.status == SolveStatus.OPTIMAL:
            applied = u_learning.copy() if decision.certified and not np.any(decision.delta_u) else decision.u_applied
            return FilterDecision(k, u_learning.copy(), applied, not decision.certified)
        return self._fallback(x, u_learning, k)

    def _fallback(self, x: np.ndarray, u_learning: np.ndarray, k: int) -> FilterDecision:
        if self.family is not None:
            try:
                b = best_backup(self.model, self.family, x, u_learning, self.tolerances)
                region = next(r for r in self.family.regions if r.index == b)
                logger.warning("Step %d: implicit problem unsolved, applying backup law of set %d", k, b)
                return FilterDecision(k, u_learning.copy(), backup_input(region, self.model, x), True, b, fallback=True)
            except SafetyFault:
                pass
        logger.error("Step %d: implicit problem unsolved and no backup available, applying zero input", k)
        return FilterDecision(k, u_learning.copy(), np.zeros(self.model.m), True, None, fallback=True)

    def admits_initial(self, x):
        decision = self.solve(np.asarray(x, dtype=float), np.zeros(self.model.m))
        return decision is not None and decision.status == SolveStatus.OPTIMAL


def make_filter(kind: FilterKind, model: NetworkModel, family: Optional[CertifiedSetFamily] = None,
                membership: MembershipMode = MembershipMode.GLOBAL_SUM,
                tolerances: Optional[Tolerances] = None) -> SafetyFilter:
    if kind == FilterKind.EXPLICIT:
        if family is None:
            raise ValueError("the explicit filter needs a certified set family")
        return ExplicitSafetyFilter(model, family, membership, tolerances)
    if kind == FilterKind.IMPLICIT:
        return ImplicitSafetyFilter(model, family, membership, tolerances)
    return PassThroughFilter(model, family, tolerances)
