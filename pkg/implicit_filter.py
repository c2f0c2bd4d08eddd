"""
Implicit safety filter: one semidefinite program per step that finds the
smallest input correction whose robust one-step prediction lies inside a
structured invariant ellipsoid optimized jointly with it.
"""
import logging
from typing import Optional

import numpy as np

from lmi_builder import (
    LinearConstraint, SdpBuilder, SocConstraint, bmat, halfspaces, point_in_scaled_ellipsoid, solve,
)
from models import ImplicitDecision, MembershipMode, SolveStatus, SolverError, Tolerances
from network_model import NetworkModel, robust_successors, worst_case_values
from synthesis import add_structured_invariance, normalized_rows

logger = logging.getLogger(__name__)


def _implicit_problem(model: NetworkModel, x: np.ndarray, u_learning: np.ndarray, membership: MembershipMode,
                      tolerances: Tolerances, scaled: bool = False):
    builder = SdpBuilder("implicit-step")
    sv = add_structured_invariance(builder, model, tolerances, normalize=scaled)
    du = [builder.variable((model.input_dims[i], 1), role='du', owner=f'agent {i}') for i in range(model.N)]
    budgets = None
    if membership == MembershipMode.GLOBAL_SUM:
        budgets = [builder.variable((1, 1), role='t', owner=f'agent {i}') for i in range(model.N)]
        total = budgets[0].expr()
        for t in budgets[1:]:
            total = total + t.expr()
        builder.add(LinearConstraint(total - 1.0, '<=', label="budget-sum"))

    for i in range(model.N):
        x_N = model.neighborhood_state(x, i)
        u_i = model.agent_input(u_learning, i)
        for v, (A, B) in enumerate(model.vertex_dynamics(i, tolerances.vertex_cap)):
            prediction = (A @ x_N + B @ u_i).reshape(-1, 1) + B @ du[i].expr()
            builder.add(point_in_scaled_ellipsoid(
                prediction, sv.E[i], model.N, None if budgets is None else budgets[i],
                label=f"prediction[{i},{v}]"))
        U = model.input_sets[i]
        H_U, h_U = normalized_rows(U.H, U.h) if scaled else (U.H, U.h)
        builder.add(halfspaces(H_U, du[i], h_U - H_U @ u_i, label=f"input-bound[{i}]"))

    epigraph = builder.variable((1, 1), role='norm', owner='network')
    builder.add(SocConstraint(bmat([[d] for d in du]), epigraph.expr(), label="norm-epigraph"))
    builder.minimize(epigraph.expr() * (1.0 / max(1, model.m) if scaled else 1.0))
    return builder.build(), sv, du


def certificate_admits(model: NetworkModel, shapes, x: np.ndarray, u: np.ndarray, membership: MembershipMode,
                       tolerances: Tolerances) -> bool:
    """Whether input u keeps every corner prediction inside the ellipsoid with inverse shapes `shapes`"""
    values = worst_case_values(robust_successors(model, x, u, tolerances.vertex_cap), shapes)
    if membership == MembershipMode.GLOBAL_SUM:
        inside = float(np.sum(values)) <= 1.0 + tolerances.membership
    else:
        inside = bool(np.all(values <= 1.0 / model.N + tolerances.membership))
    admissible = all(U.residual(model.agent_input(u, i)) <= tolerances.linear
                     for i, U in enumerate(model.input_sets))
    return inside and admissible


def implicit_step(model: NetworkModel, x: np.ndarray, u_learning: np.ndarray,
                  membership: MembershipMode = MembershipMode.GLOBAL_SUM,
                  tolerances: Optional[Tolerances] = None, solver: Optional[str] = None) -> ImplicitDecision:
    """Minimal correction of u_learning; infeasible states are reported, numerical failures raise"""
    tol = tolerances or Tolerances()
    x = np.asarray(x, dtype=float).reshape(-1)
    u_learning = np.asarray(u_learning, dtype=float).reshape(-1)
    if x.size != model.n or u_learning.size != model.m or not np.all(np.isfinite(x)):
        raise ValueError(f"expected finite x in R^{model.n} and u in R^{model.m}")

    result, sv, du = None, None, None
    for scaled in (False, True):
        problem, sv, du = _implicit_problem(model, x, u_learning, membership, tol, scaled)
        result = solve(problem, tol, solver)
        if result.status != SolveStatus.NUMERICAL_FAILURE:
            break
        logger.info("Implicit step: numerical failure (%s), retrying with normalized rows", result.message)

    if result.status == SolveStatus.NUMERICAL_FAILURE:
        raise SolverError(f"implicit step failed: {result.message}", label=result.worst_label,
                          residual=result.max_psd_violation)
    if result.status == SolveStatus.INFEASIBLE:
        logger.debug("Implicit step infeasible at x=%s, most violated %r", x.tolist(), result.worst_label)
        residuals = {} if np.isnan(result.worst_residual) else {'violation': result.worst_residual}
        return ImplicitDecision(np.zeros(model.m), u_learning.copy(), SolveStatus.INFEASIBLE, False,
                                residuals=residuals, violated_label=result.worst_label)

    values = sv.values(result)
    shapes = [np.linalg.inv(E) for E in values['E']]
    if certificate_admits(model, shapes, x, u_learning, membership, tol):
        delta_u = np.zeros(model.m)
    else:
        delta_u = np.concatenate([result.value(d).reshape(-1) for d in du])
    decision = ImplicitDecision(
        delta_u=delta_u, u_learning=u_learning.copy(), status=SolveStatus.OPTIMAL,
        ellipsoids=values['E'], gains=values['K'],
        residuals={'psd': result.max_psd_violation, 'linear': result.max_linear_violation,
                   'objective': result.objective},
    )
    decision.certified = is_certified(decision, tol.certification)
    return decision


def is_certified(decision: ImplicitDecision, tol: float = 1e-6) -> bool:
    """||delta_u|| <= tol, closed comparison"""
    return bool(np.linalg.norm(decision.delta_u) <= tol)
