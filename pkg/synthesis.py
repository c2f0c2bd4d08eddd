"""
Offline synthesis of structured robust invariant ellipsoids.

For every region of a partition one semidefinite program is solved. Its
variables are the per-agent shape matrices E_i, the gain numerators Y_i and
the coupling slacks S_{N_i}, which are block diagonal over the closed
neighborhood. A shared decision point x ties the ellipsoid to the region.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy.linalg import block_diag as dense_block_diag
from tqdm import tqdm

from lmi_builder import (
    AffineExpr, MatrixVar, SdpBuilder, block_diag, coupling_block, ellipsoid_in_halfspace, halfspaces,
    input_row_containment, invariance_block, point_in_scaled_ellipsoid, solve, strict_pd, trace,
)
from models import (
    CertifiedRegion, CertifiedSetFamily, FingerprintMismatchError, InfeasibleError, ObjectiveMode,
    SolveStatus, SolverError, Tolerances, ValidationReport,
)
from network_model import NetworkModel, eval_dynamics
from partition import Partition, Region

logger = logging.getLogger(__name__)


@dataclass
class StructuredVariables:
    """Decision variables of the structured invariance conditions"""
    model: NetworkModel
    E: List[MatrixVar]
    Y: List[MatrixVar]
    S: List[List[MatrixVar]]       # S[i][k]: block of member k of the closed neighborhood of i

    def E_N(self, i: int) -> AffineExpr:
        return block_diag([self.E[j] for j in self.model.neighborhoods[i].members])

    def E_bar(self, i: int) -> AffineExpr:
        """E_i placed at agent i's own block of the neighborhood layout"""
        hood = self.model.neighborhoods[i]
        pick = np.zeros((self.model.state_dims[i], hood.dim))
        pick[:, hood.own_block] = np.eye(self.model.state_dims[i])
        return pick.T @ self.E[i].expr() @ pick

    def S_N(self, i: int) -> AffineExpr:
        return block_diag(self.S[i])

    def values(self, result) -> Dict[str, list]:
        E = [_sym(result.value(v)) for v in self.E]
        Y = [result.value(v) for v in self.Y]
        S = [dense_block_diag(*[_sym(result.value(v)) for v in blocks]) for blocks in self.S]
        E_N = [dense_block_diag(*[E[j] for j in hood.members]) for hood in self.model.neighborhoods]
        K = [np.linalg.solve(E_N[i], Y[i].T).T for i in range(self.model.N)]
        return {'E': E, 'Y': Y, 'S': S, 'K': K, 'E_N': E_N}


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def normalized_rows(H: np.ndarray, h: np.ndarray):
    """(H, h) with every row divided by its Euclidean norm; the halfspaces are unchanged"""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    norms = np.linalg.norm(H, axis=1)
    norms[norms == 0.0] = 1.0
    return H / norms[:, None], np.asarray(h, dtype=float).reshape(-1) / norms


def add_structured_invariance(builder: SdpBuilder, model: NetworkModel, tolerances: Tolerances,
                              normalize: bool = False) -> StructuredVariables:
    """Declare E, Y, S for every agent and add strictness, invariance, coupling and containment

    With `normalize`, state and input rows are scaled to unit norm before the
    containment blocks are built.
    """
    E = [builder.variable((model.state_dims[i],) * 2, symmetric=True, role='E', owner=f'agent {i}')
         for i in range(model.N)]
    Y = [builder.variable((model.input_dims[i], model.neighborhoods[i].dim), role='Y', owner=f'agent {i}')
         for i in range(model.N)]
    S = [[builder.variable((model.state_dims[j],) * 2, symmetric=True, role='S', owner=f'agent {i}/member {j}')
          for j in model.neighborhoods[i].members] for i in range(model.N)]
    sv = StructuredVariables(model, E, Y, S)
    shrink = 1.0 - tolerances.margin

    for i in range(model.N):
        E_N = sv.E_N(i)
        E_bar = sv.E_bar(i) * shrink
        S_N = sv.S_N(i)
        builder.add(strict_pd(E[i], tolerances.strict_pd, label=f"strict-pd[{i}]"))
        for v, theta in enumerate(model.vertices(i, tolerances.vertex_cap)):
            A_i, B_i = eval_dynamics(model.dynamics[i], theta)
            builder.add(invariance_block(E[i], E_N, E_bar, S_N, Y[i], A_i, B_i, label=f"invariance[{i},{v}]"))
        builder.add(coupling_block(i, model.neighborhoods, {r: sv.S_N(r) for r in range(model.N)},
                                   label=f"coupling[{i}]"))
        X, U = model.state_sets[i], model.input_sets[i]
        H_X, h_X = normalized_rows(X.H, X.h) if normalize else (X.H, X.h)
        H_U, h_U = normalized_rows(U.H, U.h) if normalize else (U.H, U.h)
        for l in range(H_X.shape[0]):
            builder.add(ellipsoid_in_halfspace(E_N, H_X[l], h_X[l] * shrink, label=f"state[{i},{l}]"))
        for e in range(H_U.shape[0]):
            builder.add(input_row_containment(Y[i], E_N, H_U[e], h_U[e] * shrink, label=f"input[{i},{e}]"))
    return sv


def _region_problem(model: NetworkModel, region: Region, objective_mode: ObjectiveMode,
                    tolerances: Tolerances, scaled: bool = False):
    builder = SdpBuilder(f"region-{region.index}")
    sv = add_structured_invariance(builder, model, tolerances, normalize=scaled)
    x = builder.variable((model.n, 1), role='x', owner=f'region {region.index}')
    point = x.expr()
    for i in range(model.N):
        pick = np.eye(model.n)[model.agent_slice(i)]
        builder.add(point_in_scaled_ellipsoid(pick @ point, sv.E[i], model.N, label=f"witness[{i}]"))
    A, b = normalized_rows(region.A, region.b) if scaled else (region.A, region.b)
    builder.add(halfspaces(A, point, b, label=f"region[{region.index}]"))
    total = trace(sv.E[0])
    for E_i in sv.E[1:]:
        total = total + trace(E_i)
    if scaled:
        total = total * (1.0 / model.n)
    if objective_mode == ObjectiveMode.MAXIMIZE_TRACE:
        builder.maximize(total)
    else:
        builder.minimize(total)
    return builder.build(), sv, x


def synthesize_region(model: NetworkModel, region: Region,
                      objective_mode: ObjectiveMode = ObjectiveMode.MAXIMIZE_TRACE,
                      tolerances: Optional[Tolerances] = None, solver: Optional[str] = None) -> CertifiedRegion:
    """Solve the region SDP; infeasible or failed regions come back with that status and no matrices

    A numerical failure is retried once with unit-norm constraint rows and
    the objective divided by the state dimension.
    """
    tol = tolerances or Tolerances()
    result, sv, x = None, None, None
    for attempt, scaled in enumerate((False, True)):
        problem, sv, x = _region_problem(model, region, objective_mode, tol, scaled)
        result = solve(problem, tol, solver)
        if result.status != SolveStatus.NUMERICAL_FAILURE:
            break
        logger.info("Region %d: numerical failure (%s), attempt %d", region.index, result.message, attempt + 1)

    if not result.optimal:
        logger.warning("Region %d skipped: %s at %r (%.3g)", region.index, result.status.value,
                       result.worst_label, result.worst_residual)
        return CertifiedRegion(region.index, region.seed, region.A, region.b, [], [], np.zeros(0),
                               float('nan'), objective_mode, result.status, solve_time=result.solve_time,
                               violated_label=result.worst_label, violation=result.worst_residual)

    values = sv.values(result)
    objective = float(sum(np.trace(E) for E in values['E']))
    logger.debug("Region %d solved by %s in %.2fs, trace %.4g", region.index, result.solver,
                 result.solve_time, objective)
    return CertifiedRegion(
        index=region.index, seed=region.seed, region_A=region.A, region_b=region.b,
        ellipsoids=values['E'], gains=values['K'], witness=result.value(x).reshape(-1),
        objective=objective, objective_mode=objective_mode, status=SolveStatus.OPTIMAL,
        y_blocks=values['Y'], coupling=values['S'], solve_time=result.solve_time,
    )


def _synthesize_task(model, region, objective_mode, tolerances, solver):
    return synthesize_region(model, region, objective_mode, tolerances, solver)


def synthesize_family(model: NetworkModel, partition: Partition,
                      objective_mode: ObjectiveMode = ObjectiveMode.MAXIMIZE_TRACE,
                      tolerances: Optional[Tolerances] = None, workers: int = 1,
                      progress: bool = True, solver: Optional[str] = None) -> CertifiedSetFamily:
    """One certified region per feasible cell, ordered by region index"""
    tol = tolerances or Tolerances()
    outcomes: Dict[int, CertifiedRegion] = {}
    with tqdm(total=partition.M, desc="Synthesizing regions", disable=not progress) as bar:
        if workers > 1 and partition.M > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_synthesize_task, model, region, objective_mode, tol, solver)
                           for region in partition.regions]
                for future in as_completed(futures):
                    outcome = future.result()
                    outcomes[outcome.index] = outcome
                    bar.update(1)
        else:
            for region in partition.regions:
                outcomes[region.index] = synthesize_region(model, region, objective_mode, tol, solver)
                bar.update(1)

    regions, skipped = [], []
    for index in sorted(outcomes):
        outcome = outcomes[index]
        if outcome.status == SolveStatus.OPTIMAL:
            regions.append(outcome)
        else:
            skipped.append({'index': index, 'status': outcome.status.value, 'seed': outcome.seed.tolist(),
                            'label': outcome.violated_label,
                            'violation': None if np.isnan(outcome.violation) else outcome.violation})
    if not regions:
        if any(s['status'] == SolveStatus.INFEASIBLE.value for s in skipped):
            raise InfeasibleError(f"all {partition.M} regions are infeasible", label="family")
        raise SolverError(f"all {partition.M} regions failed numerically", label="family")
    if skipped:
        logger.warning("%d of %d regions skipped: %s", len(skipped), partition.M, [s['index'] for s in skipped])

    settings = {
        'objective_mode': objective_mode.value,
        'M': partition.M,
        'rng_seed': partition.rng_seed,
        'tolerances': tol.to_dict(),
    }
    return CertifiedSetFamily(model.fingerprint(), regions, settings, skipped)


def lyapunov_value(region: CertifiedRegion, model: NetworkModel, x: np.ndarray) -> float:
    """sum_i x_i^T P_i x_i"""
    total = 0.0
    for i, E in enumerate(region.ellipsoids):
        x_i = model.agent_state(x, i)
        total += float(x_i @ np.linalg.solve(E, x_i))
    return total


def boundary_samples(region: CertifiedRegion, model: NetworkModel, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Points with sum_i x_i^T P_i x_i = 1, uniform in direction after whitening"""
    roots = dense_block_diag(*[np.linalg.cholesky(E) for E in region.ellipsoids])
    z = rng.standard_normal((count, model.n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z @ roots.T


def validate_certified(region: CertifiedRegion, model: NetworkModel, n_samples: int = 1000,
                       rng: Optional[np.random.Generator] = None,
                       tolerances: Optional[Tolerances] = None) -> ValidationReport:
    """Check decrease, containment and gain recovery on boundary samples at every parameter vertex"""
    tol = tolerances or Tolerances()
    rng = rng or np.random.default_rng(0)
    points = boundary_samples(region, model, n_samples, rng)
    P = [np.linalg.inv(E) for E in region.ellipsoids]

    successor = np.zeros(n_samples)
    state_residual = -np.inf
    input_residual = -np.inf
    gain_error = 0.0
    for i in range(model.N):
        x_N = points[:, model.neighborhood_index(i)]
        K = region.gains[i]
        worst = np.zeros(n_samples)
        for theta in model.vertices(i, tol.vertex_cap):
            A, B = eval_dynamics(model.dynamics[i], theta)
            nxt = x_N @ (A + B @ K).T
            worst = np.maximum(worst, np.einsum('sa,ab,sb->s', nxt, P[i], nxt))
        successor += worst

        X, U = model.state_sets[i], model.input_sets[i]
        E_N = dense_block_diag(*[region.ellipsoids[j] for j in model.neighborhoods[i].members])
        support_state = np.sqrt(np.einsum('la,ab,lb->l', X.H, E_N, X.H)) - X.h
        support_input = np.sqrt(np.einsum('la,ab,lb->l', U.H @ K, E_N, U.H @ K)) - U.h
        sampled_state = np.max(x_N @ X.H.T - X.h)
        sampled_input = np.max(x_N @ (U.H @ K).T - U.h)
        state_residual = max(state_residual, float(np.max(support_state)), float(sampled_state))
        input_residual = max(input_residual, float(np.max(support_input)), float(sampled_input))
        if region.y_blocks:
            gain_error = max(gain_error, float(np.max(np.abs(region.y_blocks[i] - K @ E_N))))

    max_successor = float(np.max(successor)) if n_samples else 0.0
    witness_value = lyapunov_value(region, model, region.witness)
    witness_residual = float(np.max(region.region_A @ region.witness - region.region_b))
    y_scale = max([1.0] + [float(np.max(np.abs(Y))) for Y in region.y_blocks])
    passed = (
        max_successor <= 1.0 + tol.validation
        and state_residual <= tol.linear
        and input_residual <= tol.linear
        and gain_error <= 1e-8 * y_scale
        and witness_value <= 1.0 + tol.validation
        and witness_residual <= tol.validation
    )
    report = ValidationReport(region.index, n_samples, max_successor, max_successor - 1.0, state_residual,
                              input_residual, gain_error, witness_value, witness_residual, bool(passed))
    if not passed:
        logger.warning("Region %d failed validation: %s", region.index, report.to_dict())
    return report


def save_family(family: CertifiedSetFamily, path: str):
    with open(path, 'w') as handle:
        json.dump(family.to_dict(), handle, indent=2, sort_keys=True)


def load_family(path: str, model: Optional[NetworkModel] = None) -> CertifiedSetFamily:
    with open(path) as handle:
        family = CertifiedSetFamily.from_dict(json.load(handle))
    if model is not None:
        check_fingerprint(family, model)
    return family


def check_fingerprint(family: CertifiedSetFamily, model: NetworkModel):
    if family.model_fingerprint != model.fingerprint():
        raise FingerprintMismatchError(
            f"family was synthesized for model {family.model_fingerprint[:12]}, "
            f"current model is {model.fingerprint()[:12]}"
        )
