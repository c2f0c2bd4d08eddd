"""
Closed-loop episodes, coverage estimation and filter comparison
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from analytics import intervention_statistics
from explicit_filter import SafetyFilter, containing_sets, explicit_step
from implicit_filter import implicit_step
from models import (
    CertifiedSetFamily, ConfigError, CoverageReport, EpisodeStep, EpisodeTrace, InitialStateMode, MembershipMode,
    ObjectiveMode, PolicyKind, SafetyFault, SafetyFrameworkError, SolveStatus, ThetaMode, Tolerances,
)
from network_model import (
    NetworkModel, PolytopicSet, coordinate_bounds, eval_dynamics, global_state_polytope, sample_theta_vertex,
    sampling_mask, step, with_gamma,
)
from partition import partition_model, sample_uniform
from synthesis import check_fingerprint, synthesize_family

logger = logging.getLogger(__name__)

VIOLATION_PENALTY = 100.0
INITIAL_STATE_DRAWS = 10_000


def derive_seed(*keys: int) -> int:
    """Independent stream seed for a (master, index, ...) tuple"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class PolicyStub:
    """Scripted learning input"""
    kind: PolicyKind
    seed: int = 0
    noise: float = 0.1
    scale: float = 1.0                   # > 1 lets random-in-U and adversarial-outward leave U
    position_gain: float = 1.0
    velocity_gain: float = 1.0
    target: Optional[np.ndarray] = None
    _rng: np.random.Generator = field(init=False, repr=False, default=None)
    _boxes: list = field(init=False, repr=False, default_factory=list)
    _model: Optional[NetworkModel] = field(init=False, repr=False, default=None)

    def bind(self, model: NetworkModel, seed: Optional[int] = None) -> "PolicyStub":
        self._model = model
        self._rng = np.random.default_rng(self.seed if seed is None else seed)
        self._boxes = [coordinate_bounds(U) for U in model.input_sets]
        return self

    def __call__(self, x: np.ndarray, k: int = 0) -> np.ndarray:
        model = self._model
        if model is None:
            raise RuntimeError("policy is not bound to a model")
        parts = []
        for i in range(model.N):
            x_i = model.agent_state(x, i)
            lower, upper = self._boxes[i]
            if self.kind == PolicyKind.ZERO:
                u_i = np.zeros(model.input_dims[i])
            elif self.kind == PolicyKind.RANDOM_IN_U:
                u_i = self._random_in(model.input_sets[i], lower, upper)
            elif self.kind == PolicyKind.ADVERSARIAL_OUTWARD:
                direction = np.where(model.dynamics[i].B0.T @ x_i >= 0.0, 1.0, -1.0)
                u_i = self.scale * np.maximum(np.abs(lower), np.abs(upper)) * direction
            else:
                u_i = self._regulate(i, x_i) + self.noise * self._rng.standard_normal(model.input_dims[i])
            parts.append(u_i)
        return np.concatenate(parts)

    def _random_in(self, U: PolytopicSet, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        for _ in range(1000):
            u = self.scale * self._rng.uniform(lower, upper)
            if U.contains(u / self.scale):
                return u
        return np.zeros(U.dim)

    def _regulate(self, i: int, x_i: np.ndarray) -> np.ndarray:
        model = self._model
        mask = model.position_mask[model.agent_slice(i)]
        error = x_i - (np.zeros_like(x_i) if self.target is None else model.agent_state(self.target, i))
        weights = np.where(mask, self.position_gain, self.velocity_gain)
        return -np.full(model.input_dims[i], float(weights @ error))


@dataclass
class ThetaSchedule:
    """True parameter used by the simulator at each step"""
    mode: ThetaMode = ThetaMode.NOMINAL
    fixed: Optional[List[np.ndarray]] = None

    def thetas(self, model: NetworkModel, rng: np.random.Generator, cap: int) -> List[np.ndarray]:
        if self.mode == ThetaMode.RANDOM_VERTEX:
            return sample_theta_vertex(model, rng, cap)
        if self.mode == ThetaMode.FIXED:
            if self.fixed is None or len(self.fixed) != model.N:
                raise ConfigError("fixed parameter schedule needs one parameter vector per agent")
            return self.fixed
        return model.theta_nominal()

    def validate(self, model: NetworkModel):
        if self.mode == ThetaMode.FIXED:
            for i, theta in enumerate(self.thetas(model, None, 0)):
                eval_dynamics(model.dynamics[i], theta)


def sample_initial_state(model: NetworkModel, filt: SafetyFilter, rng: np.random.Generator,
                         budget: int = INITIAL_STATE_DRAWS) -> np.ndarray:
    """Rejection sample the constrained state space until the filter admits the state"""
    polytope = global_state_polytope(model)
    mask = sampling_mask(model)
    box = coordinate_bounds(polytope, mask)
    for _ in range(budget):
        x = sample_uniform(polytope, 1, rng, mask, box=box)[0]
        if filt.admits_initial(x):
            return x
    raise SafetyFault(f"no admissible initial state found in {budget} draws")


def stand_in_reward(x: np.ndarray, u: np.ndarray, violated: bool) -> float:
    return -float(x @ x + u @ u) - (VIOLATION_PENALTY if violated else 0.0)


def run_episode(model: NetworkModel, filt: SafetyFilter, policy: PolicyStub, T: int,
                theta: Optional[ThetaSchedule] = None, seed: int = 0,
                x0_mode: InitialStateMode = InitialStateMode.SAMPLE_IN_UNION,
                x0: Optional[np.ndarray] = None) -> EpisodeTrace:
    """Simulate k = 0..T-1 with the filter between policy and plant"""
    if T < 1:
        raise ConfigError(f"horizon must be at least 1, got {T}")
    theta = theta or ThetaSchedule()
    theta.validate(model)
    rng = np.random.default_rng(seed)
    policy.bind(model, derive_seed(seed, 1))
    tol = filt.tolerances

    if x0_mode == InitialStateMode.GIVEN_POINT:
        if x0 is None:
            raise ConfigError("given-point initial state needs x0")
        x = np.asarray(x0, dtype=float).copy()
    else:
        x = sample_initial_state(model, filt, rng)

    trace = EpisodeTrace(model.fingerprint(), filt.kind, policy.kind,
                         model.theta_nominal() if theta.mode != ThetaMode.FIXED else list(theta.fixed),
                         seed, theta_mode=theta.mode.value, violation_tol=tol.linear)
    for k in range(T):
        u_learning = policy(x, k)
        decision = filt.decide(x, u_learning, k)
        u = decision.u_applied
        state_res = model.state_residuals(x)
        input_res = model.input_residuals(u)
        violated = max(np.max(state_res), np.max(input_res)) > tol.linear
        trace.steps.append(EpisodeStep(k, x.copy(), u_learning, u, decision.intervened, decision.set_index,
                                       state_res, input_res, stand_in_reward(x, u, violated)))
        x = step(model, x, u, theta.thetas(model, rng, tol.vertex_cap))
    trace.final_state = x
    trace.final_residuals = model.state_residuals(x)
    logger.debug("Episode seed %d: %d steps, %d violations, intervention rate %.3f",
                 seed, T, trace.violations, trace.intervention_rate)
    return trace


def _episode_task(args):
    return run_episode(*args)


def run_episodes(model: NetworkModel, filt: SafetyFilter, policy: PolicyStub, T: int, episodes: int,
                 master_seed: int = 0, theta: Optional[ThetaSchedule] = None, workers: int = 1,
                 progress: bool = False) -> List[EpisodeTrace]:
    """Independent episodes, each seeded from (master seed, episode index)"""
    if episodes < 1:
        raise ConfigError(f"need at least one episode, got {episodes}")
    jobs = []
    for e in range(episodes):
        episode_policy = PolicyStub(policy.kind, derive_seed(master_seed, e, 2), policy.noise, policy.scale,
                                    policy.position_gain, policy.velocity_gain, policy.target)
        jobs.append((model, filt, episode_policy, T, theta, derive_seed(master_seed, e)))
    if workers > 1 and episodes > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(tqdm(pool.map(_episode_task, jobs), total=episodes, desc="Episodes", disable=not progress))
    else:
        traces = [_episode_task(job) for job in tqdm(jobs, desc="Episodes", disable=not progress)]
    return traces


def lyapunov_matrix(family: CertifiedSetFamily, model: NetworkModel, points: np.ndarray) -> np.ndarray:
    """V^j(x) for every sample (rows) and set (columns)"""
    out = np.zeros((points.shape[0], len(family)))
    for col, region in enumerate(family.regions):
        for i, P in enumerate(region.shapes):
            x_i = points[:, model.agent_slice(i)]
            out[:, col] += np.einsum('sa,ab,sb->s', x_i, P, x_i)
    return out


def coverage_fraction(family: CertifiedSetFamily, model: NetworkModel, n_samples: int, rng: np.random.Generator,
                      polytope: Optional[PolytopicSet] = None, mask: Optional[np.ndarray] = None,
                      partition_id: int = 0) -> CoverageReport:
    """Monte Carlo share of the constrained state space covered by the union of the sets"""
    if n_samples < 1:
        raise ConfigError(f"need at least one coverage sample, got {n_samples}")
    polytope = polytope or global_state_polytope(model)
    mask = sampling_mask(model) if mask is None else np.asarray(mask, dtype=bool)
    points = sample_uniform(polytope, n_samples, rng, mask, budget=max(200_000, 100 * n_samples))
    M = int(family.settings.get('M', len(family))) if family.settings else len(family)
    if not family.regions:
        return CoverageReport(M, model.gamma, n_samples, 0, {}, partition_id)
    inside = lyapunov_matrix(family, model, points) <= 1.0
    per_set = {region.index: int(np.sum(inside[:, c])) for c, region in enumerate(family.regions)}
    return CoverageReport(M, model.gamma, n_samples, int(np.sum(np.any(inside, axis=1))), per_set, partition_id)


def coverage_sweep(model: NetworkModel, M_list: Sequence[int], gamma_list: Sequence[float],
                   partitions_per_cell: int, master_seed: int = 0, n_samples: int = 10_000,
                   objective_mode: ObjectiveMode = ObjectiveMode.MAXIMIZE_TRACE, subspace: str = "position",
                   tolerances: Optional[Tolerances] = None, workers: int = 1, progress: bool = True) -> pd.DataFrame:
    """Long-form table (M, gamma, partition_id, fraction, ...) over random partitions.

    Partitions and coverage samples depend on (master seed, M, partition id)
    only, so every gamma is evaluated on the same partitions and points.
    """
    if not M_list or not gamma_list or partitions_per_cell < 1:
        raise ConfigError("coverage sweep needs nonempty M and gamma lists and at least one partition per cell")
    rows = []
    cells = [(M, g) for g in gamma_list for M in M_list]
    for M, gamma in tqdm(cells, desc="Coverage cells", disable=not progress):
        cell_model = with_gamma(model, gamma)
        for p in range(partitions_per_cell):
            partition = partition_model(cell_model, M, derive_seed(master_seed, M, p), subspace)
            try:
                family = synthesize_family(cell_model, partition, objective_mode, tolerances, workers, progress=False)
            except SafetyFrameworkError as exc:
                logger.warning("M=%d gamma=%.3f partition %d: no certified sets (%s)", M, gamma, p, exc)
                family = CertifiedSetFamily(cell_model.fingerprint(), [], {'M': M})
            report = coverage_fraction(family, cell_model, n_samples,
                                       np.random.default_rng(derive_seed(master_seed, M, p, 7)), partition_id=p)
            rows.append({
                'M': M, 'gamma': gamma, 'partition_id': p, 'fraction': report.fraction,
                'standard_error': report.standard_error, 'n_samples': n_samples, 'n_sets': len(family),
            })
    return pd.DataFrame(rows, columns=['M', 'gamma', 'partition_id', 'fraction', 'standard_error',
                                       'n_samples', 'n_sets'])


def summarize_sweep(table: pd.DataFrame) -> pd.DataFrame:
    """Mean fraction per (M, gamma) with the standard error across partitions"""
    grouped = table.groupby(['M', 'gamma'])['fraction']
    summary = grouped.agg(['mean', 'std', 'count']).reset_index()
    summary['sem'] = summary['std'].fillna(0.0) / np.sqrt(summary['count'])
    return summary


def sample_pair(model: NetworkModel, family: CertifiedSetFamily, rng: np.random.Generator,
                input_scale: float, box, input_boxes) -> tuple:
    polytope = global_state_polytope(model)
    mask = sampling_mask(model)
    for _ in range(INITIAL_STATE_DRAWS):
        x = sample_uniform(polytope, 1, rng, mask, box=box)[0]
        if containing_sets(family, model, x):
            break
    else:
        raise SafetyFault("could not sample a state inside the certified union")
    u = np.concatenate([input_scale * rng.uniform(lo, hi) for lo, hi in input_boxes])
    return x, u


def compare_filters(model: NetworkModel, family: CertifiedSetFamily, n_pairs: int, rng: np.random.Generator,
                    membership: MembershipMode = MembershipMode.GLOBAL_SUM, tolerances: Optional[Tolerances] = None,
                    input_scale: float = 1.0, progress: bool = False) -> Dict:
    """Certification rates and intervention sizes of both filters on the same (x, u_learning) pairs"""
    if n_pairs < 1:
        raise ConfigError(f"need at least one pair to compare, got {n_pairs}")
    tol = tolerances or Tolerances()
    check_fingerprint(family, model)
    box = coordinate_bounds(global_state_polytope(model), sampling_mask(model))
    input_boxes = [coordinate_bounds(U) for U in model.input_sets]

    explicit_certified = implicit_certified = implicit_infeasible = 0
    injection_failures = []
    explicit_magnitudes, implicit_magnitudes = [], []
    for p in tqdm(range(n_pairs), desc="Comparing filters", disable=not progress):
        x, u_learning = sample_pair(model, family, rng, input_scale, box, input_boxes)
        explicit = explicit_step(model, family, x, u_learning, p, membership, tol, check=False)
        implicit = implicit_step(model, x, u_learning, membership, tol)
        explicit_magnitudes.append(explicit.magnitude)
        if not explicit.intervened:
            explicit_certified += 1
        if implicit.status == SolveStatus.OPTIMAL:
            implicit_magnitudes.append(float(np.linalg.norm(implicit.delta_u)))
            implicit_certified += int(implicit.certified)
        else:
            implicit_infeasible += 1
        if not explicit.intervened and not implicit.certified:
            injection_failures.append({'pair': p, 'x': x.tolist(), 'u_learning': u_learning.tolist(),
                                       'delta_u_norm': float(np.linalg.norm(implicit.delta_u))})
    if injection_failures:
        logger.warning("%d explicitly certified pairs were not certified by the implicit filter",
                       len(injection_failures))
    return {
        'n_pairs': n_pairs,
        'membership': membership.value,
        'explicit_certification_rate': explicit_certified / n_pairs,
        'implicit_certification_rate': implicit_certified / n_pairs,
        'implicit_infeasible': implicit_infeasible,
        'implicit_contains_explicit': not injection_failures,
        'injection_failures': injection_failures,
        'explicit_interventions': intervention_statistics(explicit_magnitudes),
        'implicit_interventions': intervention_statistics(implicit_magnitudes),
    }


def episode_trace_to_frame(trace: EpisodeTrace, model: NetworkModel) -> pd.DataFrame:
    """One row per (step, agent)"""
    rows = []
    for s in trace.steps:
        for i in range(model.N):
            row = {'k': s.k, 'agent': i}
            for c, value in enumerate(model.agent_state(s.x, i)):
                row[f'x_{c}'] = value
            for c, value in enumerate(model.agent_input(s.u_learning, i)):
                row[f'u_learning_{c}'] = value
            for c, value in enumerate(model.agent_input(s.u_applied, i)):
                row[f'u_applied_{c}'] = value
            row.update({
                'intervened': s.intervened,
                'set_index': -1 if s.set_index is None else s.set_index,
                'state_residual': float(s.state_residuals[i]),
                'input_residual': float(s.input_residuals[i]),
                'max_residual': s.max_residual,
                'reward': s.reward,
            })
            rows.append(row)
    return pd.DataFrame(rows)


def episode_trace_to_csv(trace: EpisodeTrace, model: NetworkModel, path: str):
    episode_trace_to_frame(trace, model).to_csv(path, index=False)
