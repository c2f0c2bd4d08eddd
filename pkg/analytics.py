"""
Analytics for episode traces, filter comparisons and certified families
Provides the numbers behind the CLI summaries and the service endpoints
"""
from typing import Dict, List, Sequence

import numpy as np

from models import CertifiedSetFamily, EpisodeTrace


def intervention_statistics(magnitudes: Sequence[float]) -> Dict:
    """Distribution summary of ||u - u_learning|| values"""
    values = np.asarray(list(magnitudes), dtype=float)
    if values.size == 0:
        return {'count': 0, 'mean': 0.0, 'std': 0.0, 'median': 0.0, 'p90': 0.0, 'p99': 0.0, 'max': 0.0,
                'nonzero': 0}
    return {
        'count': int(values.size),
        'mean': float(np.mean(values)),
        'std': float(np.std(values)),
        'median': float(np.median(values)),
        'p90': float(np.percentile(values, 90)),
        'p99': float(np.percentile(values, 99)),
        'max': float(np.max(values)),
        'nonzero': int(np.count_nonzero(values)),
    }


def summarize_episode(trace: EpisodeTrace) -> Dict:
    """Violation count, intervention rate and reward of one episode"""
    steps = trace.steps
    magnitudes = [float(np.linalg.norm(s.u_applied - s.u_learning)) for s in steps]
    state_res = [float(np.max(s.state_residuals)) for s in steps]
    input_res = [float(np.max(s.input_residuals)) for s in steps]

    # Sets used while filtering
    set_usage: Dict[str, int] = {}
    for s in steps:
        if s.set_index is not None:
            set_usage[str(s.set_index)] = set_usage.get(str(s.set_index), 0) + 1

    return {
        'seed': trace.seed,
        'filter': trace.filter_kind.value,
        'policy': trace.policy_kind.value,
        'theta_mode': trace.theta_mode,
        'steps': len(steps),
        'violations': trace.violations,
        'intervention_rate': trace.intervention_rate,
        'mean_intervention': float(np.mean(magnitudes)) if magnitudes else 0.0,
        'max_intervention': float(np.max(magnitudes)) if magnitudes else 0.0,
        'cumulative_reward': float(sum(s.reward for s in steps)),
        'max_state_residual': max(state_res) if state_res else 0.0,
        'max_input_residual': max(input_res) if input_res else 0.0,
        'set_usage': set_usage,
        'reward_note': trace.reward_note,
    }


def summarize_episodes(traces: List[EpisodeTrace]) -> Dict:
    """Aggregate over episodes plus one row per episode"""
    rows = [summarize_episode(t) for t in traces]
    if not rows:
        return {'episodes': 0, 'violations': 0, 'violating_episodes': 0, 'rows': []}
    rates = [r['intervention_rate'] for r in rows]
    rewards = [r['cumulative_reward'] for r in rows]
    return {
        'episodes': len(rows),
        'total_steps': int(sum(r['steps'] for r in rows)),
        'violations': int(sum(r['violations'] for r in rows)),
        'violating_episodes': int(sum(1 for r in rows if r['violations'] > 0)),
        'mean_intervention_rate': float(np.mean(rates)),
        'mean_cumulative_reward': float(np.mean(rewards)),
        'max_state_residual': float(max(r['max_state_residual'] for r in rows)),
        'max_input_residual': float(max(r['max_input_residual'] for r in rows)),
        'rows': rows,
    }


def family_statistics(family: CertifiedSetFamily) -> Dict:
    """Per-region size proxies and gain norms"""
    regions = []
    for region in family.regions:
        log_volume = float(sum(np.linalg.slogdet(E)[1] for E in region.ellipsoids))
        regions.append({
            'index': region.index,
            'trace': float(sum(np.trace(E) for E in region.ellipsoids)),
            'log_det': log_volume,
            'max_gain_norm': float(max(np.linalg.norm(K, 2) for K in region.gains)),
            'objective': region.objective,
            'objective_mode': region.objective_mode.value,
            'solve_time': region.solve_time,
        })
    traces = [r['trace'] for r in regions]
    return {
        'model_fingerprint': family.model_fingerprint,
        'count': len(regions),
        'skipped': [s['index'] for s in family.skipped],
        'mean_trace': float(np.mean(traces)) if traces else 0.0,
        'largest_region': max(regions, key=lambda r: r['log_det'])['index'] if regions else None,
        'total_solve_time': float(sum(r['solve_time'] for r in regions)),
        'regions': regions,
    }
