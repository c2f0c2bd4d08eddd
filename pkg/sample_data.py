"""
Benchmark experiment presets for the safety framework demonstration
"""
import json
import os
import sys
from typing import Dict, List

# Mass-damper agents in the plane, learning experiment setup
MASS_DAMPER_2D_3 = {
    'name': 'mass-damper-2d-3',
    'model': {
        'builder': 'mass_damper_2d',
        'params': {'N': 3, 'm': 1.0, 'a': 0.1, 'd': 0.5, 'position_bound': 10.0, 'input_bound': 5.0},
    },
    'gamma': 0.2,
    'partition': {'M': 15, 'rng_seed': 0, 'subspace': 'position'},
    'policy': {'kind': 'noisy-regulation', 'noise': 0.5},
    'horizon': 500,
    'episodes': 20,
    'coverage': {'M_list': [1, 10], 'gamma_list': [0.15, 0.3], 'partitions_per_cell': 5, 'n_samples': 10000},
}

# Three coupled mass-spring-damper agents, explicit vs implicit comparison
MASS_SPRING_DAMPER_3 = {
    'name': 'mass-spring-damper-3',
    'model': {
        'builder': 'mass_spring_damper_chain',
        'params': {'N': 3, 'm': 1.0, 'k': 2.0, 'd': 1.0, 'position_bound': 1.0, 'velocity_bound': 3.0,
                   'input_bound': 1.0},
    },
    'gamma': 0.2,
    'partition': {'M': 10, 'rng_seed': 0, 'subspace': 'full'},
    'policy': {'kind': 'adversarial-outward'},
    'horizon': 5000,
    'episodes': 20,
    'compare': {'n_pairs': 200, 'input_scale': 1.0},
}

# Large-scale chain
MASS_SPRING_DAMPER_25 = {
    'name': 'mass-spring-damper-25',
    'model': {
        'builder': 'mass_spring_damper_chain',
        'params': {'N': 25, 'm': 1.0, 'k': 2.0, 'd': 1.0, 'position_bound': 1.0, 'velocity_bound': 3.0,
                   'input_bound': 1.0},
    },
    'gamma': 0.2,
    'partition': {'M': 5, 'rng_seed': 0, 'subspace': 'full'},
    'policy': {'kind': 'random-in-U'},
    'horizon': 2000,
    'episodes': 1,
}

PRESETS: Dict[str, Dict] = {
    preset['name']: preset for preset in (MASS_DAMPER_2D_3, MASS_SPRING_DAMPER_3, MASS_SPRING_DAMPER_25)
}


def generate_sample_configs(out_dir: str) -> List[str]:
    """Write every preset as an experiment config file and return the paths"""
    os.makedirs(out_dir, exist_ok=True)
    print("\n=== Writing Experiment Presets ===")
    paths = []
    for name, preset in PRESETS.items():
        path = os.path.join(out_dir, f"{name}.json")
        with open(path, 'w') as handle:
            json.dump(dict(preset, output_dir=os.path.join('results', name)), handle, indent=2, sort_keys=True)
        paths.append(path)
        print(f"✓ Added: {name} ({preset['model']['params']['N']} agents, M={preset['partition']['M']})")
    return paths


if __name__ == "__main__":
    written = generate_sample_configs(sys.argv[1] if len(sys.argv) > 1 else "configs")

    print("\n" + "=" * 60)
    print(f"Wrote {len(written)} experiment presets")
    print("=" * 60)
