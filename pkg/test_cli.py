"""
Tests for configuration handling and the command line entry point
"""
import json

import numpy as np
import pandas as pd
import pytest

from config import build_model, config_from_dict, load_config
from main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from models import ConfigError
from network_model import build_mass_spring_damper_chain
from sample_data import PRESETS, generate_sample_configs

CHAIN = {'builder': 'mass_spring_damper_chain', 'params': {'N': 3}}


def write_config(tmp_path, name: str = "config.json", **fields) -> str:
    data = {
        'model': CHAIN,
        'gamma': 0.2,
        'partition': {'M': 1, 'rng_seed': 0, 'subspace': 'full'},
        'horizon': 5,
        'episodes': 2,
        'compare': {'n_pairs': 2},
        'output_dir': str(tmp_path / "out"),
    }
    data.update(fields)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_json(path):
    with open(path) as handle:
        return json.load(handle)


def test_hash_tracks_content():
    a = config_from_dict({'model': CHAIN, 'gamma': 0.2})
    b = config_from_dict({'gamma': 0.2, 'model': CHAIN})
    c = config_from_dict({'model': CHAIN, 'gamma': 0.25})
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()
    assert a.provenance()['config_hash'] == a.hash()


def test_preset_fields_can_be_overridden():
    config = config_from_dict({'preset': 'mass-spring-damper-3', 'horizon': 10, 'partition': {'M': 2}})
    assert config.horizon == 10
    assert config.partition.M == 2
    assert config.partition.subspace == 'full'
    assert config.policy.kind == 'adversarial-outward'


@pytest.mark.parametrize("data", [
    {'model': CHAIN, 'gamma': 1.5},
    {'model': CHAIN, 'horizon': 0},
    {'model': CHAIN, 'filter': 'magic'},
    {'model': CHAIN, 'colour': 'blue'},
    {'model': CHAIN, 'partition': {'M': 2, 'shape': 'hex'}},
    {'model': CHAIN, 'x0_mode': 'given-point'},
    {'model': CHAIN, 'tolerances': {'psd': 1e-7, 'unknown': 1.0}},
    {'preset': 'no-such-preset'},
    {'gamma': 0.1},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_build_model_applies_overrides():
    model = build_model(config_from_dict({'model': CHAIN, 'gamma': 0.3, 'dt': 0.02}))
    assert model.gamma == 0.3 and model.dt == 0.02
    inline = build_mass_spring_damper_chain(3, gamma=0.2).to_dict(inline=True)
    widened = build_model(config_from_dict({'model': inline, 'gamma': 0.1}))
    assert np.allclose(widened.dynamics[0].theta_hi, 1.1 * widened.dynamics[0].theta_nominal)
    with pytest.raises(ConfigError):
        build_model(config_from_dict({'model': {'builder': 'mass_spring_damper_chain', 'params': {'N': 3, 'x': 1}}}))


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_sample_configs_load(tmp_path):
    paths = generate_sample_configs(str(tmp_path))
    assert len(paths) == len(PRESETS)
    for path in paths:
        config = load_config(path)
        assert config.name in PRESETS


def test_bad_config_exits_with_config_code(tmp_path):
    assert main(['synthesize', '--config', str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(['simulate', '--config', write_config(tmp_path, gamma=2.0)]) == EXIT_CONFIG


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(['train', '--config', 'x.json'])


@pytest.mark.parametrize("fields,bad", [
    ({'horizon': "abc"}, "horizon"),
    ({'partition': {'M': "x"}}, "partition.M"),
    ({'gamma': [0.2]}, "gamma"),
    ({'episodes': True}, "episodes"),
    ({'coverage': {'M_list': [1, "ten"]}}, "coverage.M_list"),
    ({'tolerances': {'psd': "small"}}, "tolerances.psd"),
    ({'filter': 3}, "filter"),
])
def test_wrong_types_are_config_errors(tmp_path, capsys, fields, bad):
    with pytest.raises(ConfigError, match=bad.replace('.', r'\.')):
        config_from_dict(dict({'model': CHAIN}, **fields))
    config = write_config(tmp_path, **fields)
    assert main(['simulate', '--config', config, '--quiet']) == EXIT_CONFIG
    assert bad in capsys.readouterr().err


def test_preset_with_wrong_type_exits_with_config_code(tmp_path):
    path = tmp_path / "preset.json"
    path.write_text(json.dumps({'preset': 'mass-spring-damper-3', 'horizon': "abc"}))
    assert main(['simulate', '--config', str(path), '--quiet']) == EXIT_CONFIG


def test_compare_without_family_is_a_config_error(tmp_path):
    assert main(['compare', '--config', write_config(tmp_path), '--quiet']) == EXIT_CONFIG


def test_pipeline(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "out"

    assert main(['partition', '--config', config, '--quiet']) == EXIT_OK
    partition = read_json(out / "partition.json")
    assert partition['M'] == 1 and 'config_hash' in partition['provenance']

    assert main(['synthesize', '--config', config, '--quiet', '--validation-samples', '100']) == EXIT_OK
    family = read_json(out / "family.json")
    assert len(family['regions']) == 1
    assert family['settings']['provenance']['code_version'] == family['code_version']
    synthesis = read_json(out / "synthesis.json")
    assert all(report['passed'] for report in synthesis['validation'])
    assert (out / "run.log").exists()

    assert main(['simulate', '--config', config, '--quiet']) == EXIT_OK
    summary = read_json(out / "summary.json")
    assert summary['episodes'] == 2 and summary['violations'] == 0
    episode = pd.read_csv(out / "episode_000.csv")
    assert len(episode) == 5 * 3
    assert {'episode_seed', 'config_hash', 'code_version'} <= set(episode.columns)

    assert main(['compare', '--config', config, '--quiet']) == EXIT_OK
    comparison = read_json(out / "comparison.json")
    assert comparison['n_pairs'] == 2
    assert comparison['provenance']['master_seed'] == 0

    # a family synthesized for gamma 0.2 does not fit a gamma 0.3 model
    other = write_config(tmp_path, "other.json", gamma=0.3)
    assert main(['simulate', '--config', other, '--family', str(out / "family.json"), '--quiet']) == EXIT_RUNTIME


def test_unfiltered_simulation_without_family(tmp_path):
    config = write_config(tmp_path, filter='none', policy={'kind': 'zero'}, output_dir=str(tmp_path / "plain"))
    assert main(['simulate', '--config', config, '--quiet', '--seed', '3']) == EXIT_OK
    summary = read_json(tmp_path / "plain" / "summary.json")
    assert summary['filter'] == 'none'
    assert summary['provenance']['master_seed'] == 3


def test_coverage_command_writes_tables(tmp_path):
    coverage = {'M_list': [1], 'gamma_list': [0.2], 'partitions_per_cell': 2, 'n_samples': 200}
    config = write_config(tmp_path, coverage=coverage)
    assert main(['coverage', '--config', config, '--quiet']) == EXIT_OK
    table = pd.read_csv(tmp_path / "out" / "coverage.csv")
    assert len(table) == 2
    assert table['fraction'].between(0.0, 1.0).all()
    assert (table['config_hash'] == load_config(config).hash()).all()
    summary = pd.read_csv(tmp_path / "out" / "coverage_summary.csv")
    assert list(summary['M']) == [1]
