"""
Tests for the closed-loop harness, coverage estimation and filter comparison
"""
import numpy as np
import pandas as pd
import pytest

from config import build_model, config_from_dict
from conftest import planar_model, scalar_model, unit_ball_family
from explicit_filter import ExplicitSafetyFilter, PassThroughFilter
from harness import (
    PolicyStub, ThetaSchedule, compare_filters, coverage_fraction, coverage_sweep, derive_seed,
    episode_trace_to_csv, episode_trace_to_frame, run_episode, run_episodes, summarize_sweep,
)
from models import (
    CertifiedSetFamily, ConfigError, InitialStateMode, ModelError, PolicyKind, ThetaMode,
)
from network_model import build_mass_spring_damper_chain
from partition import partition_model
from synthesis import synthesize_family


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, e) for e in range(50)}) == 50
    assert derive_seed(0, 1, 2) != derive_seed(0, 1)


def test_policies(msd3):
    x = np.array([0.5, 0.0, -0.2, 0.1, 0.0, -0.3])
    zero = PolicyStub(PolicyKind.ZERO).bind(msd3)
    assert np.array_equal(zero(x), np.zeros(3))
    outward = PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD, scale=1.5).bind(msd3)
    # B0^T x_i is the velocity times dt/m; zero velocity pushes positive
    assert np.allclose(outward(x), [1.5, 1.5, -1.5])
    random = PolicyStub(PolicyKind.RANDOM_IN_U, seed=3).bind(msd3)
    draws = np.array([random(x) for _ in range(100)])
    assert np.all(np.abs(draws) <= 1.0)
    again = PolicyStub(PolicyKind.RANDOM_IN_U, seed=3).bind(msd3)
    assert np.array_equal(again(x), draws[0])
    regulate = PolicyStub(PolicyKind.NOISY_REGULATION, noise=0.0).bind(msd3)
    assert np.allclose(regulate(x), [-0.5, 0.1, 0.3])


def test_unbound_policy():
    with pytest.raises(RuntimeError):
        PolicyStub(PolicyKind.ZERO)(np.zeros(2))


def test_theta_schedules(msd3):
    rng = np.random.default_rng(0)
    assert all(np.array_equal(a, b) for a, b in zip(ThetaSchedule().thetas(msd3, rng, 64), msd3.theta_nominal()))
    drawn = ThetaSchedule(ThetaMode.RANDOM_VERTEX).thetas(msd3, rng, 64)
    for i, theta in enumerate(drawn):
        assert any(np.array_equal(theta, v) for v in msd3.vertices(i))
    with pytest.raises(ConfigError):
        ThetaSchedule(ThetaMode.FIXED, [np.zeros(2)]).validate(msd3)
    outside = [t * 3.0 for t in msd3.theta_nominal()]
    with pytest.raises(ModelError):
        ThetaSchedule(ThetaMode.FIXED, outside).validate(msd3)


def test_episode_arguments(msd3):
    filt = PassThroughFilter(msd3)
    with pytest.raises(ConfigError):
        run_episode(msd3, filt, PolicyStub(PolicyKind.ZERO), 0)
    with pytest.raises(ConfigError):
        run_episode(msd3, filt, PolicyStub(PolicyKind.ZERO), 5, x0_mode=InitialStateMode.GIVEN_POINT)
    with pytest.raises(ConfigError):
        run_episodes(msd3, filt, PolicyStub(PolicyKind.ZERO), 5, 0)


def test_explicit_filter_keeps_the_chain_safe(msd3, msd3_family):
    filt = ExplicitSafetyFilter(msd3, msd3_family)
    policy = PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD, scale=1.5)
    for seed in range(3):
        trace = run_episode(msd3, filt, policy, 60, ThetaSchedule(ThetaMode.RANDOM_VERTEX), seed=seed)
        assert trace.violations == 0
        assert trace.intervention_rate > 0.0
        assert all(s.max_residual <= 1e-8 for s in trace.steps)


def test_unfiltered_adversary_leaves_the_box(msd3):
    x0 = np.array([0.9, 0.5, 0.9, 0.5, 0.9, 0.5])
    trace = run_episode(msd3, PassThroughFilter(msd3), PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD, scale=1.5), 40,
                        x0_mode=InitialStateMode.GIVEN_POINT, x0=x0)
    assert trace.violations > 0
    assert any(s.reward < -100.0 for s in trace.steps)


def test_violation_at_the_terminal_state_is_counted():
    # 0.5 * 0.9 + 1 leaves |x| <= 1 only after the last recorded step
    model = scalar_model()
    trace = run_episode(model, PassThroughFilter(model), PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD), 1,
                        x0_mode=InitialStateMode.GIVEN_POINT, x0=np.array([0.9]))
    assert trace.steps[0].max_residual <= 1e-8
    assert trace.final_state == pytest.approx([1.45])
    assert trace.final_residuals == pytest.approx([0.45])
    assert trace.final_violated
    assert trace.violations == 1


def test_safe_terminal_state_adds_nothing():
    model = scalar_model()
    trace = run_episode(model, PassThroughFilter(model), PolicyStub(PolicyKind.ZERO), 3,
                        x0_mode=InitialStateMode.GIVEN_POINT, x0=np.array([0.9]))
    assert not trace.final_violated
    assert trace.violations == 0


def test_episodes_are_reproducible(msd3, msd3_single):
    filt = ExplicitSafetyFilter(msd3, msd3_single)
    policy = PolicyStub(PolicyKind.NOISY_REGULATION, noise=0.5)
    first = run_episodes(msd3, filt, policy, 15, 2, master_seed=4, theta=ThetaSchedule(ThetaMode.RANDOM_VERTEX))
    again = run_episodes(msd3, filt, policy, 15, 2, master_seed=4, theta=ThetaSchedule(ThetaMode.RANDOM_VERTEX))
    for a, b in zip(first, again):
        assert a.seed == b.seed
        assert np.array_equal(a.states(), b.states())
    assert not np.array_equal(first[0].states(), first[1].states())


def test_episode_table(tmp_path, msd3, msd3_single):
    trace = run_episode(msd3, ExplicitSafetyFilter(msd3, msd3_single), PolicyStub(PolicyKind.RANDOM_IN_U), 4, seed=1)
    frame = episode_trace_to_frame(trace, msd3)
    assert len(frame) == 4 * msd3.N
    for column in ('k', 'agent', 'x_0', 'x_1', 'u_learning_0', 'u_applied_0', 'intervened', 'set_index',
                   'state_residual', 'input_residual', 'reward'):
        assert column in frame.columns
    path = tmp_path / "episode.csv"
    episode_trace_to_csv(trace, msd3, str(path))
    assert pd.read_csv(path).shape == frame.shape


def test_ball_in_box_coverage():
    model = planar_model()
    report = coverage_fraction(unit_ball_family(model), model, 20_000, np.random.default_rng(0))
    assert abs(report.fraction - np.pi / 4) <= 3 * report.standard_error
    assert report.per_set_counts == {0: report.covered}


def test_coverage_of_empty_family_and_bad_requests():
    model = planar_model()
    empty = CertifiedSetFamily(model.fingerprint(), [], {'M': 3})
    report = coverage_fraction(empty, model, 100, np.random.default_rng(0))
    assert report.fraction == 0.0 and report.M == 3
    with pytest.raises(ConfigError):
        coverage_fraction(empty, model, 0, np.random.default_rng(0))


def test_coverage_grows_with_the_union():
    model = planar_model()
    small = unit_ball_family(model, radii=(0.5,))
    both = unit_ball_family(model, radii=(0.5, 0.8))
    a = coverage_fraction(small, model, 5000, np.random.default_rng(1))
    b = coverage_fraction(both, model, 5000, np.random.default_rng(1))
    assert b.covered >= a.covered


def test_compare_filters(msd3, msd3_single):
    with pytest.raises(ConfigError):
        compare_filters(msd3, msd3_single, 0, np.random.default_rng(0))
    report = compare_filters(msd3, msd3_single, 4, np.random.default_rng(0), input_scale=0.5)
    assert report['n_pairs'] == 4
    assert 0.0 <= report['explicit_certification_rate'] <= report['implicit_certification_rate'] <= 1.0
    assert report['implicit_contains_explicit']
    assert report['explicit_interventions']['count'] == 4


def test_scalar_sweep_table():
    table = coverage_sweep(scalar_model(), [1, 2], [0.0, 0.1], 2, n_samples=200, progress=False)
    assert list(table.columns) == ['M', 'gamma', 'partition_id', 'fraction', 'standard_error', 'n_samples', 'n_sets']
    assert len(table) == 8
    assert np.all(table['fraction'] > 0.9)
    summary = summarize_sweep(table)
    assert len(summary) == 4 and set(summary.columns) >= {'M', 'gamma', 'mean', 'sem'}


def test_sweep_needs_cells():
    with pytest.raises(ConfigError):
        coverage_sweep(scalar_model(), [], [0.1], 1, progress=False)


def cell_gap(table: pd.DataFrame, a: tuple, b: tuple):
    """Difference of cell means and its standard error from the per-partition sampling errors"""
    cells = table.set_index(['M', 'gamma'])
    first, second = cells.loc[a], cells.loc[b]
    gap = first['fraction'].mean() - second['fraction'].mean()
    error = np.sqrt((first['standard_error'] ** 2).sum() / len(first) ** 2
                    + (second['standard_error'] ** 2).sum() / len(second) ** 2)
    return gap, error


@pytest.mark.slow
def test_coverage_grows_with_more_regions_and_shrinks_with_uncertainty():
    config = config_from_dict({'preset': 'mass-damper-2d-3'})
    model = build_model(config)
    sweep = config.coverage
    assert (sweep.M_list, sweep.gamma_list) == ([1, 10], [0.15, 0.3])
    table = coverage_sweep(model, sweep.M_list, sweep.gamma_list, sweep.partitions_per_cell,
                           master_seed=config.master_seed, n_samples=sweep.n_samples,
                           subspace=config.partition.subspace, progress=False)
    gap, error = cell_gap(table, (10, 0.15), (10, 0.3))
    assert gap >= 3 * error, (gap, error)
    gap, error = cell_gap(table, (10, 0.15), (1, 0.15))
    assert gap >= 3 * error, (gap, error)


@pytest.mark.slow
def test_long_adversarial_episodes_have_no_violations(msd3, msd3_family):
    filt = ExplicitSafetyFilter(msd3, msd3_family)
    traces = run_episodes(msd3, filt, PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD, scale=1.5), 5000, 20,
                          master_seed=0, theta=ThetaSchedule(ThetaMode.RANDOM_VERTEX))
    assert len(traces) == 20
    assert [t.violations for t in traces] == [0] * 20


@pytest.mark.slow
def test_adversary_without_a_filter_violates(msd3, msd3_family):
    filt = PassThroughFilter(msd3, msd3_family)
    traces = run_episodes(msd3, filt, PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD, scale=1.5), 5000, 20,
                          master_seed=0, theta=ThetaSchedule(ThetaMode.RANDOM_VERTEX))
    assert sum(1 for t in traces if t.violations > 0) >= 1


@pytest.mark.slow
def test_twenty_five_agent_chain_episode_is_safe():
    model = build_mass_spring_damper_chain(25, gamma=0.2)
    family = synthesize_family(model, partition_model(model, 5, rng_seed=0, subspace='full'), progress=False)
    assert len(family) + len(family.skipped) == 5
    filt = ExplicitSafetyFilter(model, family)
    # box sampling almost never lands in a 50-dimensional ellipsoid, so start at the common center
    trace = run_episode(model, filt, PolicyStub(PolicyKind.ADVERSARIAL_OUTWARD, scale=1.5), 2000,
                        ThetaSchedule(ThetaMode.RANDOM_VERTEX), seed=25,
                        x0_mode=InitialStateMode.GIVEN_POINT, x0=np.zeros(model.n))
    assert len(trace) == 2000
    assert trace.violations == 0
