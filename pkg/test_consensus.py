"""
Tests for average and min consensus and the distributed explicit filter
"""
import networkx as nx
import numpy as np
import pytest

from conftest import sample_in_union, scalar_model, unit_ball_family
from consensus import (
    DistributedExplicitFilter, average_consensus, consensus_explicit_step, membership_by_consensus,
    metropolis_weights, min_consensus,
)
from explicit_filter import containing_sets, explicit_step
from models import ConsensusError, SafetyFault
from network_model import CommGraph, build_mass_spring_damper_chain
from partition import partition_model
from synthesis import synthesize_family


def random_connected_graph(n: int, seed: int) -> CommGraph:
    graph = nx.connected_watts_strogatz_graph(n, 4, 0.3, seed=seed)
    return CommGraph(n, frozenset(graph.edges))


@pytest.mark.parametrize("graph", [CommGraph.line(5), CommGraph(4, frozenset({(0, 1), (0, 2), (0, 3)})),
                                   random_connected_graph(12, 1)])
def test_metropolis_weights_are_doubly_stochastic(graph):
    W = metropolis_weights(graph)
    assert np.allclose(W.sum(axis=1), 1.0)
    assert np.allclose(W, W.T)
    assert np.all(W >= 0.0)
    for i in range(graph.node_count):
        for j in range(graph.node_count):
            if i != j and j not in graph.neighbors(i):
                assert W[i, j] == 0.0


@pytest.mark.parametrize("N", [3, 25])
def test_average_consensus_reaches_the_mean(N):
    values = np.random.default_rng(N).normal(size=N)
    run = average_consensus(CommGraph.line(N), values)
    assert np.allclose(run.final, values.mean(), atol=1e-8)
    assert run.residual < 1e-10
    assert run.iterations > 0


def test_average_consensus_on_columns():
    values = np.array([[1.0, 10.0], [2.0, 20.0], [6.0, 0.0]])
    run = average_consensus(CommGraph.line(3), values, record=True)
    assert np.allclose(run.final, [[3.0, 10.0]] * 3, atol=1e-8)
    frame = run.to_frame()
    assert list(frame.columns) == ['round', 'node', 'component', 'value']
    assert len(frame) == (run.iterations + 1) * 6


def test_average_consensus_failures():
    with pytest.raises(ConsensusError):
        average_consensus(CommGraph(3, frozenset({(0, 1)})), np.ones(3))
    with pytest.raises(ConsensusError):
        average_consensus(CommGraph.line(3), np.array([0.0, 0.0, 3.0]), max_iter=1)
    with pytest.raises(ConsensusError):
        average_consensus(CommGraph.line(3), np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ConsensusError):
        average_consensus(CommGraph.line(3), np.ones(4))


def test_min_consensus_on_tuples():
    keys = [(3.0, 1), (2.0, 5), (2.0, 0), (np.inf, np.inf)]
    run = min_consensus(CommGraph.line(4), keys)
    assert run.iterations == 3
    assert all(key == (2.0, 0) for key in run.final)


def test_min_consensus_elementwise_and():
    flags = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    run = min_consensus(CommGraph.line(3), flags, record=True)
    assert np.array_equal(run.final, [[1.0, 0.0, 0.0]] * 3)
    assert len(run.history) == 3


def test_min_consensus_on_a_star_takes_two_rounds():
    star = CommGraph(5, frozenset((0, j) for j in range(1, 5)))
    run = min_consensus(star, [(float(5 - j), j) for j in range(5)])
    assert run.iterations == 2
    assert all(key == (1.0, 4) for key in run.final)


def test_min_consensus_needs_a_connected_graph():
    with pytest.raises(ConsensusError):
        min_consensus(CommGraph(2), [(0.0, 0), (1.0, 1)])


def test_membership_matches_centralized_test(msd3, msd3_single):
    (region,) = msd3_single.regions
    rng = np.random.default_rng(2)
    for scale in (0.3, 0.9, 1.1, 2.0):
        for x in sample_in_union(msd3, msd3_single, rng, 10):
            point = scale * x
            central = bool(containing_sets(msd3_single, msd3, point))
            value = sum(float(point[msd3.agent_slice(i)] @ P @ point[msd3.agent_slice(i)])
                        for i, P in enumerate(region.shapes))
            if abs(value - 1.0) > 1e-6:
                assert membership_by_consensus(msd3.graph, point, region.shapes, msd3) == central


def test_consensus_decisions_match_centralized(msd3, msd3_family):
    rng = np.random.default_rng(11)
    for x in sample_in_union(msd3, msd3_family, rng, 25):
        u = rng.uniform(-1.5, 1.5, msd3.m)
        central = explicit_step(msd3, msd3_family, x, u)
        distributed = consensus_explicit_step(msd3, msd3_family, x, u)
        assert distributed.intervened == central.intervened
        assert distributed.set_index == central.set_index
        assert np.allclose(distributed.u_applied, central.u_applied, atol=1e-8)


def test_distributed_filter_records_its_runs(msd3, msd3_single):
    filt = DistributedExplicitFilter(msd3, msd3_single)
    x = np.zeros(msd3.n)
    decision = filt.decide(x, np.zeros(msd3.m))
    assert not decision.intervened
    assert len(filt.runs) == 2
    assert filt.admits_initial(x)


def test_distributed_backup_tie_goes_to_lowest_index():
    model = scalar_model()
    family = unit_ball_family(model, radii=(1.0, 1.0))
    decision = consensus_explicit_step(model, family, np.array([0.8]), np.array([0.9]))
    assert decision.intervened and decision.set_index == 0
    with pytest.raises(SafetyFault):
        consensus_explicit_step(model, family, np.array([3.0]), np.zeros(1))


@pytest.mark.slow
def test_twenty_five_agent_chain_agrees_with_centralized():
    model = build_mass_spring_damper_chain(25, gamma=0.2)
    family = synthesize_family(model, partition_model(model, 1, rng_seed=0, subspace='full'), progress=False)
    (region,) = family.regions
    rng = np.random.default_rng(25)
    for _ in range(20):
        # random direction scaled to a level set inside the ellipsoid
        direction = rng.standard_normal(model.n)
        level = sum(float(direction[model.agent_slice(i)] @ P @ direction[model.agent_slice(i)])
                    for i, P in enumerate(region.shapes))
        x = direction * np.sqrt(rng.uniform(0.1, 0.95) / level)
        u = rng.uniform(-1.0, 1.0, model.m)
        central = explicit_step(model, family, x, u)
        distributed = consensus_explicit_step(model, family, x, u)
        assert (distributed.intervened, distributed.set_index) == (central.intervened, central.set_index)


@pytest.mark.slow
def test_consensus_decisions_match_centralized_on_many_inputs(msd3, msd3_family):
    rng = np.random.default_rng(1000)
    states = sample_in_union(msd3, msd3_family, rng, 1000)
    mismatches = []
    for x in states:
        u = rng.uniform(-1.5, 1.5, msd3.m)
        central = explicit_step(msd3, msd3_family, x, u)
        distributed = consensus_explicit_step(msd3, msd3_family, x, u)
        if (distributed.intervened, distributed.set_index) != (central.intervened, central.set_index) \
                or not np.allclose(distributed.u_applied, central.u_applied, atol=1e-8):
            mismatches.append(x.tolist())
    assert mismatches == []
