"""
Tests for the network model: lifting, parameter boxes, dynamics and builders
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from models import ModelError, VertexLimitError
from network_model import (
    CommGraph, PolytopicSet, UncertainAffineDynamics, assemble_global, build_lifting,
    build_mass_damper_2d, build_mass_spring_damper_chain, coordinate_bounds, eval_dynamics,
    global_state_polytope, model_from_dict, robust_successors, sample_theta_vertex, sampling_mask, step,
    theta_nominal_global, theta_vertices, with_gamma, worst_case_values,
)

CHAIN = build_mass_spring_damper_chain(3, gamma=0.2)
PLANAR = build_mass_damper_2d(3, gamma=0.15)

finite = st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, 6, elements=finite))
def test_lifting_consistency(x):
    T, W = build_lifting(CHAIN.graph, CHAIN.state_dims)
    for i in range(CHAIN.N):
        assert np.array_equal(T[i].apply(x), CHAIN.agent_state(x, i))
        assert np.array_equal(W[i].apply(x), CHAIN.neighborhood_state(x, i))
        # agent i's rows inside W_i x are T_i x
        hood = CHAIN.neighborhoods[i]
        assert np.array_equal(W[i].apply(x)[hood.own_block], T[i].apply(x))


def test_lifting_shapes_on_line_graph():
    T, W = build_lifting(CommGraph.line(3), [2, 2, 2])
    assert [w.shape for w in W] == [(4, 6), (6, 6), (4, 6)]
    assert all(t.shape == (2, 6) for t in T)


def test_lifting_rejects_bad_dims():
    with pytest.raises(ModelError):
        build_lifting(CommGraph.line(2), [2])


def test_theta_vertices_count_and_box():
    ends = theta_vertices(CHAIN.dynamics[0])
    middle = theta_vertices(CHAIN.dynamics[1])
    assert len(ends) == 4
    assert len(middle) == 16
    dyn = CHAIN.dynamics[1]
    for theta in middle:
        assert np.all(theta >= dyn.theta_lo) and np.all(theta <= dyn.theta_hi)
    assert all(np.array_equal(a, b) for a, b in zip(middle, theta_vertices(dyn)))


def test_theta_vertices_collapse_without_uncertainty():
    model = build_mass_spring_damper_chain(3, gamma=0.0)
    assert len(theta_vertices(model.dynamics[1])) == 1


def test_theta_vertices_cap():
    with pytest.raises(VertexLimitError):
        theta_vertices(CHAIN.dynamics[1], cap=8)


def test_single_agent_has_no_parameters():
    model = build_mass_spring_damper_chain(1)
    assert model.dynamics[0].p == 0
    assert len(model.vertices(0)) == 1


def test_eval_dynamics_rejects_theta_outside_box():
    dyn = CHAIN.dynamics[0]
    with pytest.raises(ModelError):
        eval_dynamics(dyn, dyn.theta_hi * 2)
    with pytest.raises(ModelError):
        eval_dynamics(dyn, np.zeros(dyn.p + 1))


def test_eval_dynamics_is_affine():
    dyn = CHAIN.dynamics[1]
    lo, hi = dyn.theta_lo, dyn.theta_hi
    A_lo, B_lo = eval_dynamics(dyn, lo)
    A_hi, B_hi = eval_dynamics(dyn, hi)
    A_mid, B_mid = eval_dynamics(dyn, 0.5 * (lo + hi))
    assert np.allclose(A_mid, 0.5 * (A_lo + A_hi))
    assert np.allclose(B_mid, 0.5 * (B_lo + B_hi))


@settings(max_examples=50)
@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite),
       arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
def test_step_is_linear(x1, x2, u1, u2):
    theta = CHAIN.theta_nominal()
    lhs = step(CHAIN, x1 + x2, u1 + u2, theta)
    rhs = step(CHAIN, x1, u1, theta) + step(CHAIN, x2, u2, theta) - step(CHAIN, np.zeros(6), np.zeros(3), theta)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_step_matches_dense_assembly():
    rng = np.random.default_rng(0)
    for _ in range(20):
        thetas = [v[rng.integers(len(v))] for v in (CHAIN.vertices(i) for i in range(CHAIN.N))]
        x = rng.normal(size=CHAIN.n)
        u = rng.normal(size=CHAIN.m)
        A, B = assemble_global(CHAIN, thetas)
        assert np.allclose(step(CHAIN, x, u, thetas), A @ x + B @ u)


def test_assembled_input_matrix_is_block_diagonal():
    for i in range(CHAIN.N):
        for theta_i in CHAIN.vertices(i):
            thetas = CHAIN.theta_nominal()
            thetas[i] = theta_i
            _, B = assemble_global(CHAIN, thetas)
            mask = np.zeros_like(B, dtype=bool)
            for j in range(CHAIN.N):
                mask[CHAIN.agent_slice(j), CHAIN.input_slice(j)] = True
            assert np.all(B[~mask] == 0.0)


def test_step_rejects_wrong_sizes():
    with pytest.raises(ModelError):
        step(CHAIN, np.zeros(5), np.zeros(3), CHAIN.theta_nominal())


def test_constraint_table_sign_repair():
    X = PolytopicSet.from_table([[1, 0], [-1, 0], [0, 1], [0, -1]], [1, -1, 3, -3])
    assert np.array_equal(X.h, [1, 1, 3, 3])
    assert X.contains(np.array([0.9, -2.9]))
    assert not X.contains(np.array([1.1, 0.0]))


def test_polytope_must_contain_origin():
    with pytest.raises(ModelError):
        PolytopicSet([[1.0], [-1.0]], [1.0, -1.0])
    with pytest.raises(ModelError):
        PolytopicSet([[1.0], [-1.0]], [1.0], 'state')


def test_chain_structure():
    assert CHAIN.graph.edges == frozenset({(0, 1), (1, 2)})
    assert CHAIN.n == 6 and CHAIN.m == 3
    assert CHAIN.dynamics[0].p == 2 and CHAIN.dynamics[1].p == 4
    assert np.array_equal(CHAIN.position_mask, [True, False] * 3)


def test_planar_without_damping_is_decoupled():
    model = build_mass_damper_2d(3, d=0.0, gamma=0.0)
    A, _ = assemble_global(model, model.theta_nominal())
    for i in range(3):
        for j in range(3):
            if i != j:
                assert np.all(A[model.agent_slice(i), model.agent_slice(j)] == 0.0)


def test_planar_position_bound():
    X = global_state_polytope(PLANAR)
    x = np.zeros(PLANAR.n)
    x[0], x[2] = 6.0, 3.9
    assert X.contains(x)
    x[2] = 4.1
    assert not X.contains(x)


def test_coordinate_bounds_and_sampling_mask():
    lower, upper = coordinate_bounds(global_state_polytope(CHAIN))
    assert np.allclose(upper, [1, 3] * 3)
    assert np.allclose(lower, [-1, -3] * 3)
    assert np.all(sampling_mask(CHAIN))
    assert np.array_equal(sampling_mask(PLANAR), PLANAR.position_mask)


def test_model_round_trip_preserves_fingerprint():
    inline = model_from_dict(CHAIN.to_dict(inline=True))
    assert inline.fingerprint() == CHAIN.fingerprint()
    assert model_from_dict(CHAIN.to_dict()).fingerprint() == CHAIN.fingerprint()


def test_unknown_builder():
    with pytest.raises(ModelError):
        model_from_dict({'builder': 'pendulum'})


def test_with_gamma_rebuilds_box():
    wider = with_gamma(CHAIN, 0.3)
    assert wider.gamma == 0.3
    assert np.allclose(wider.dynamics[0].theta_hi, 1.3 * CHAIN.dynamics[0].theta_nominal)
    assert wider.fingerprint() != CHAIN.fingerprint()


def test_uncertainty_level_must_be_non_negative():
    with pytest.raises(ModelError):
        UncertainAffineDynamics.with_uncertainty(np.eye(1), np.eye(1), [np.eye(1)], [np.zeros((1, 1))], [1.0], -0.1)


def test_robust_successors_cover_every_vertex():
    x = np.linspace(-0.5, 0.5, CHAIN.n)
    u = np.array([0.1, -0.2, 0.3])
    successors = robust_successors(CHAIN, x, u)
    assert [s.shape for s in successors] == [(4, 2), (16, 2), (4, 2)]
    values = worst_case_values(successors, [np.eye(2)] * 3)
    assert np.allclose(values, [np.max(np.sum(s ** 2, axis=1)) for s in successors])


def test_nominal_and_vertex_parameters():
    stacked = theta_nominal_global(CHAIN)
    assert stacked.shape == (sum(t.size for t in CHAIN.theta_nominal()),)
    assert np.array_equal(stacked, np.concatenate(CHAIN.theta_nominal()))
    drawn = sample_theta_vertex(CHAIN, np.random.default_rng(0))
    for i, theta in enumerate(drawn):
        assert any(np.array_equal(theta, v) for v in CHAIN.vertices(i))
