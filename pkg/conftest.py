"""
Shared fixtures: small models and certified families synthesized once per session
"""
import numpy as np
import pytest

from models import CertifiedRegion, CertifiedSetFamily
from network_model import (
    CommGraph, NetworkModel, PolytopicSet, UncertainAffineDynamics, build_mass_spring_damper_chain,
)
from partition import Region, partition_model
from synthesis import synthesize_family


def scalar_model(state_bound: float = 1.0, input_bound: float = 1.0, a: float = 0.5) -> NetworkModel:
    """x+ = a x + u with |x| <= state_bound, |u| <= input_bound"""
    dynamics = UncertainAffineDynamics(np.array([[a]]), np.array([[1.0]]))
    return NetworkModel(
        CommGraph(1), (dynamics,),
        (PolytopicSet.box([state_bound], 'state'),), (PolytopicSet.box([input_bound], 'input'),),
        name=f"scalar-{state_bound}",
    )


def whole_box_region(model: NetworkModel) -> Region:
    box = PolytopicSet.box(np.ones(model.n) * 100.0)
    return Region(0, box.H, box.h, np.zeros(model.n))


def planar_model() -> NetworkModel:
    """One agent with state in [-1, 1]^2"""
    dynamics = UncertainAffineDynamics(np.eye(2), np.array([[0.0], [1.0]]))
    return NetworkModel(
        CommGraph(1), (dynamics,),
        (PolytopicSet.box([1.0, 1.0], 'state'),), (PolytopicSet.box([1.0], 'input'),),
        name="planar",
    )


def unit_ball_family(model: NetworkModel, radii=(1.0,)) -> CertifiedSetFamily:
    """Hand-made family of centered balls (not synthesized)"""
    box = PolytopicSet.box(np.ones(model.n))
    regions = [
        CertifiedRegion(j, np.zeros(model.n), box.H, box.h, [r ** 2 * np.eye(model.n)],
                        [np.zeros((model.m, model.n))], np.zeros(model.n), float(model.n * r ** 2))
        for j, r in enumerate(radii)
    ]
    return CertifiedSetFamily(model.fingerprint(), regions, {'M': len(regions)})


@pytest.fixture(scope="session")
def msd3():
    return build_mass_spring_damper_chain(3, gamma=0.2)


@pytest.fixture(scope="session")
def msd3_family(msd3):
    partition = partition_model(msd3, 4, rng_seed=1, subspace='full')
    return synthesize_family(msd3, partition, progress=False)


@pytest.fixture(scope="session")
def msd3_single(msd3):
    """Family of one set synthesized over the whole state space"""
    return synthesize_family(msd3, partition_model(msd3, 1, rng_seed=0, subspace='full'), progress=False)


def sample_in_union(model, family, rng, count):
    """Rejection samples of states inside the certified union"""
    from explicit_filter import containing_sets
    from network_model import coordinate_bounds, global_state_polytope, sampling_mask
    from partition import sample_uniform

    polytope = global_state_polytope(model)
    mask = sampling_mask(model)
    box = coordinate_bounds(polytope, mask)
    points = []
    while len(points) < count:
        x = sample_uniform(polytope, 1, rng, mask, box=box)[0]
        if containing_sets(family, model, x):
            points.append(x)
    return np.array(points)
