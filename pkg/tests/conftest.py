import numpy as np
import pytest

from fpaccel import cpd
from fpaccel.tensor import SyntheticSpec, generate_synthetic


def make_instance(seed, dims=(20, 20, 20), rank=3, collinearity=0.5):
    """Seeded noisy CP problem and its refined, balanced ALS fixed point."""
    Z, truth = generate_synthetic(SyntheticSpec(dims, rank, collinearity, 1.0, 1.0, seed))
    problem = cpd.CpdProblem(Z, rank)
    x0 = problem.random_point(np.random.default_rng(100 + seed))
    xstar = cpd.refine_fixed_point(problem, x0)
    return problem, xstar


@pytest.fixture(scope="session")
def cp_instance():
    problem, xstar = make_instance(0)
    H = cpd.hessian(problem, xstar, mode="analytic")
    return problem, xstar, H
