"""Scenario factories shared across the test modules."""
import numpy as np

from escontrol.basis import FourierPairsBasis
from escontrol.ode import TimeGrid
from escontrol.scenario import (LinearDynamics, NoiseModel, QuadraticCost, Scenario)

# 2x2 plant and weights of the feedback-synthesis example
A_2D = [[1.0, 0.25], [0.3, 0.7]]
B_2D = [[1.0, 0.1], [0.2, 0.5]]
P_2D = [[4.0, 3.0], [3.0, 1.0]]
Q_2D = [[2.0, 0.1], [0.1, 10.0]]
R_2D = [[0.5, 0.1], [0.1, 0.25]]
X0_2D = [1.3, -1.1]
Y0_2D = [-1.0, -0.5]
Z0_2D = [-2.0, 3.0]


def scalar_scenario(a=1.0, b=1.0, x0=2.0, p=2.0, q=2.0, r=2.0, reference=None,
                    n_steps=1000, m=5, extension=0.1, noise_std=0.0, seed=0,
                    name="scalar"):
    return Scenario(
        name=name,
        dynamics=LinearDynamics.constant(a, b),
        cost=QuadraticCost(c_matrix=1.0, p_matrix=p, q_matrix=q, r_matrix=r,
                           reference=reference),
        grid=TimeGrid(0.0, 1.0, n_steps),
        basis=FourierPairsBasis(m=m, horizon=1.0, extension=extension),
        initial_conditions=[np.array([x0])],
        noise=NoiseModel(noise_std, seed),
    )


def example2_scenario(**kw):
    kw.setdefault("name", "example2")
    return scalar_scenario(a=1.0, b=1.0, x0=2.0, p=2.0, q=2.0, r=2.0, **kw)


def feedback_2d_scenario(n_steps=500, m=10, extension=0.1, noise_std=0.0, seed=0,
                         initial_conditions=(X0_2D, Y0_2D), feedforward=False,
                         es_defaults=None):
    # the published P is indefinite (det -5); the flag reproduces it as-is
    return Scenario(
        name="feedback2d",
        dynamics=LinearDynamics.constant(A_2D, B_2D),
        cost=QuadraticCost(c_matrix=np.eye(2), p_matrix=P_2D, q_matrix=Q_2D,
                           r_matrix=R_2D, terminal_indefinite_ok=True),
        grid=TimeGrid(0.0, 1.0, n_steps),
        basis=FourierPairsBasis(m=m, horizon=1.0, extension=extension),
        initial_conditions=[np.array(ic, dtype=float) for ic in initial_conditions],
        noise=NoiseModel(noise_std, seed),
        feedback=True,
        feedforward=feedforward,
        es_defaults=es_defaults or {},
    )


def quadratic_cost_samples(cost, grid, states, controls):
    """Independent re-implementation of the episode cost for cross-checks."""
    taus = grid.nodes()
    if cost.reference is None:
        ref = np.zeros((taus.shape[0], cost.c_matrix.shape[0]))
    else:
        ref = np.stack([np.atleast_1d(cost.reference(float(t))) for t in taus])
    err = states @ cost.c_matrix.T - ref
    g = 0.5 * (np.einsum("ki,ij,kj->k", err, cost.q_matrix, err)
               + np.einsum("ki,ij,kj->k", controls, cost.r_matrix, controls))
    terminal = 0.5 * float(err[-1] @ cost.p_matrix @ err[-1])
    h = grid.h
    return terminal + float(h * (g.sum() - 0.5 * (g[0] + g[-1])))
