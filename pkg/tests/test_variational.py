import numpy as np
import pytest

from vargram.errors import ConfigError
from vargram.integrator import IrkConfig, irk_step, simulate
from vargram.models import FunctionModel, LinearModel, zero_dynamics
from vargram.variational import (
    iter_variational,
    output_maps,
    perturbation_response,
    propagate_variational,
)

from conftest import LORENZ_X0, rel


def transitions(model, x0, n, cfg, record=True):
    tr = simulate(model, x0, n, cfg, record_jacobians=record)
    return tr, propagate_variational(model, tr, cfg)


def test_zero_dynamics_identity():
    _, phis = transitions(zero_dynamics(2), np.array([1.0, 2.0]), 5, IrkConfig(0.1))
    assert len(phis) == 6
    for t in phis:
        assert np.array_equal(t.phi, np.eye(2))


def test_first_transition_is_exact_identity(lorenz, cfg):
    _, phis = transitions(lorenz, LORENZ_X0, 3, cfg)
    assert phis[0].step_index == 0 and np.array_equal(phis[0].phi, np.eye(3))


def test_linear_powers():
    rng = np.random.default_rng(0)
    m = LinearModel(rng.standard_normal((3, 3)) * 0.3)
    cfg = IrkConfig(0.1)
    step = irk_step(m, np.zeros(3), cfg).step_jacobian
    _, phis = transitions(m, rng.standard_normal(3), 20, cfg)
    for k in range(1, 21):
        assert rel(phis[k].phi, step @ phis[k - 1].phi) < 1e-12
        assert rel(phis[k].phi, np.linalg.matrix_power(step, k)) < 1e-12


def test_recorded_and_recomputed_jacobians_agree(lorenz, cfg):
    tr = simulate(lorenz, LORENZ_X0, 50, cfg)
    a = propagate_variational(lorenz, tr, cfg)
    _, b = transitions(lorenz, LORENZ_X0, 50, cfg)
    assert np.array_equal(a[-1].phi, b[-1].phi)


def test_lorenz_tangent_vs_resimulation(lorenz, cfg):
    rng = np.random.default_rng(1)
    _, phis = transitions(lorenz, LORENZ_X0, 100, cfg)
    for _ in range(3):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        fd = perturbation_response(lorenz, LORENZ_X0, 1e-6 * d, 100, cfg) / 1e-6
        assert rel(phis[100].phi @ d, fd) < 1e-4


def test_semigroup_lti():
    rng = np.random.default_rng(2)
    m = LinearModel(rng.standard_normal((4, 4)) * 0.5)
    cfg = IrkConfig(0.05)
    tr, phis = transitions(m, rng.standard_normal(4), 30, cfg)
    j, k = 12, 30
    _, tail = transitions(m, tr.states[j], k - j, cfg)
    assert rel(phis[k].phi, tail[-1].phi @ phis[j].phi) < 1e-10


def test_semigroup_lorenz(lorenz, cfg):
    tr, phis = transitions(lorenz, LORENZ_X0, 400, cfg)
    _, tail = transitions(lorenz, tr.states[150], 250, cfg)
    assert rel(phis[400].phi, tail[-1].phi @ phis[150].phi) < 1e-6


def test_second_order_consistency(lorenz, cfg):
    n = 200
    tr, phis = transitions(lorenz, LORENZ_X0, n, cfg)
    d = np.array([0.3, -0.5, 0.8])
    errs = []
    for s in (1e-2, 5e-3, 2.5e-3):
        xs = simulate(lorenz, LORENZ_X0 + s * d, n, cfg).states[-1]
        errs.append(np.linalg.norm(phis[n].phi @ (s * d) - (xs - tr.states[-1])))
    for a, b in zip(errs, errs[1:]):
        assert 3.0 < a / b < 5.0


def test_output_maps_identity_output(lorenz, cfg):
    tr, phis = transitions(lorenz, LORENZ_X0, 10, cfg)
    psis = output_maps(lorenz, tr, phis)
    assert len(psis) == 10
    for p, t in zip(psis, phis):
        assert np.array_equal(p.psi, t.phi)


def test_output_maps_linear_rows():
    a = np.array([[0.2, 1.0], [0.0, -0.4]])
    c = np.array([[1.0, 2.0]])
    m = LinearModel(a, c)
    cfg = IrkConfig(0.1)
    step = irk_step(m, np.zeros(2), cfg).step_jacobian
    tr, phis = transitions(m, np.array([1.0, 1.0]), 6, cfg)
    for k, p in enumerate(output_maps(m, tr, phis)):
        assert rel(p.psi, c @ np.linalg.matrix_power(step, k)) < 1e-12


def test_output_maps_nonlinear_h():
    m = FunctionModel(2, lambda x: -x, lambda x: -np.eye(2),
                      h=lambda x: np.array([x[0] ** 2, x[1]]),
                      jac_h=lambda x: np.array([[2 * x[0], 0.0], [0.0, 1.0]]), n_y=2)
    cfg = IrkConfig(0.1)
    x0 = np.array([1.5, -0.3])
    tr, phis = transitions(m, x0, 3, cfg)
    psis = output_maps(m, tr, phis)
    assert np.array_equal(psis[0].psi, [[3.0, 0.0], [0.0, 1.0]])


def test_dimension_and_length_errors(lorenz, cfg):
    tr, phis = transitions(lorenz, LORENZ_X0, 5, cfg)
    with pytest.raises(ConfigError):
        list(iter_variational(zero_dynamics(2), tr, cfg))
    with pytest.raises(ConfigError):
        output_maps(lorenz, tr, phis[:3])


def test_memory_budget(lorenz, cfg):
    tr = simulate(lorenz, LORENZ_X0, 100, cfg)
    with pytest.raises(ConfigError):
        propagate_variational(lorenz, tr, cfg, memory_budget=100)
    # streaming still works
    last = None
    for last in iter_variational(lorenz, tr, cfg):
        pass
    assert last.step_index == 100
