import json

import numpy as np
import pytest

from vargram.errors import ConfigError
from vargram.models import (
    BUILTIN_MODELS,
    LinearModel,
    MassActionNetwork,
    builtin_model,
    central_difference_jacobian,
    eval_mass_action,
    jacobian_mass_action,
    load_model,
    model_to_doc,
    random_mass_action,
)

CYCLE_DOC = {
    "kind": "mass_action",
    "theta": [[-1, 0, 1], [1, -1, 0], [0, 1, -1]],
    "reactions": [
        {"reactants": [[0, 1]], "rate": 1.0},
        {"reactants": [[1, 1]], "rate": 2.0},
        {"reactants": [[2, 1]], "rate": 3.0},
    ],
}


def cycle_net():
    return MassActionNetwork(np.array(CYCLE_DOC["theta"], float), (((0, 1),), ((1, 1),), ((2, 1),)),
                             np.array([1.0, 2.0, 3.0]))


def test_single_first_order_reaction():
    net = MassActionNetwork(np.array([[-1.0], [1.0]]), (((0, 1),),), np.array([1.0]))
    assert np.array_equal(eval_mass_action(net, [2.0, 0.0]), [-2.0, 2.0])
    for x in ([2.0, 0.0], [0.3, 5.0]):
        assert np.array_equal(jacobian_mass_action(net, x), [[-1.0, 0.0], [1.0, 0.0]])


def test_empty_network_is_zero():
    net = MassActionNetwork(np.zeros((3, 0)), (), np.zeros(0))
    assert np.array_equal(eval_mass_action(net, [1.0, 2.0, 3.0]), np.zeros(3))
    assert np.array_equal(jacobian_mass_action(net, [1.0, 2.0, 3.0]), np.zeros((3, 3)))


def test_cycle_value_by_hand():
    assert np.allclose(eval_mass_action(cycle_net(), [1.0, 1.0, 1.0]), [2.0, -1.0, -1.0], rtol=0, atol=0)


def test_second_order_power_rule():
    net = MassActionNetwork(np.array([[-2.0], [1.0]]), (((0, 2),),), np.array([1.0]))
    j = jacobian_mass_action(net, [3.0, 0.0])
    # d psi / d x1 = 6, theta column (-2, 1)
    assert j[0, 0] == -12.0 and j[1, 0] == 6.0
    assert j[0, 1] == 0.0 and j[1, 1] == 0.0


def test_zero_concentration_jacobian_is_finite():
    # x_0 = 0 with order 1 must not produce 0 * 0**-1
    net = MassActionNetwork(np.array([[-1.0], [-1.0], [1.0]]), (((0, 1), (1, 1)),), np.array([2.0]))
    j = jacobian_mass_action(net, [0.0, 3.0, 1.0])
    assert np.all(np.isfinite(j))
    assert np.allclose(j[:, 0], [-6.0, -6.0, 6.0]) and np.allclose(j[:, 1], 0.0)


def test_cycle_jacobian_matches_fd():
    net = cycle_net()
    x = np.array([1.0, 2.0, 3.0])
    fd = central_difference_jacobian(lambda z: eval_mass_action(net, z), x)
    assert np.linalg.norm(jacobian_mass_action(net, x) - fd) / np.linalg.norm(fd) < 1e-7


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        eval_mass_action(cycle_net(), [1.0, 2.0])


def test_invalid_network_rejected():
    with pytest.raises(ConfigError):
        MassActionNetwork(np.zeros((2, 1)), (((0, 1),),), np.array([-1.0]))
    with pytest.raises(ConfigError):
        MassActionNetwork(np.zeros((2, 1)), (((0, 1.5),),), np.array([1.0]))


def test_load_lti():
    m = load_model({"kind": "lti", "a": [[0.9]], "c": [[1]]})
    assert isinstance(m, LinearModel) and m.n_x == 1 and m.n_y == 1
    assert np.array_equal(m.jac_f([5.0]), [[0.9]])


def test_load_lorenz_value():
    m = load_model({"kind": "lorenz63", "sigma": 10, "rho": 28, "beta": 8 / 3})
    assert m.n_x == 3
    assert np.allclose(m.f([1.0, 1.0, 1.0]), [0.0, 26.0, 1 - 8 / 3], rtol=0, atol=1e-15)


def test_load_mass_action_matches_eval():
    m = load_model(CYCLE_DOC)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.uniform(0.1, 3, 3)
        assert np.array_equal(m.f(x), eval_mass_action(cycle_net(), x))


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"a": [[1]]}, "kind"),
        ({"kind": "nope"}, "kind"),
        ({"kind": "lti", "a": [[1, 2]], "c": [[1]]}, "a"),
        ({"kind": "mass_action", "theta": [[-1, 1]], "reactions": [{"reactants": [[0, 1]], "rate": 1.0}]}, "theta"),
        ({**CYCLE_DOC, "reactions": CYCLE_DOC["reactions"][:2] + [{"reactants": [[2, 1]], "rate": "x"}]},
         "reactions[2].rate"),
    ],
)
def test_load_errors_carry_field_path(doc, field):
    with pytest.raises(ConfigError) as err:
        load_model(doc)
    assert err.value.path is not None and field in err.value.path


def test_load_from_yaml_file(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("kind: lti\na: [[0.5, 0.0], [0.0, 0.2]]\nc: [[1.0, 0.0]]\n")
    m = load_model(str(p))
    assert m.n_x == 2 and m.n_y == 1


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_builtin_jacobians_match_fd(name):
    m = builtin_model(name)
    rng = np.random.default_rng(1)
    for x in m.sample_states(100, rng):
        fd = central_difference_jacobian(m.f, x)
        err = np.linalg.norm(m.jac_f(x) - fd) / max(np.linalg.norm(fd), 1e-300)
        assert err < 1e-5
        assert np.allclose(m.jac_h(x), central_difference_jacobian(m.h, x), rtol=1e-5, atol=1e-9)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_deterministic_evaluation(name):
    m = builtin_model(name)
    x = m.sample_states(1, np.random.default_rng(2))[0]
    assert m.f(x).tobytes() == m.f(x.copy()).tobytes()


def test_h2o2_surrogate_shape(h2o2):
    net = h2o2.network
    assert h2o2.n_x == 9 and net.n_reactions == 27
    assert np.all(net.rate_constants > 0)
    # positive state -> nonnegative rates
    assert np.all(net.rates(np.full(9, 0.3)) >= 0)


def test_homogeneous_in_rate_constants(h2o2):
    x = np.linspace(0.1, 1.0, 9)
    f2 = eval_mass_action(h2o2.network.scaled(2.0), x)
    assert np.array_equal(f2, 2.0 * h2o2.f(x))


def test_linear_model_is_linear():
    rng = np.random.default_rng(3)
    m = LinearModel(rng.standard_normal((4, 4)))
    x, z = rng.standard_normal(4), rng.standard_normal(4)
    assert np.allclose(m.f(2.5 * x - 0.7 * z), 2.5 * m.f(x) - 0.7 * m.f(z), rtol=1e-14, atol=1e-14)


def test_model_doc_round_trip(h2o2):
    doc = json.loads(json.dumps(model_to_doc(h2o2)))
    m = load_model(doc)
    x = np.linspace(0.1, 1.0, 9)
    assert np.array_equal(m.f(x), h2o2.f(x))


def test_random_network_conserves_total():
    m = random_mass_action(12, 30, seed=4)
    x = np.random.default_rng(0).uniform(0.1, 2, 12)
    assert abs(m.f(x).sum()) < 1e-12
