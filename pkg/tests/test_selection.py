import itertools
import math

import numpy as np
import pytest

from vargram import CombinatorialBudgetError, ConfigError, NumericalError, variational_gramian
from vargram.selection import (
    PerSensorGramians,
    SensorSet,
    brute_force_select,
    default_delta,
    greedy_ratio,
    greedy_select,
    objective_logdet,
    per_sensor_gramians,
    submodularity_audit,
    write_edge_list_csv,
)

from conftest import CYCLE_X0, H2O2_X0, LORENZ_X0, random_psd_sensors

GUARANTEE = 1.0 - 1.0 / math.e


def gs_of(mats):
    return PerSensorGramians(np.asarray(mats, dtype=float), horizon=1)


def test_empty_set_scores_zero():
    gs = gs_of([np.eye(3), 2 * np.eye(3)])
    assert objective_logdet(gs, (), 1e-6) == 0.0


def test_identity_offset_closed_form():
    # log det((1+d) I) - log det(d I) with d = 1e-10
    gs = gs_of([np.eye(2)])
    d = 1e-10
    expect = 2 * (math.log1p(d) - math.log(d))
    assert objective_logdet(gs, (0,), d) == pytest.approx(expect, rel=1e-12)
    assert expect == pytest.approx(46.05, abs=5e-3)


def test_duplicate_sensor_has_smaller_gain():
    c = np.array([[1.0, 0.5]])
    v = c.T @ c
    gs = gs_of([v, v])
    _, gains = greedy_select(gs, 2, 1e-6)
    assert gains[1] < gains[0]
    # rank-1 determinant lemma: det(dI + m vvT) = d^(n-1) (d + m s)
    d, s = 1e-6, float(c[0] @ c[0])
    assert gains[0] == pytest.approx(math.log(1 + s / d), rel=1e-9)
    assert gains[1] == pytest.approx(math.log((d + 2 * s) / (d + s)), rel=1e-9)


def test_dominant_sensor_selected():
    gs = gs_of([2 * np.eye(2), np.eye(2)])
    sel, _ = greedy_select(gs, 1)
    assert sel.selected == (0,)
    assert brute_force_select(gs, 1).selected == (0,)


def test_orthogonal_rank_one_one_per_direction():
    n = 4
    gs = gs_of([np.outer(e, e) for e in np.eye(n)])
    sel, gains = greedy_select(gs, n)
    assert sorted(sel.selected) == list(range(n))
    assert sel.selected == (0, 1, 2, 3)  # all gains tie; lowest index wins
    assert np.allclose(gains, gains[0], rtol=1e-12)


def test_symmetric_tie_goes_to_lowest_index():
    gs = gs_of([np.eye(3)] * 4)
    assert greedy_select(gs, 1)[0].selected == (0,)
    assert brute_force_select(gs, 1).selected == (0,)
    assert brute_force_select(gs, 2).selected == (0, 1)


def test_random_six_four_meets_guarantee():
    rng = np.random.default_rng(11)
    gs = gs_of(random_psd_sensors(rng, 6, 4))
    delta = default_delta(gs)
    greedy, _ = greedy_select(gs, 3, delta)
    # independent enumeration oracle over the 20 subsets
    best = max(objective_logdet(gs, s, delta) for s in itertools.combinations(range(6), 3))
    assert objective_logdet(gs, greedy, delta) >= GUARANTEE * best
    assert greedy_ratio(gs, 3, delta) == pytest.approx(objective_logdet(gs, greedy, delta) / best)


def test_brute_force_is_exact_maximiser():
    rng = np.random.default_rng(3)
    gs = gs_of(random_psd_sensors(rng, 7, 3, rank=2))
    delta = default_delta(gs)
    opt = brute_force_select(gs, 3, delta)
    vals = {s: objective_logdet(gs, s, delta) for s in itertools.combinations(range(7), 3)}
    assert objective_logdet(gs, opt, delta) == max(vals.values())


def test_gains_sum_to_objective():
    rng = np.random.default_rng(5)
    gs = gs_of(random_psd_sensors(rng, 6, 5))
    sel, gains = greedy_select(gs, 4, 1e-4)
    assert sum(gains) == pytest.approx(objective_logdet(gs, sel, 1e-4), rel=1e-12)
    assert all(g1 >= g2 - 1e-12 for g1, g2 in zip(gains, gains[1:]))


def test_audit_modular_ground_truth():
    gs = gs_of([a * np.eye(3) for a in (0.5, 1.0, 2.0, 3.0, 0.1)])
    rep = submodularity_audit(gs, 1e-3)
    assert rep.ok and rep.checked > 0
    assert rep.checked == sum(math.comb(5, k) * 2 ** k * (5 - k) for k in range(6))


def test_audit_random_instances():
    rng = np.random.default_rng(21)
    for _ in range(10):
        n_y, n_x = int(rng.integers(3, 7)), int(rng.integers(2, 6))
        gs = gs_of(random_psd_sensors(rng, n_y, n_x, rank=int(rng.integers(1, 3))))
        rep = submodularity_audit(gs)
        assert rep.ok, rep.examples


def test_audit_reports_violation_for_non_submodular_input():
    # a negative semidefinite "sensor" breaks monotonicity; the audit counts it
    gs = gs_of([np.eye(2), -0.5 * np.eye(2)])
    rep = submodularity_audit(gs, 1.0)
    assert rep.monotone_violations > 0 and not rep.ok


def test_audit_refuses_large_ground_set():
    gs = gs_of([np.eye(2)] * 7)
    with pytest.raises(ConfigError):
        submodularity_audit(gs)


def test_audit_surrogate(h2o2, cfg):
    gs = per_sensor_gramians(h2o2, H2O2_X0, 200, cfg)
    rep = submodularity_audit(gs, n_max=gs.n_y)
    assert rep.ok, rep.examples


@pytest.mark.parametrize("name,x0", [("lorenz", LORENZ_X0), ("cycle3", CYCLE_X0), ("h2o2", H2O2_X0)])
def test_modularity_matches_full_gramian(request, cfg, name, x0):
    model = request.getfixturevalue(name)
    gs = per_sensor_gramians(model, x0, 100, cfg)
    full = variational_gramian(model, x0, 100, cfg).matrix
    assert np.linalg.norm(gs.full() - full) / np.linalg.norm(full) < 1e-10


def test_disjoint_additivity():
    rng = np.random.default_rng(2)
    gs = gs_of(random_psd_sensors(rng, 6, 4))
    a, b = (0, 2), (1, 4, 5)
    assert np.allclose(gs.of(a + b), gs.of(a) + gs.of(b), rtol=0, atol=1e-12)


def test_scaling_invariance():
    rng = np.random.default_rng(8)
    gs = gs_of(random_psd_sensors(rng, 6, 4, rank=2))
    for beta in (1e-6, 0.3, 7.0, 1e5):
        for r in (1, 2, 3):
            assert greedy_select(gs.scaled(beta), r)[0].selected == greedy_select(gs, r)[0].selected
            assert brute_force_select(gs.scaled(beta), r).selected == brute_force_select(gs, r).selected


def test_full_budget_is_full_logdet():
    rng = np.random.default_rng(4)
    gs = gs_of(random_psd_sensors(rng, 5, 3))
    d = 1e-3
    sel, _ = greedy_select(gs, 5, d)
    _, ld = np.linalg.slogdet(d * np.eye(3) + gs.full())
    assert objective_logdet(gs, sel, d) == pytest.approx(ld - 3 * math.log(d), rel=1e-12)


def test_budget_preconditions():
    gs = gs_of([np.eye(2)] * 3)
    for r in (0, 4):
        with pytest.raises(ConfigError):
            greedy_select(gs, r)
        with pytest.raises(ConfigError):
            brute_force_select(gs, r)
    with pytest.raises(ConfigError):
        objective_logdet(gs, (0,), 0.0)


def test_combinatorial_budget_refused():
    gs = PerSensorGramians(np.zeros((40, 1, 1)), horizon=1)
    with pytest.raises(CombinatorialBudgetError):
        brute_force_select(gs, 20)


def test_non_finite_score_raises():
    gs = gs_of([np.array([[np.inf, 0.0], [0.0, 1.0]])])
    with pytest.raises(NumericalError):
        objective_logdet(gs, (0,), 1.0)


def test_sensor_set_validation():
    assert list(SensorSet((2, 0), 4).gamma) == [1, 0, 1, 0]
    with pytest.raises(ConfigError):
        SensorSet((1, 1), 3)
    with pytest.raises(ConfigError):
        SensorSet((3,), 3)


def test_edge_list_csv(tmp_path):
    gs = gs_of([np.array([[2.0, 1.0], [1.0, 3.0]]), np.eye(2)])
    sel, _ = greedy_select(gs, 2)
    p = tmp_path / "edges.csv"
    write_edge_list_csv(gs, [sel], p, ["a", "b"])
    lines = p.read_text().splitlines()
    assert lines[0] == "r,sensors,i,j,source,target,value"
    assert len(lines) == 1 + 3
