"""Initial-state reconstruction from selected outputs over the horizon.

Levenberg-Marquardt on ``sum_k ||y_k - h_S(phi_0^k(x0_hat))||^2``; the residual
Jacobian is the stacked ``-Psi_0^k`` restricted to the selected output rows.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, IntegrationError, VargramError
from .integrator import IrkConfig, simulate
from .selection import PerSensorGramians, SensorSet, greedy_select, per_sensor_gramians
from .variational import iter_variational

log = logging.getLogger(__name__)

LAMBDA0 = 1e-3
GRAD_TOL = 1e-8
STEP_TOL = 1e-12
MAX_ITER = 200
MAX_RETRIES = 5


@dataclass
class EstimationProblem:
    model: object
    sensor_set: SensorSet
    horizon: int
    measurements: np.ndarray  # (N, |S|)
    cfg: IrkConfig
    x0_guess: np.ndarray
    x0_truth: Optional[np.ndarray] = None


@dataclass
class EstimationResult:
    x0_hat: np.ndarray
    relative_error: Optional[float]
    iterations: int
    converged: bool
    residual_norm: float


def measure(model, x0, sensors: Sequence[int], n: int, cfg: IrkConfig) -> np.ndarray:
    """Selected outputs ``y_k[S]`` for ``k < N`` along the trajectory from ``x0``."""
    traj = simulate(model, x0, n - 1, cfg)
    rows = list(sensors)
    return np.array([model.h(x)[rows] for x in traj.states])


def synthesize_problem(model, x0_truth, sensors, n: int, cfg: IrkConfig, x0_guess, noise: float = 0.0,
                       rng: Optional[np.random.Generator] = None) -> EstimationProblem:
    """Noiseless (or additive Gaussian, std ``noise``) measurements from ``x0_truth``."""
    if not isinstance(sensors, SensorSet):
        sensors = SensorSet(tuple(sensors), model.n_y)
    if len(sensors) == 0:
        raise ConfigError("at least one sensor is required", "sensors")
    y = measure(model, x0_truth, sensors.selected, n, cfg)
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        y = y + noise * rng.standard_normal(y.shape)
    return EstimationProblem(model, sensors, n, y, cfg, np.asarray(x0_guess, dtype=float),
                             np.asarray(x0_truth, dtype=float))


def residual_and_jacobian(p: EstimationProblem, x0):
    """Stacked residual ``y_meas - y(x0)`` and its Jacobian w.r.t. ``x0``."""
    model = p.model
    rows = list(p.sensor_set.selected)
    traj = simulate(model, x0, p.horizon - 1, p.cfg, record_jacobians=True)
    res = np.empty((p.horizon, len(rows)))
    jac = np.empty((p.horizon, len(rows), model.n_x))
    for t in iter_variational(model, traj, p.cfg):
        k = t.step_index
        x = traj.states[k]
        res[k] = p.measurements[k] - model.h(x)[rows]
        jac[k] = -(model.jac_h(x)[rows] @ t.phi)
    return res.reshape(-1), jac.reshape(-1, model.n_x)


def _relative_error(truth, est):
    if truth is None:
        return None
    return float(np.linalg.norm(truth - est) / np.linalg.norm(truth))


def estimate_initial_state(p: EstimationProblem, max_iter: int = MAX_ITER) -> EstimationResult:
    """Levenberg-Marquardt from ``p.x0_guess``.

    Converged when the gradient max-norm drops below 1e-8 or a step is shorter
    than 1e-12. A trial point whose simulation fails is rejected with the
    damping raised tenfold; after five consecutive failures the solve aborts.
    """
    if not np.all(np.isfinite(p.x0_guess)):
        raise ConfigError("initial guess must be finite", "x0_guess")
    if not np.all(np.isfinite(p.measurements)):
        raise ConfigError("measurements must be finite", "measurements")
    if p.measurements.shape != (p.horizon, len(p.sensor_set)):
        raise ConfigError(
            f"measurements have shape {p.measurements.shape}, expected {(p.horizon, len(p.sensor_set))}",
            "measurements",
        )
    x = p.x0_guess.astype(float).copy()
    r, j = residual_and_jacobian(p, x)
    cost = float(r @ r)
    lam = LAMBDA0
    converged = False
    it = 0
    while it < max_iter:
        g = j.T @ r  # gradient of cost/2 is -g... sign folded below
        if np.max(np.abs(g)) < GRAD_TOL:
            converged = True
            break
        jtj = j.T @ j
        d = np.diag(jtj).copy()
        d = np.maximum(d, 1e-12 * max(float(d.max()), 1e-300))
        fails = 0
        while True:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = x + step
            try:
                r_new, j_new = residual_and_jacobian(p, trial)
            except IntegrationError:
                fails += 1
                if fails > MAX_RETRIES:
                    raise
                lam *= 10.0
                continue
            break
        it += 1
        new_cost = float(r_new @ r_new)
        if new_cost < cost:
            x, r, j, cost = trial, r_new, j_new, new_cost
            lam = max(lam / 10.0, 1e-15)
            if np.linalg.norm(step) < STEP_TOL * (1.0 + np.linalg.norm(x)):
                converged = True
                break
        else:
            if np.linalg.norm(step) < STEP_TOL * (1.0 + np.linalg.norm(x)):
                converged = True
                break
            lam *= 10.0
    return EstimationResult(x, _relative_error(p.x0_truth, x), it, converged, float(np.sqrt(cost)))


def perturbed_guess(x0_truth, rel: float, rng: np.random.Generator):
    """``x0 * (1 + rel * u)`` with ``u`` uniform on ``[-1, 1]`` per component."""
    x0_truth = np.asarray(x0_truth, dtype=float)
    return x0_truth * (1.0 + rel * rng.uniform(-1.0, 1.0, size=x0_truth.shape))


def error_vs_budget(model, x0_truth, n: int, budgets: Sequence[int], cfg: IrkConfig, perturbation: float = 0.1,
                    seed: int = 0, delta: Optional[float] = None, gs: Optional[PerSensorGramians] = None,
                    noise: float = 0.0):
    """Greedy selection then estimation for each budget.

    The same seeded guess is used for every budget so rows are comparable.
    A cell that fails is kept with ``e = None`` and ``error`` set.
    """
    budgets = list(budgets)
    for r in budgets:
        if not 1 <= r <= model.n_y:
            raise ConfigError(f"budget {r} outside 1..{model.n_y}", "budgets")
    x0_truth = np.asarray(x0_truth, dtype=float)
    if gs is None:
        gs = per_sensor_gramians(model, x0_truth, n, cfg)
    rng = np.random.default_rng(seed)
    guess = perturbed_guess(x0_truth, perturbation, rng)
    noise_rng = np.random.default_rng([seed, 1])
    rows = []
    for r in budgets:
        sel, _ = greedy_select(gs, r, delta)
        row = {"r": r, "sensors": list(sel.selected), "e": None, "converged": False, "iterations": 0}
        try:
            prob = synthesize_problem(model, x0_truth, sel, n, cfg, guess, noise, noise_rng)
            res = estimate_initial_state(prob)
            row.update(e=res.relative_error, converged=res.converged, iterations=res.iterations)
        except VargramError as exc:
            log.warning("estimation failed for r=%d: %s", r, exc)
            row["error"] = str(exc)
        rows.append(row)
    return rows


def write_error_table_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "sensors", "e", "converged", "iterations"])
        for row in rows:
            e = "failed" if row["e"] is None else repr(float(row["e"]))
            w.writerow([row["r"], " ".join(str(s) for s in row["sensors"]), e,
                        str(bool(row["converged"])).lower(), row["iterations"]])
