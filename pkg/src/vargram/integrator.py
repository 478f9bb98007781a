"""Two-stage implicit Runge-Kutta discretisation and its exact step Jacobian.

One step from ``x`` solves the coupled stage equations

    z1 = x + T/4  * (f(z1) - f(z2))
    z2 = x + T/12 * (3 f(z1) + 5 f(z2))

and returns ``x + T/4 * (f(z1) + 3 f(z2))`` (third order, Radau IA tableau).
The step Jacobian follows by differentiating the stage equations: with
``K = [[T/4 J1, -T/4 J2], [T/4 J1, 5T/12 J2]]`` the stage sensitivities solve
``(I - K) Q = [I; I]`` and ``dx'/dx = I + T/4 J1 Q1 + 3T/4 J2 Q2``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, IntegrationError

# Stage matrix and weights of the scheme.
A11, A12 = 0.25, -0.25
A21, A22 = 0.25, 5.0 / 12.0
B1, B2 = 0.25, 0.75

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class IrkConfig:
    step_size: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if not (math.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigError(f"step size must be positive and finite, got {self.step_size}", "step_size")
        if self.newton_max_iter < 1:
            raise ConfigError("newton_max_iter must be at least 1", "newton_max_iter")
        if not self.newton_tol > 0:
            raise ConfigError("newton_tol must be positive", "newton_tol")


@dataclass
class IrkStep:
    x_next: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    step_jacobian: Optional[np.ndarray]
    residual_norm: float = 0.0
    iterations: int = 0


@dataclass
class Trajectory:
    """States ``x_0 .. x_N`` sampled every ``step_size``.

    ``step_jacobians[k]`` (when recorded) is ``d x_{k+1} / d x_k``.
    """

    states: np.ndarray
    step_size: float
    step_jacobians: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @property
    def horizon(self):
        return len(self.states) - 1

    @property
    def times(self):
        return self.step_size * np.arange(len(self.states))

    def __len__(self):
        return len(self.states)


def _stage_residual(model, x, z1, z2, h):
    f1, f2 = model.f(z1), model.f(z2)
    r1 = z1 - x - h * (A11 * f1 + A12 * f2)
    r2 = z2 - x - h * (A21 * f1 + A22 * f2)
    return np.concatenate([r1, r2]), f1, f2


def _iteration_matrix(model, z1, z2, h):
    n = z1.shape[0]
    j1, j2 = model.jac_f(z1), model.jac_f(z2)
    k = np.empty((2 * n, 2 * n))
    k[:n, :n] = (h * A11) * j1
    k[:n, n:] = (h * A12) * j2
    k[n:, :n] = (h * A21) * j1
    k[n:, n:] = (h * A22) * j2
    return np.eye(2 * n) - k, j1, j2


def irk_step(model, x, cfg: IrkConfig, jacobian: bool = True) -> IrkStep:
    """Advance one step; optionally return the exact step Jacobian."""
    # overflow is detected explicitly below and reported as IntegrationError
    with np.errstate(over="ignore", invalid="ignore"):
        return _irk_step(model, x, cfg, jacobian)


def _irk_step(model, x, cfg, jacobian):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    h = cfg.step_size
    z1, z2 = x.copy(), x.copy()
    res, f1, f2 = _stage_residual(model, x, z1, z2, h)
    rnorm = float(np.max(np.abs(res))) if n else 0.0
    it = 0
    # Iterate past newton_tol down to roundoff: the Newton step is quadratic near
    # the root, and a loosely converged stage would leak noise into every
    # finite-difference comparison downstream.
    floor = 16 * _EPS * (1.0 + float(np.max(np.abs(x)))) if n else 0.0
    while rnorm > floor:
        if it >= cfg.newton_max_iter:
            if rnorm <= cfg.newton_tol:
                break
            raise IntegrationError(
                f"Newton iteration did not converge after {it} iterations "
                f"(residual {rnorm:.3e} > {cfg.newton_tol:.1e}); try a smaller step size",
                residual_norm=rnorm,
            )
        m, _, _ = _iteration_matrix(model, z1, z2, h)
        try:
            dz = np.linalg.solve(m, -res)
        except np.linalg.LinAlgError:
            raise IntegrationError(
                "singular Newton matrix in the stage solve; try a smaller step size", residual_norm=rnorm
            ) from None
        z1 = z1 + dz[:n]
        z2 = z2 + dz[n:]
        it += 1
        prev = rnorm
        res, f1, f2 = _stage_residual(model, x, z1, z2, h)
        rnorm = float(np.max(np.abs(res)))
        if not np.isfinite(rnorm):
            raise IntegrationError("stage solve produced non-finite values; try a smaller step size",
                                   residual_norm=rnorm)
        # stagnation at roundoff level
        if rnorm <= cfg.newton_tol and rnorm >= 0.5 * prev:
            break

    x_next = x + h * (B1 * f1 + B2 * f2)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError("state became non-finite; try a smaller step size", residual_norm=rnorm)

    step_jac = None
    if jacobian:
        step_jac = step_jacobian_at(model, z1, z2, h)
    return IrkStep(x_next, z1, z2, step_jac, rnorm, it)


def step_jacobian_at(model, z1, z2, h):
    """``d x_{k+1} / d x_k`` from converged stage vectors."""
    n = z1.shape[0]
    m, j1, j2 = _iteration_matrix(model, z1, z2, h)
    rhs = np.vstack([np.eye(n), np.eye(n)])
    try:
        q = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        raise IntegrationError("I - K is singular at this step; try a smaller step size") from None
    if not np.all(np.isfinite(q)):
        raise IntegrationError("I - K is numerically singular at this step; try a smaller step size")
    return np.eye(n) + (h * B1) * (j1 @ q[:n]) + (h * B2) * (j2 @ q[n:])


def step_map(model, x, cfg: IrkConfig):
    """``x -> x_{k+1}`` without the Jacobian."""
    return irk_step(model, x, cfg, jacobian=False).x_next


def simulate(model, x0, n_steps: int, cfg: IrkConfig, record_jacobians: bool = False) -> Trajectory:
    """Run ``n_steps`` IRK steps from ``x0``."""
    if n_steps < 0:
        raise ConfigError(f"n_steps must be nonnegative, got {n_steps}", "n_steps")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.n_x,):
        raise ConfigError(f"initial state has shape {x.shape}, model has n_x={model.n_x}", "x0")
    if not np.all(np.isfinite(x)):
        raise ConfigError("initial state must be finite", "x0")
    states = np.empty((n_steps + 1, model.n_x))
    states[0] = x
    jacs = [] if record_jacobians else None
    for k in range(n_steps):
        try:
            step = irk_step(model, x, cfg, jacobian=record_jacobians)
        except IntegrationError as exc:
            raise IntegrationError(f"step {k}: {exc}", exc.residual_norm, step_index=k) from None
        x = step.x_next
        states[k + 1] = x
        if record_jacobians:
            jacs.append(step.step_jacobian)
    return Trajectory(states, cfg.step_size, jacs)


def write_trajectory_csv(traj: Trajectory, path):
    n_x = traj.states.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t"] + [f"x_{i}" for i in range(n_x)])
        for k, (t, x) in enumerate(zip(traj.times, traj.states)):
            w.writerow([k, repr(float(t))] + [repr(float(v)) for v in x])
