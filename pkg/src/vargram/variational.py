"""Tangent-linear propagation along a trajectory.

``Phi_0^k`` maps an initial perturbation to the perturbation at step ``k``; it
is the left-ordered product of the per-step Jacobians of the IRK map.
``Psi_0^k = dh/dx(x_k) @ Phi_0^k`` is the matching output sensitivity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, IntegrationError
from .integrator import IrkConfig, Trajectory, irk_step

DEFAULT_MEMORY_BUDGET = 10_000_000


@dataclass
class VariationalTransition:
    phi: np.ndarray
    step_index: int
    # d x_k / d x_{k-1}; None at k = 0
    step: Optional[np.ndarray] = None


@dataclass
class VariationalOutputMap:
    psi: np.ndarray
    step_index: int


def step_jacobians(model, traj: Trajectory, cfg: IrkConfig) -> Iterator[np.ndarray]:
    """Yield ``d x_{k+1}/d x_k`` for ``k = 0 .. N-1``.

    Uses the Jacobians recorded during simulation when present, otherwise
    re-solves each step from the stored state.
    """
    if traj.states.shape[1] != model.n_x:
        raise ConfigError(
            f"trajectory has {traj.states.shape[1]} states per sample, model has n_x={model.n_x}", "trajectory"
        )
    if traj.step_jacobians is not None:
        if len(traj.step_jacobians) != traj.horizon:
            raise ConfigError("recorded step Jacobians do not match the trajectory length", "trajectory")
        yield from traj.step_jacobians
        return
    for k in range(traj.horizon):
        try:
            yield irk_step(model, traj.states[k], cfg).step_jacobian
        except IntegrationError as exc:
            raise IntegrationError(f"step {k}: {exc}", exc.residual_norm, step_index=k) from None


def iter_variational(model, traj: Trajectory, cfg: IrkConfig) -> Iterator[VariationalTransition]:
    """Stream ``Phi_0^0 .. Phi_0^N`` keeping only the running product."""
    phi = np.eye(model.n_x)
    yield VariationalTransition(phi, 0)
    for k, m in enumerate(step_jacobians(model, traj, cfg), start=1):
        phi = m @ phi
        yield VariationalTransition(phi, k, m)


def propagate_variational(
    model, traj: Trajectory, cfg: IrkConfig, memory_budget: int = DEFAULT_MEMORY_BUDGET
) -> List[VariationalTransition]:
    """All transitions ``Phi_0^0 .. Phi_0^N`` for the trajectory.

    Raises ``ConfigError`` when storing them would exceed ``memory_budget``
    scalars; use :func:`iter_variational` to stream instead.
    """
    needed = 2 * model.n_x * model.n_x * len(traj)
    if needed > memory_budget:
        raise ConfigError(
            f"storing {len(traj)} transitions needs {needed} scalars (budget {memory_budget}); "
            "stream with iter_variational instead",
            "memory_budget",
        )
    return list(iter_variational(model, traj, cfg))


def output_maps(model, traj: Trajectory, phis: Sequence[VariationalTransition]) -> List[VariationalOutputMap]:
    """``Psi_0^k = jac_h(x_k) Phi_0^k`` for ``k = 0 .. N-1``.

    ``phis`` must cover at least the first ``len(traj) - 1`` steps; the final
    state of the trajectory is not part of an ``N``-sample output window.
    """
    n = len(traj) - 1
    if n < 1:
        raise ConfigError("need a trajectory with at least two samples", "trajectory")
    if len(phis) < n:
        raise ConfigError(f"{len(phis)} transitions for {n} output samples", "phis")
    out = []
    for k in range(n):
        if phis[k].step_index != k:
            raise ConfigError(f"transition {k} carries step index {phis[k].step_index}", "phis")
        out.append(VariationalOutputMap(model.jac_h(traj.states[k]) @ phis[k].phi, k))
    return out


def perturbation_response(model, x0, dx0, n_steps: int, cfg: IrkConfig) -> np.ndarray:
    """Central-difference estimate of ``Phi_0^N dx0`` from two re-simulations."""
    from .integrator import simulate

    x0 = np.asarray(x0, dtype=float)
    plus = simulate(model, x0 + dx0, n_steps, cfg).states[-1]
    minus = simulate(model, x0 - dx0, n_steps, cfg).states[-1]
    return (plus - minus) / 2.0
