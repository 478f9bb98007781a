"""Observability Gramians: empirical (impulse response), variational, linear."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, IntegrationError, NumericalError
from .integrator import IrkConfig, simulate
from .variational import iter_variational

DEFAULT_EPS = 1e-4
RANK_RTOL = 1e-10


@dataclass
class Gramian:
    matrix: np.ndarray
    kind: str
    horizon: int
    base_state: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        self.matrix = 0.5 * (m + m.T)

    @property
    def n_x(self):
        return self.matrix.shape[0]

    def eigenvalues(self):
        """Ascending eigenvalues."""
        return np.linalg.eigvalsh(self.matrix)

    def rank(self, rtol=RANK_RTOL):
        return numerical_rank(self.matrix, rtol)

    def to_dict(self):
        return {
            "kind": self.kind,
            "horizon": int(self.horizon),
            "base_state": None if self.base_state is None else [float(v) for v in self.base_state],
            "matrix": [[float(v) for v in row] for row in self.matrix],
            "eigenvalues": [float(v) for v in self.eigenvalues()],
        }


@dataclass
class ObservabilityMatrix:
    """Stacked output sensitivities ``[Psi_0^0; Psi_0^1; ...; Psi_0^{N-1}]``."""

    psi_stack: np.ndarray
    n_y: int = field(default=1)

    def block(self, k):
        return self.psi_stack[k * self.n_y:(k + 1) * self.n_y]

    def gramian(self):
        return self.psi_stack.T @ self.psi_stack


def numerical_rank(m, rtol=RANK_RTOL):
    """Count singular values above ``rtol * sigma_max``."""
    s = np.linalg.svd(np.atleast_2d(m), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _check_horizon(n):
    if int(n) != n or n < 1:
        raise ConfigError(f"horizon must be a positive integer, got {n}", "horizon")
    return int(n)


def linear_gramian(a, c, n: int) -> Gramian:
    """``sum_{k<N} (C A^k)^T (C A^k)`` for a discrete-time pair ``(A, C)``."""
    n = _check_horizon(n)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if a.shape[0] != a.shape[1] or c.shape[1] != a.shape[0]:
        raise ConfigError(f"incompatible shapes A {a.shape}, C {c.shape}", "a")
    return Gramian(linear_observability_matrix(a, c, n).gramian(), "linear", n)


def linear_observability_matrix(a, c, n: int) -> ObservabilityMatrix:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    blocks, ck = [], c
    for _ in range(n):
        blocks.append(ck)
        ck = ck @ a
    return ObservabilityMatrix(np.vstack(blocks), c.shape[0])


def variational_observability_matrix(model, x0, n: int, cfg: IrkConfig) -> ObservabilityMatrix:
    """Stack ``Psi_0^k`` for ``k < N`` along the trajectory from ``x0``."""
    n = _check_horizon(n)
    traj = simulate(model, x0, n - 1, cfg, record_jacobians=True)
    blocks = [model.jac_h(traj.states[t.step_index]) @ t.phi for t in iter_variational(model, traj, cfg)]
    return ObservabilityMatrix(np.vstack(blocks), model.n_y)


def variational_gramian(model, x0, n: int, cfg: IrkConfig) -> Gramian:
    """``sum_{k<N} Psi_0^k^T Psi_0^k`` from one simulation and one tangent pass.

    Only the running product and the running sum are kept, so memory does not
    grow with the horizon.
    """
    n = _check_horizon(n)
    x0 = np.asarray(x0, dtype=float)
    traj = simulate(model, x0, n - 1, cfg, record_jacobians=True)
    g = np.zeros((model.n_x, model.n_x))
    for t in iter_variational(model, traj, cfg):
        psi = model.jac_h(traj.states[t.step_index]) @ t.phi
        g += psi.T @ psi
    return Gramian(g, "variational", n, x0.copy())


def _perturbed_outputs(model, x0, n, eps, cfg, axis, sign):
    e = np.zeros(model.n_x)
    e[axis] = sign * eps
    try:
        traj = simulate(model, x0 + e, n - 1, cfg)
    except IntegrationError as exc:
        label = "+" if sign > 0 else "-"
        raise IntegrationError(
            f"perturbed simulation along axis {axis} ({label}eps) failed: {exc}", exc.residual_norm, exc.step_index
        ) from None
    return np.array([model.h(x) for x in traj.states])


def empirical_gramian(model, x0, n: int, eps: float = DEFAULT_EPS, cfg: IrkConfig = None, workers: int = 1) -> Gramian:
    """Impulse-response Gramian from ``2 n_x`` simulations at ``x0 +- eps e_i``.

    ``workers > 1`` runs the simulations on a thread pool; the sum is always
    reduced in axis order so the result does not depend on scheduling.
    """
    n = _check_horizon(n)
    if cfg is None:
        raise ConfigError("an IrkConfig is required", "cfg")
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}", "eps")
    x0 = np.asarray(x0, dtype=float)
    jobs = [(i, s) for i in range(model.n_x) for s in (1.0, -1.0)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ys = list(pool.map(lambda job: _perturbed_outputs(model, x0, n, eps, cfg, *job), jobs))
    else:
        ys = [_perturbed_outputs(model, x0, n, eps, cfg, *job) for job in jobs]
    # dy[k] is the n_y x n_x impulse-response block at sample k
    dy = np.stack([ys[2 * i] - ys[2 * i + 1] for i in range(model.n_x)], axis=2)
    g = np.einsum("kyi,kyj->ij", dy, dy) / (4.0 * eps * eps)
    return Gramian(g, "empirical", n, x0.copy())


def relative_distance(a, b):
    """``||a - b||_F / ||b||_F`` for matrices or Gramians."""
    a = a.matrix if isinstance(a, Gramian) else np.asarray(a)
    b = b.matrix if isinstance(b, Gramian) else np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def normalized_map(g) -> np.ndarray:
    """Min-max rescale of the Gramian's entries onto ``[-1, 1]``.

    A range symmetric about zero reduces to division by the largest magnitude,
    so signs are kept.
    """
    m = g.matrix if isinstance(g, Gramian) else np.asarray(g, dtype=float)
    lo, hi = float(m.min()), float(m.max())
    if not hi > lo:
        raise NumericalError("cannot normalise a constant matrix (degenerate min-max range)")
    if lo == -hi:
        return m / hi
    return 2.0 * (m - lo) / (hi - lo) - 1.0


def write_gramian_json(g: Gramian, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(g.to_dict(), fh, indent=2)
        fh.write("\n")


def write_heatmap_csv(m, path, labels=None):
    m = np.asarray(m)
    labels = labels or [f"x{i}" for i in range(m.shape[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(labels))
        for label, row in zip(labels, m):
            w.writerow([label] + [repr(float(v)) for v in row])
