"""Sensor-node selection by greedy maximisation of a regularised log det.

The variational Gramian is modular in the sensor set: ``V(S) = sum_{j in S}
V({j})``. Scores are ``log det(delta I + V(S)) - log det(delta I)`` so the
empty set scores zero.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import CombinatorialBudgetError, ConfigError, NumericalError
from .gramian import normalized_map
from .integrator import IrkConfig, simulate
from .variational import iter_variational

MAX_SUBSETS = 1_000_000


@dataclass
class SensorSet:
    selected: tuple
    n_y: int
    budget: Optional[int] = None

    def __post_init__(self):
        self.selected = tuple(int(j) for j in self.selected)
        if len(set(self.selected)) != len(self.selected):
            raise ConfigError("duplicate sensors in selection", "selected")
        if any(j < 0 or j >= self.n_y for j in self.selected):
            raise ConfigError(f"sensor index out of range 0..{self.n_y - 1}", "selected")
        if self.budget is None:
            self.budget = len(self.selected)
        if not len(self.selected) <= self.budget <= self.n_y:
            raise ConfigError(f"need |S| <= budget <= n_y, got {len(self.selected)}, {self.budget}, {self.n_y}",
                              "budget")

    @property
    def gamma(self):
        g = np.zeros(self.n_y, dtype=int)
        g[list(self.selected)] = 1
        return g

    def __len__(self):
        return len(self.selected)


@dataclass
class PerSensorGramians:
    per_sensor: np.ndarray  # (n_y, n_x, n_x)
    horizon: int
    base_state: Optional[np.ndarray] = None

    @property
    def n_y(self):
        return self.per_sensor.shape[0]

    @property
    def n_x(self):
        return self.per_sensor.shape[1]

    def full(self):
        return self.per_sensor.sum(axis=0)

    def of(self, sensors):
        """``V(S)`` as a plain sum over the selected sensors."""
        out = np.zeros((self.n_x, self.n_x))
        for j in sensors:
            out += self.per_sensor[j]
        return out

    def scaled(self, beta):
        return PerSensorGramians(self.per_sensor * beta, self.horizon, self.base_state)


@dataclass
class AuditReport:
    checked: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    monotone_checked: int = 0
    monotone_violations: int = 0
    worst_monotone_slack: float = math.inf
    examples: List[tuple] = field(default_factory=list)

    @property
    def ok(self):
        return self.violations == 0 and self.monotone_violations == 0


def per_sensor_gramians(model, x0, n: int, cfg: IrkConfig) -> PerSensorGramians:
    """``V({j}) = sum_{k<N} Phi_0^k^T c_j(x_k)^T c_j(x_k) Phi_0^k`` for every output ``j``."""
    if n < 1:
        raise ConfigError("horizon must be positive", "horizon")
    x0 = np.asarray(x0, dtype=float)
    traj = simulate(model, x0, n - 1, cfg, record_jacobians=True)
    out = np.zeros((model.n_y, model.n_x, model.n_x))
    for t in iter_variational(model, traj, cfg):
        psi = model.jac_h(traj.states[t.step_index]) @ t.phi
        # row j of psi is c_j(x_k) Phi_0^k
        out += psi[:, :, None] * psi[:, None, :]
    return PerSensorGramians(out, n, x0.copy())


def default_delta(gs: PerSensorGramians) -> float:
    """``1e-8 * trace(V_full) / n_x`` (falls back to 1e-8 for a zero Gramian)."""
    scale = float(np.trace(gs.full())) / gs.n_x
    return 1e-8 * scale if scale > 0 else 1e-8


def regularized_logdet(m, delta=0.0):
    """``log det(delta I + m)``; ``-inf`` when the matrix is singular."""
    m = np.asarray(m, dtype=float)
    sign, val = np.linalg.slogdet(delta * np.eye(m.shape[0]) + m)
    if sign <= 0:
        return -math.inf
    return float(val)


def _score(gs, sensors, delta):
    val = regularized_logdet(gs.of(sensors), delta)
    if not np.isfinite(val):
        raise NumericalError(f"log det is not finite for sensors {sorted(sensors)} (delta={delta})")
    return val - gs.n_x * math.log(delta)


def objective_logdet(gs: PerSensorGramians, s, delta: Optional[float] = None) -> float:
    """Offset score ``log det(delta I + V(S)) - n_x log(delta)``."""
    if delta is None:
        delta = default_delta(gs)
    if not delta > 0:
        raise ConfigError("delta must be positive for the offset score", "delta")
    sensors = s.selected if isinstance(s, SensorSet) else tuple(s)
    return _score(gs, sensors, delta)


def greedy_select(gs: PerSensorGramians, budget: int, delta: Optional[float] = None):
    """Forward greedy; returns ``(SensorSet, gains)`` with gains in selection order.

    Ties go to the lowest sensor index.
    """
    if not 1 <= budget <= gs.n_y:
        raise ConfigError(f"budget must lie in 1..{gs.n_y}, got {budget}", "budget")
    if delta is None:
        delta = default_delta(gs)
    chosen, gains = [], []
    current = 0.0
    for _ in range(budget):
        best, best_val = None, -math.inf
        for j in range(gs.n_y):
            if j in chosen:
                continue
            val = _score(gs, chosen + [j], delta)
            if val > best_val:
                best, best_val = j, val
        chosen.append(best)
        gains.append(best_val - current)
        current = best_val
    return SensorSet(tuple(chosen), gs.n_y, budget), gains


def brute_force_select(gs: PerSensorGramians, budget: int, delta: Optional[float] = None) -> SensorSet:
    """Exact maximiser over all ``C(n_y, r)`` subsets (lexicographic tie-break)."""
    if not 1 <= budget <= gs.n_y:
        raise ConfigError(f"budget must lie in 1..{gs.n_y}, got {budget}", "budget")
    total = math.comb(gs.n_y, budget)
    if total > MAX_SUBSETS:
        raise CombinatorialBudgetError(f"C({gs.n_y}, {budget}) = {total} subsets exceeds {MAX_SUBSETS}")
    if delta is None:
        delta = default_delta(gs)
    best, best_val = None, -math.inf
    for combo in itertools.combinations(range(gs.n_y), budget):
        val = _score(gs, combo, delta)
        if val > best_val:
            best, best_val = combo, val
    return SensorSet(best, gs.n_y, budget)


def greedy_ratio(gs: PerSensorGramians, budget: int, delta: Optional[float] = None) -> float:
    """Greedy offset score divided by the brute-force optimum."""
    if delta is None:
        delta = default_delta(gs)
    greedy, _ = greedy_select(gs, budget, delta)
    opt = brute_force_select(gs, budget, delta)
    best = objective_logdet(gs, opt, delta)
    if best <= 0:
        return 1.0
    return objective_logdet(gs, greedy, delta) / best


def submodularity_audit(gs: PerSensorGramians, delta: Optional[float] = None, n_max: int = 6,
                        tol: float = 1e-9) -> AuditReport:
    """Check diminishing returns over all ``A <= B``, ``s not in B`` and monotonicity.

    Violations are counted, never raised. Slack is
    ``[O(A+s) - O(A)] - [O(B+s) - O(B)]`` (should be >= 0) and ``O(B) - O(A)``.
    """
    if gs.n_y > n_max:
        raise ConfigError(f"audit is exhaustive; n_y={gs.n_y} exceeds n_max={n_max}", "n_max")
    if delta is None:
        delta = default_delta(gs)
    n_y = gs.n_y
    scores = {}
    for mask in range(1 << n_y):
        scores[mask] = _score(gs, [j for j in range(n_y) if mask >> j & 1], delta)
    rep = AuditReport()
    for b in range(1 << n_y):
        # enumerate every submask a of b
        a = b
        while True:
            diff = scores[b] - scores[a]
            rep.monotone_checked += 1
            rep.worst_monotone_slack = min(rep.worst_monotone_slack, diff)
            if diff < -tol:
                rep.monotone_violations += 1
            for s in range(n_y):
                if b >> s & 1:
                    continue
                slack = (scores[a | 1 << s] - scores[a]) - (scores[b | 1 << s] - scores[b])
                rep.checked += 1
                rep.worst_slack = min(rep.worst_slack, slack)
                if slack < -tol:
                    rep.violations += 1
                    if len(rep.examples) < 10:
                        rep.examples.append((a, b, s, slack))
            if a == 0:
                break
            a = (a - 1) & b
    return rep


def selection_report(order, gains, objective, ratio=None):
    rep = {"order": [int(j) for j in order], "gains": [float(g) for g in gains], "objective": float(objective)}
    if ratio is not None:
        rep["ratio_vs_bruteforce"] = float(ratio)
    return rep


def write_selection_json(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_edge_list_csv(gs: PerSensorGramians, selections: Sequence[SensorSet], path, labels=None):
    """Normalised observability relations ``(i, j, value)`` of ``V(S)`` for each selection."""
    labels = labels or [f"x{i}" for i in range(gs.n_x)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "sensors", "i", "j", "source", "target", "value"])
        for sel in selections:
            m = normalized_map(gs.of(sel.selected))
            tag = " ".join(str(j) for j in sel.selected)
            for i in range(gs.n_x):
                for j in range(i, gs.n_x):
                    w.writerow([len(sel), tag, i, j, labels[i], labels[j], repr(float(m[i, j]))])
