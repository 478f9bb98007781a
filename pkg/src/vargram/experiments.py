"""Experiment pipelines behind the CLI: Gramian comparison and the full study.

Every artifact is UTF-8 CSV/JSON with floats written via ``repr`` so that a
rerun with the same config and seed reproduces the bytes exactly. Wall times
appear only in the comparison table.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError, NumericalError, VargramError
from .estimation import error_vs_budget, write_error_table_csv
from .gramian import (
    Gramian,
    empirical_gramian,
    normalized_map,
    relative_distance,
    variational_gramian,
    write_gramian_json,
    write_heatmap_csv,
)
from .integrator import simulate, write_trajectory_csv
from .lyapunov import logdet_le_relation, lyapunov_spectrum, observability_verdict, write_spectrum_csv
from .selection import (
    PerSensorGramians,
    brute_force_select,
    default_delta,
    greedy_select,
    objective_logdet,
    write_edge_list_csv,
)
from .variational import propagate_variational

log = logging.getLogger(__name__)

STUDY_STAGES = ("simulate", "gramians", "lyapunov", "selection", "estimation")


def _json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _labels(model):
    names = getattr(model, "species_names", None)
    return list(names) if names else [f"x{i}" for i in range(model.n_x)]


def versions():
    import yaml

    return {"python": platform.python_version(), "numpy": np.__version__, "pyyaml": yaml.__version__,
            "vargram": __version__}


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, files, stages, status="ok", error=None):
    """``manifest.json`` listing every emitted file with its SHA-256."""
    doc = {
        "command": command,
        "status": status,
        "config_sha256": cfg.digest(),
        "config": cfg.to_doc(),
        "seed": cfg.seed,
        "versions": versions(),
        "stages_completed": list(stages),
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    doc["config"].pop("outputs")
    if error is not None:
        doc["error"] = error
    _json(doc, out / "manifest.json")
    return doc


def _write_map(g, path, labels, files):
    """Heatmap CSV of the normalised Gramian; skipped (returns False) when the range is degenerate."""
    try:
        m = normalized_map(g)
    except NumericalError as exc:
        log.warning("no normalised map for %s: %s", path.name, exc)
        return False
    write_heatmap_csv(m, path, labels)
    files.append(path.name)
    return True


def _write_edges(gs, sets, path, labels, files):
    try:
        write_edge_list_csv(gs, sets, path, labels)
    except NumericalError as exc:
        log.warning("no edge list: %s", exc)
        path.unlink(missing_ok=True)
        return False
    files.append(path.name)
    return True


def _want_empirical(cfg, model, no_empirical):
    return not no_empirical and model.n_x <= cfg.empirical_max_states


def run_gramian_compare(cfg: ExperimentConfig, out, no_empirical=False):
    """Var-Gram and Empr-Gram at ``x0 (1 + alpha)``: wall times, distance, normalised maps."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.load_model()
    x0 = cfg.initial_state(model)
    irk = cfg.irk()
    labels = _labels(model)
    files = []

    t0 = time.perf_counter()
    gv = variational_gramian(model, x0, cfg.horizon, irk)
    t_var = time.perf_counter() - t0
    write_gramian_json(gv, out / "var_gramian.json")
    files.append("var_gramian.json")
    _write_map(gv, out / "var_gramian_map.csv", labels, files)

    row = {"model": model.name, "n_x": model.n_x, "N": cfg.horizon, "T": cfg.step_size, "eps": cfg.eps,
           "alpha": cfg.perturbation_alpha, "var_gram_seconds": t_var, "empr_gram_seconds": None,
           "relative_distance": None}
    if _want_empirical(cfg, model, no_empirical):
        t0 = time.perf_counter()
        ge = empirical_gramian(model, x0, cfg.horizon, cfg.eps, irk, workers=cfg.workers)
        row["empr_gram_seconds"] = time.perf_counter() - t0
        row["relative_distance"] = relative_distance(ge, gv)
        write_gramian_json(ge, out / "empr_gramian.json")
        files.append("empr_gramian.json")
        _write_map(ge, out / "empr_gramian_map.csv", labels, files)
    with open(out / "gramian_compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(row))
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row.values()])
    files.append("gramian_compare.csv")
    write_manifest(out, cfg, "compare", files, ["compare"])
    return row


def _variational_pass(model, x0, n, irk):
    """One simulation of ``N`` steps: Gramian over ``k < N`` and spectrum of ``Phi_0^N``."""
    traj = simulate(model, x0, n, irk, record_jacobians=True)
    phis = propagate_variational(model, traj, irk)
    g = np.zeros((model.n_x, model.n_x))
    per = np.zeros((model.n_y, model.n_x, model.n_x))
    for k in range(n):
        psi = model.jac_h(traj.states[k]) @ phis[k].phi
        g += psi.T @ psi
        per += psi[:, :, None] * psi[:, None, :]
    gram = Gramian(g, "variational", n, np.array(x0, dtype=float))
    return traj, phis, gram, PerSensorGramians(per, n, np.array(x0, dtype=float))


def selection_stage(gs: PerSensorGramians, budgets, max_subsets):
    """Greedy order, gains and score per budget, plus the brute-force ratio when affordable."""
    delta = default_delta(gs)
    stages, sets = [], []
    for r in budgets:
        sel, gains = greedy_select(gs, r, delta)
        obj = objective_logdet(gs, sel, delta)
        entry = {"r": r, "order": list(sel.selected), "gains": [float(v) for v in gains], "objective": obj}
        if math.comb(gs.n_y, r) <= max_subsets:
            best = objective_logdet(gs, brute_force_select(gs, r, delta), delta)
            entry["ratio_vs_bruteforce"] = obj / best if best > 0 else 1.0
        stages.append(entry)
        sets.append(sel)
    return {"delta": delta, "horizon": gs.horizon, "stages": stages}, sets


def run_full_study(cfg: ExperimentConfig, out, no_empirical=False):
    """Simulate, Gramians, Lyapunov verdict, selection and estimation.

    On failure the manifest records the completed stages and the error, then
    the exception propagates.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files, done = [], []
    stage = STUDY_STAGES[0]
    try:
        model = cfg.load_model()
        cfg.check_budgets(model)
        x0 = cfg.initial_state(model)
        irk = cfg.irk()
        labels = _labels(model)
        n = cfg.horizon

        traj, phis, gv, gs = _variational_pass(model, x0, n, irk)
        write_trajectory_csv(traj, out / "trajectory.csv")
        files.append("trajectory.csv")
        done.append(stage)

        stage = "gramians"
        write_gramian_json(gv, out / "var_gramian.json")
        files.append("var_gramian.json")
        summary = {"n_x": model.n_x, "n_y": model.n_y, "horizon": n, "rank_var": gv.rank(),
                   "var_map": _write_map(gv, out / "var_gramian_map.csv", labels, files), "empirical": None}
        if _want_empirical(cfg, model, no_empirical):
            ge = empirical_gramian(model, x0, n, cfg.eps, irk, workers=cfg.workers)
            write_gramian_json(ge, out / "empr_gramian.json")
            files.append("empr_gramian.json")
            summary["empirical"] = {"eps": cfg.eps, "relative_distance": relative_distance(ge, gv),
                                    "rank": ge.rank(),
                                    "map": _write_map(ge, out / "empr_gramian_map.csv", labels, files)}
        _json(summary, out / "gramian_summary.json")
        files.append("gramian_summary.json")
        done.append(stage)

        stage = "lyapunov"
        spec = lyapunov_spectrum(phis)
        write_spectrum_csv(spec, out / "lyapunov_spectrum.csv")
        verdict = observability_verdict(gv, spec).to_dict()
        rel = logdet_le_relation(phis, n)
        verdict["stabilized"] = spec.stabilized
        verdict["logdet_relation"] = {k: _finite(v) for k, v in vars(rel).items()}
        _json(verdict, out / "verdict.json")
        files += ["lyapunov_spectrum.csv", "verdict.json"]
        done.append(stage)

        stage = "selection"
        sets = []
        if cfg.budgets:
            report, sets = selection_stage(gs, cfg.budgets, cfg.brute_force_max_subsets)
            _json(report, out / "selection.json")
            files.append("selection.json")
            _write_edges(gs, sets, out / "observability_edges.csv", labels, files)
        done.append(stage)

        stage = "estimation"
        if cfg.budgets and cfg.estimate:
            n_est = cfg.estimation_horizon or n
            gs_est = gs if n_est == n else None
            rows = error_vs_budget(model, x0, n_est, cfg.budgets, irk, cfg.guess_perturbation, cfg.seed,
                                   gs=gs_est, noise=cfg.noise)
            write_error_table_csv(rows, out / "error_table.csv")
            files.append("error_table.csv")
        done.append(stage)
    except VargramError as exc:
        log.error("study failed in stage %s: %s", stage, exc)
        write_manifest(out, cfg, "study", files, done, status="failed",
                       error={"stage": stage, "type": type(exc).__name__, "message": str(exc)})
        raise
    return write_manifest(out, cfg, "study", files, done)


def run_select(cfg: ExperimentConfig, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.load_model()
    cfg.check_budgets(model)
    if not cfg.budgets:
        raise ConfigError("select needs at least one budget", "budgets")
    x0 = cfg.initial_state(model)
    _, _, _, gs = _variational_pass(model, x0, cfg.horizon, cfg.irk())
    report, sets = selection_stage(gs, cfg.budgets, cfg.brute_force_max_subsets)
    _json(report, out / "selection.json")
    files = ["selection.json"]
    _write_edges(gs, sets, out / "observability_edges.csv", _labels(model), files)
    write_manifest(out, cfg, "select", files, ["selection"])
    return report


def run_estimate(cfg: ExperimentConfig, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.load_model()
    cfg.check_budgets(model)
    if not cfg.budgets:
        raise ConfigError("estimate needs at least one budget", "budgets")
    x0 = cfg.initial_state(model)
    rows = error_vs_budget(model, x0, cfg.estimation_horizon or cfg.horizon, cfg.budgets, cfg.irk(),
                           cfg.guess_perturbation, cfg.seed, noise=cfg.noise)
    write_error_table_csv(rows, out / "error_table.csv")
    write_manifest(out, cfg, "estimate", ["error_table.csv"], ["estimation"])
    return rows
