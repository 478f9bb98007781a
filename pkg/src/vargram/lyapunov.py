"""Finite-time Lyapunov exponents and the Gramian-based observability tests."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .gramian import Gramian
from .integrator import IrkConfig, irk_step
from .selection import regularized_logdet
from .variational import VariationalOutputMap, VariationalTransition

# Direct SVD of the accumulated product is abandoned beyond this range, or
# when the spread sigma_min / sigma_max leaves the digits double precision can
# resolve (the small singular values of a formed product are then noise).
SIGMA_MAX = 1e150
SIGMA_MIN = 1e-150
SPREAD_MIN = 1e-8


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray  # descending, natural log per step
    horizon: int
    base_state: Optional[np.ndarray] = None
    stabilized: bool = False

    @property
    def mle(self):
        return float(self.exponents[0])

    def per_unit_time(self, step_size):
        return self.exponents / step_size


@dataclass
class ObservabilityVerdict:
    spectral_value: float
    observable: bool
    rank: int
    logdet: float
    le_sum_times_2N: float
    lambda_max: float
    gramian_rate: float

    def to_dict(self):
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, (bool, np.bool_)):
                out[k] = bool(v)
            elif isinstance(v, float) and not math.isfinite(v):
                out[k] = None
            else:
                out[k] = v
        return out


@dataclass
class LogDetRelation:
    logdet_deformation: float  # log det(Phi^T Phi) at step N-1
    two_n_sum_le: float  # 2 (N-1) * sum of exponents at step N-1
    logdet_gramian: float  # log det of the full sum of deformation matrices
    gap: float  # logdet_gramian - logdet_deformation


def _log_sv(phi):
    s = np.linalg.svd(phi, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.log(s)


def _grading(ell):
    """``exp(ell_j - ell_i)`` on the upper triangle, zero below; dead rows (-inf) are zeroed."""
    with np.errstate(invalid="ignore"):
        diff = ell[None, :] - ell[:, None]
    upper = np.triu(np.ones(diff.shape, dtype=bool))
    diff = np.where(upper & np.isfinite(diff), diff, -np.inf)
    if np.max(np.triu(diff, 1), initial=0.0) > 700.0:
        raise NumericalError("log-scaled product lost its descending order; exponents cannot be resolved")
    out = np.triu(np.exp(diff))
    np.fill_diagonal(out, 1.0)
    return out


def _rescale(r, ell):
    """Fold the triangular factor ``r`` into ``diag(e^ell) u``; returns the row-normalised part and new ``ell``."""
    d = np.abs(np.diag(r))
    with np.errstate(divide="ignore"):
        new_ell = ell + np.log(d)
    safe = np.where(d > 0, d, 1.0)
    w = (r / safe[:, None]) * _grading(ell)
    dead = d == 0
    w[dead] = 0.0
    w[dead, dead] = 1.0
    return w, new_ell


def _qr_product(steps: Iterable[np.ndarray], n_x: int):
    """Accumulate ``M_N ... M_1 = Q diag(e^ell) U`` without forming the product.

    ``ell`` is the usual QR (Benettin) log-growth; ``U`` is unit upper
    triangular and carries what the diagonal alone misses at finite ``N``.
    """
    q = np.eye(n_x)
    ell = np.zeros(n_x)
    u = np.eye(n_x)
    count = 0
    for m in steps:
        q, r = np.linalg.qr(m @ q)
        w, ell = _rescale(r, ell)
        u = w @ u
        count += 1
    return ell, u, count


def _graded_log_sv(ell, u, sweeps=30, drop=1e-12):
    """``log sigma_i(diag(e^ell) U)`` without leaving log space.

    Unshifted QR sweeps on the transpose damp the off-diagonal of ``U`` by the
    gap ratios ``e^(ell_j - ell_i)``; whatever coupling survives (near-equal
    exponents) is resolved by an SVD within its cluster, where the range is
    small enough to exponentiate.
    """
    n = len(ell)
    for _ in range(sweeps):
        if np.max(np.abs(np.triu(u, 1)), initial=0.0) < drop:
            break
        _, r = np.linalg.qr(u.T)
        u, ell = _rescale(r, ell)
    coupled = np.abs(u) >= drop
    coupled |= coupled.T
    seen = np.zeros(n, dtype=bool)
    out = np.empty(n)
    for i in range(n):
        if seen[i]:
            continue
        comp, stack = [], [i]
        seen[i] = True
        while stack:
            j = stack.pop()
            comp.append(j)
            for k in np.flatnonzero(coupled[j] & ~seen):
                seen[k] = True
                stack.append(k)
        comp = sorted(comp)
        live = [j for j in comp if np.isfinite(ell[j])]
        for j in comp:
            if not np.isfinite(ell[j]):
                out[j] = -math.inf
        if not live:
            continue
        top = ell[live].max()
        blk = np.exp(ell[live] - top)[:, None] * u[np.ix_(live, live)]
        with np.errstate(divide="ignore"):
            out[live] = top + np.log(np.linalg.svd(blk, compute_uv=False))
    return np.sort(out)[::-1]


def _stabilized_exponents(steps, n_x):
    ell, u, count = _qr_product(steps, n_x)
    if count == 0:
        raise ConfigError("no steps to accumulate", "steps")
    return _graded_log_sv(ell, u) / count, count


def lyapunov_spectrum(phis: Sequence[VariationalTransition], stabilized: Optional[bool] = None) -> LyapunovSpectrum:
    """Exponents ``(1/N) log sigma_i(Phi_0^N)``, sorted descending.

    ``stabilized=None`` picks the direct SVD unless the singular values of the
    final product leave ``[1e-150, 1e150]``, overflowed, or span more than
    eight decades. The stabilized path re-orthonormalises the per-step
    factors by QR and keeps the product as ``Q diag(e^ell) U``, so it returns
    the finite-N singular values themselves, not the asymptotic QR
    (Benettin) growth rates. A zero singular value gives ``-inf``.
    """
    if len(phis) < 2:
        raise ConfigError("need at least two transitions", "phis")
    last = phis[-1]
    n = last.step_index
    if n < 1:
        raise ConfigError("final transition must have step index >= 1", "phis")
    n_x = last.phi.shape[0]
    if stabilized is None:
        stabilized = False
        if not np.all(np.isfinite(last.phi)):
            stabilized = True
        else:
            s = np.linalg.svd(last.phi, compute_uv=False)
            stabilized = bool(s[0] > SIGMA_MAX or s[-1] < SIGMA_MIN or s[-1] < SPREAD_MIN * s[0])
    if stabilized:
        if any(t.step is None for t in phis[1:]):
            raise ConfigError("stabilized mode needs the per-step factors of each transition", "phis")
        exps, _ = _stabilized_exponents((t.step for t in phis[1:]), n_x)
    else:
        if not np.all(np.isfinite(last.phi)):
            raise ConfigError("final transition is not finite; use stabilized mode", "phis")
        exps = _log_sv(last.phi) / n
    return LyapunovSpectrum(exps, n, stabilized=stabilized)


def lyapunov_spectrum_along(model, x0, n_steps: int, cfg: IrkConfig, transient: int = 0) -> LyapunovSpectrum:
    """Finite-time spectrum of ``Phi_0^N`` streamed along the trajectory from ``x0``.

    Step Jacobians are folded into the log-scaled QR representation one at a
    time and nothing is stored, so ``n_steps`` can be far beyond the overflow
    range of the accumulated product. ``transient`` steps are integrated first and
    discarded.
    """
    x = np.asarray(x0, dtype=float)
    for _ in range(transient):
        x = irk_step(model, x, cfg, jacobian=False).x_next
    base = x.copy()

    def steps():
        nonlocal x
        for _ in range(n_steps):
            st = irk_step(model, x, cfg)
            x = st.x_next
            yield st.step_jacobian

    exps, count = _stabilized_exponents(steps(), model.n_x)
    return LyapunovSpectrum(exps, count, base, stabilized=True)


def observability_verdict(g: Gramian, spectrum: LyapunovSpectrum, delta: float = 0.0) -> ObservabilityVerdict:
    """Rate test on the variational Gramian plus a rank check.

    ``spectral_value`` is the per-step growth rate of the dominant deformation,
    ``lambda_max(Phi_0^N^T Phi_0^N) ** (1/(2N)) = exp(mle)``; the system is
    reported observable when it is below one and the Gramian has full
    numerical rank. ``gramian_rate = lambda_max(V_o) ** (1/(2N))`` is reported
    alongside for reference.
    """
    if g.horizon != spectrum.horizon:
        raise ConfigError(
            f"Gramian horizon {g.horizon} does not match spectrum horizon {spectrum.horizon}", "horizon"
        )
    n = g.horizon
    eig = g.eigenvalues()
    lam_max = float(eig[-1])
    rate = lam_max ** (1.0 / (2 * n)) if lam_max > 0 else 0.0
    spectral = math.exp(spectrum.mle) if np.isfinite(spectrum.mle) else 0.0
    rank = g.rank()
    if delta == 0.0:
        delta = 1e-8 * max(float(np.trace(g.matrix)), 0.0) / g.n_x
    return ObservabilityVerdict(
        spectral_value=spectral,
        observable=bool(spectral < 1.0 and rank == g.n_x),
        rank=rank,
        logdet=regularized_logdet(g.matrix, delta),
        le_sum_times_2N=float(2 * n * np.sum(spectrum.exponents)),
        lambda_max=lam_max,
        gramian_rate=rate,
    )


def logdet_le_relation(phis: Sequence[VariationalTransition], n: int) -> LogDetRelation:
    """Both sides of the log-det / exponent-sum identity at step ``N - 1``.

    Assumes full state output (``C^T C = I``). ``logdet_gramian`` is the log
    det of ``sum_{k<N} Phi_0^k^T Phi_0^k``, which differs from the single
    deformation matrix by ``gap``.
    """
    if n < 2:
        raise ConfigError("horizon must be at least 2", "n")
    if len(phis) < n:
        raise ConfigError(f"need {n} transitions, got {len(phis)}", "phis")
    phi = phis[n - 1].phi
    # log det(Phi^T Phi) evaluated as 2 log|det Phi|: forming Phi^T Phi squares
    # the condition number and costs ~1e-6 relative accuracy on chaotic flows
    sign, val = np.linalg.slogdet(phi)
    lhs = 2.0 * float(val) if sign != 0 else -math.inf
    spec = lyapunov_spectrum(phis[:n])
    rhs = float(2 * (n - 1) * np.sum(spec.exponents))
    total = sum(t.phi.T @ t.phi for t in phis[:n])
    full = regularized_logdet(total)
    return LogDetRelation(lhs, rhs, full, full - lhs)


def output_norms(psis: Sequence[VariationalOutputMap]) -> np.ndarray:
    """Spectral norms ``||Psi_0^k||_2`` along the horizon."""
    if len(psis) == 0:
        raise ConfigError("need at least one output map", "psis")
    return np.array([np.linalg.norm(p.psi, 2) for p in psis])


def boundedness_check(psis: Sequence[VariationalOutputMap], k_bound: float) -> bool:
    """True when every accumulated output map has norm at most ``k_bound``."""
    return bool(np.all(output_norms(psis) <= k_bound))


def linear_transitions(a, n: int):
    """``Phi_0^k = A^k`` for a discrete-time matrix, ``k = 0 .. n``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    out = [VariationalTransition(np.eye(a.shape[0]), 0)]
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is handled by stabilized mode
        for k in range(1, n + 1):
            out.append(VariationalTransition(a @ out[-1].phi, k, a))
    return out


def write_spectrum_csv(spec: LyapunovSpectrum, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "lambda_L_i"])
        for i, v in enumerate(spec.exponents):
            w.writerow([i, repr(float(v))])


def write_verdict_json(verdict: ObservabilityVerdict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(verdict.to_dict(), fh, indent=2)
        fh.write("\n")
