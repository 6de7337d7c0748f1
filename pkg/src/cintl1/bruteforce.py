"""Exact small-instance oracle for l1 problems (N_z <= 12).

The minimiser is found by enumeration rather than iteration, so it shares
no code path with :mod:`cintl1.solver`:

* ``delta > 0``: for each support ``S`` (at most ``N_y`` columns) and each
  sign pattern the KKT system has a closed-form solution; the candidates
  that satisfy sign consistency and dual feasibility are optimal and the
  smallest objective is returned.
* ``delta = 0``: the linear program has a basic optimal solution, so all
  full-rank supports with exact fits are enumerated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_COLUMNS = 12


@dataclass(frozen=True)
class OracleResult:
    u: np.ndarray
    objective: float
    support: tuple[int, ...]


def _sign_patterns(k: int, nonneg: bool) -> np.ndarray:
    if nonneg:
        return np.ones((1, k))
    return np.array(list(itertools.product((-1.0, 1.0), repeat=k)))


def bpdn_bruteforce(M, d, delta: float, nonneg: bool = False, rtol: float = 1e-9) -> OracleResult:
    """Exact minimiser of ``||u||_1`` s.t. ``||M u - d|| <= delta`` by enumeration."""
    M = np.asarray(M, dtype=float)
    d = np.asarray(d, dtype=float)
    m, n = M.shape
    if n > MAX_COLUMNS:
        raise ValueError(f"oracle limited to {MAX_COLUMNS} columns")
    dn = float(np.linalg.norm(d))
    if dn <= delta:
        return OracleResult(np.zeros(n), 0.0, ())
    if delta == 0:
        return _basis_pursuit(M, d, nonneg, rtol)
    best = None
    for k in range(1, min(m, n) + 1):
        for S in itertools.combinations(range(n), k):
            MS = M[:, S]
            G = MS.T @ MS
            if np.linalg.cond(G) > 1e12:
                continue
            Gi = np.linalg.inv(G)
            u0 = Gi @ (MS.T @ d)
            r0 = d - MS @ u0
            slack = delta**2 - float(r0 @ r0)
            if slack < 0:
                continue
            sg = _sign_patterns(k, nonneg)
            gs = sg @ Gi  # rows G^{-1} s (G symmetric)
            q = np.einsum("ij,ij->i", sg, gs)
            ok = q > 0
            c = np.sqrt(slack / np.where(ok, q, 1.0))
            uS = u0[None, :] - c[:, None] * gs
            ok &= np.all(np.sign(uS) == sg, axis=1)
            if not np.any(ok):
                continue
            R = r0[None, :] + c[:, None] * (gs @ MS.T)
            corr = R @ M
            off = np.ones(n, dtype=bool)
            off[list(S)] = False
            lim = c * (1 + rtol) + rtol * dn
            if nonneg:
                ok &= np.all(corr[:, off] <= lim[:, None], axis=1)
            else:
                ok &= np.all(np.abs(corr[:, off]) <= lim[:, None], axis=1)
            for i in np.flatnonzero(ok):
                obj = float(np.sum(np.abs(uS[i])))
                if best is None or obj < best.objective:
                    u = np.zeros(n)
                    u[list(S)] = uS[i]
                    best = OracleResult(u, obj, S)
    if best is None:
        raise RuntimeError("no KKT point found; instance may be degenerate")
    return best


def _basis_pursuit(M, d, nonneg, rtol):
    m, n = M.shape
    best = None
    scale = max(1.0, float(np.linalg.norm(d)))
    for k in range(1, min(m, n) + 1):
        for S in itertools.combinations(range(n), k):
            MS = M[:, S]
            if np.linalg.matrix_rank(MS) < k:
                continue
            uS, *_ = np.linalg.lstsq(MS, d, rcond=None)
            if np.linalg.norm(MS @ uS - d) > 1e-9 * scale:
                continue
            if nonneg and np.any(uS < -rtol):
                continue
            obj = float(np.sum(np.abs(uS)))
            if best is None or obj < best.objective - 1e-12 * scale:
                u = np.zeros(n)
                u[list(S)] = uS
                best = OracleResult(u, obj, S)
    if best is None:
        raise RuntimeError("equality constraint infeasible")
    return best
