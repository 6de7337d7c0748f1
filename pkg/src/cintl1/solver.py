"""l1 deconvolution: basis pursuit denoising, its equality limit and direct l1.

Problem::

    minimise ||u||_1   subject to   ||M u - d||_2 <= delta

Two independent first-order schemes are provided:

* ``"pdhg"``: the primal-dual hybrid gradient method of Chambolle and Pock
  applied to ``||u||_1 + I_ball(M u)``;
* ``"admm"``: ADMM on the splitting ``u = z1``, ``M u = z2`` with a
  Cholesky-factored linear step.

Both are followed (by default) by an exact KKT refinement on the support
they identify, and every result can be checked with a duality-gap
certificate (:func:`verify_certificate`).

The variable may be grouped: with ``group=2`` consecutive pairs are the
real and imaginary parts of one complex unknown and ``||u||_1`` becomes the
sum of the pair moduli.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    """Raised when a candidate violates the residual constraint."""


@dataclass(frozen=True)
class SolverOptions:
    """Options shared by both schemes.

    ``tol`` bounds the relative primal change, constraint violation and
    objective change checked every ``check_every`` iterations.
    """

    method: str = "admm"
    nonneg: bool = False
    tol: float = 1e-8
    max_iter: int = 100_000
    check_every: int = 10
    polish: bool = True
    support_tol: float = 1e-6
    rho: float = 1.0
    relax: float = 1.0
    balance_every: int = 50
    record_history: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class Reconstruction:
    """Result of an l1 solve.  ``u`` is real (grouped pairs for complex unknowns)."""

    u: np.ndarray
    residual_norm: float
    objective: float
    iterations: int
    converged: bool
    delta: float
    nonneg_enforced: bool = False
    group: int = 1
    method: str = ""
    polished: bool = False
    certificate: float | None = None
    history: list[float] = field(default_factory=list)
    dual: np.ndarray | None = None

    def complex_values(self) -> np.ndarray:
        if self.group != 2:
            return self.u.astype(complex)
        return self.u[0::2] + 1j * self.u[1::2]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.complex_values()) if self.group == 2 else np.asarray(self.u)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k not in ("u", "history", "dual")}
        out["u"] = self.u.tolist()
        return out


# --------------------------------------------------------------------------
# elementary maps


def l1_norm(u: np.ndarray, group: int = 1) -> float:
    if group == 1:
        return float(np.sum(np.abs(u)))
    return float(np.sum(np.linalg.norm(u.reshape(-1, group), axis=1)))


def dual_norm(v: np.ndarray, group: int = 1) -> float:
    if v.size == 0:
        return 0.0
    if group == 1:
        return float(np.max(np.abs(v)))
    return float(np.max(np.linalg.norm(v.reshape(-1, group), axis=1)))


def shrink(v: np.ndarray, t: float, group: int = 1, nonneg: bool = False) -> np.ndarray:
    """Proximal map of ``t * ||.||_1`` (group soft threshold, optional sign)."""
    if group == 1:
        if nonneg:
            return np.maximum(v - t, 0.0)
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    g = v.reshape(-1, group)
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    scale = np.maximum(1.0 - t / np.maximum(nrm, 1e-300), 0.0)
    return (g * scale).reshape(-1)


def project_ball(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    diff = v - center
    n = np.linalg.norm(diff)
    if n <= radius:
        return v
    return center + diff * (radius / n)


# --------------------------------------------------------------------------
# schemes


def _prepare(M, d, delta):
    M = np.asarray(M, dtype=float)
    d = np.asarray(d, dtype=float)
    if M.ndim != 2 or M.shape[0] != d.shape[0]:
        raise ValueError("M must be N_y x N_z and d of length N_y")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    sM = float(np.linalg.norm(M, 2)) if M.size else 0.0
    if sM == 0:
        raise ValueError("M must be nonzero")
    sd = float(np.linalg.norm(d))
    return M, d, sM, sd


def _pdhg(Mn, dn, dl, opts, group):
    n = Mn.shape[1]
    tau = sigma = 0.99
    u = np.zeros(n)
    ubar = u.copy()
    y = np.zeros(Mn.shape[0])
    obj_prev = 0.0
    hist = []
    it = 0
    converged = False
    for it in range(1, opts.max_iter + 1):
        v = y + sigma * (Mn @ ubar)
        y = v - sigma * project_ball(v / sigma, dn, dl)
        u_new = shrink(u - tau * (Mn.T @ y), tau, group, opts.nonneg)
        ubar = 2 * u_new - u
        du = np.linalg.norm(u_new - u)
        u = u_new
        if it % opts.check_every == 0:
            obj = l1_norm(u, group)
            viol = max(0.0, np.linalg.norm(Mn @ u - dn) - dl)
            if opts.record_history:
                hist.append(obj)
            scale = max(1.0, np.linalg.norm(u))
            if du <= opts.tol * scale and viol <= opts.tol and abs(obj - obj_prev) <= opts.tol * max(1.0, obj):
                converged = True
                break
            obj_prev = obj
    return u, it, converged, hist, -y


def _admm(Mn, dn, dl, opts, group):
    m, n = Mn.shape
    rho = opts.rho
    # (I + M^T M) is fixed; the penalty parameter only scales thresholds.
    if n <= m:
        chol = sla.cho_factor(np.eye(n) + Mn.T @ Mn)

        def solve(rhs):
            return sla.cho_solve(chol, rhs)
    else:
        chol = sla.cho_factor(np.eye(m) + Mn @ Mn.T)

        def solve(rhs):
            return rhs - Mn.T @ sla.cho_solve(chol, Mn @ rhs)

    z1 = np.zeros(n)
    z2 = project_ball(np.zeros(m), dn, dl)
    y1 = np.zeros(n)
    y2 = np.zeros(m)
    hist = []
    obj_prev = 0.0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        u = solve((z1 - y1) + Mn.T @ (z2 - y2))
        Mu = Mn @ u
        uh = opts.relax * u + (1 - opts.relax) * z1
        Muh = opts.relax * Mu + (1 - opts.relax) * z2
        z1_old, z2_old = z1, z2
        z1 = shrink(uh + y1, 1.0 / rho, group, opts.nonneg)
        z2 = project_ball(Muh + y2, dn, dl)
        y1 = y1 + uh - z1
        y2 = y2 + Muh - z2
        if it % opts.check_every == 0:
            r_pri = math.sqrt(np.sum((u - z1) ** 2) + np.sum((Mu - z2) ** 2))
            s_dual = rho * math.sqrt(np.sum((z1 - z1_old) ** 2) + np.sum((Mn.T @ (z2 - z2_old)) ** 2))
            obj = l1_norm(z1, group)
            if opts.record_history:
                hist.append(obj)
            scale = max(1.0, np.linalg.norm(z1))
            if r_pri <= opts.tol * scale and s_dual <= opts.tol * scale and abs(obj - obj_prev) <= opts.tol * max(1.0, obj):
                converged = True
                break
            obj_prev = obj
            # residual balancing; the scaled duals follow the penalty
            if it % opts.balance_every:
                continue
            if r_pri > 10 * s_dual:
                rho *= 2.0
                y1 /= 2.0
                y2 /= 2.0
            elif s_dual > 10 * r_pri:
                rho /= 2.0
                y1 *= 2.0
                y2 *= 2.0
    # z1 satisfies the sign constraint exactly; pull it into the ball
    return z1, it, converged, hist, -y2


def kkt_polish(M, d, delta, u, nonneg: bool = False, support_tol: float = 1e-6, max_rounds: int = 50):
    """Exact KKT point started from the support and signs of ``u`` (ungrouped only).

    On a support ``S`` with signs ``s`` the optimality conditions give
    ``u_S = u_ls - c G^{-1} s`` with ``G = M_S^T M_S``, ``u_ls`` the least
    squares solution on ``S`` and ``c = sqrt((delta^2 - |r_ls|^2)/(s^T G^{-1} s))``.
    Entries whose sign flips are dropped and the most violated dual
    constraint is added until the conditions hold (a short active-set
    walk).  Returns ``None`` when the walk fails or meets a rank-deficient
    support.
    """
    top = float(np.max(np.abs(u))) if u.size else 0.0
    if top == 0:
        return None
    S = list(np.flatnonzero(np.abs(u) > support_tol * top))
    signs = {int(j): float(np.sign(u[j])) for j in S}
    if nonneg and any(v < 0 for v in signs.values()):
        return None
    dn = float(np.linalg.norm(d))
    for _ in range(max_rounds):
        if not S or len(S) > M.shape[0]:
            return None
        idx = np.array(S)
        sv = np.array([signs[j] for j in S])
        MS = M[:, idx]
        try:
            chol = sla.cho_factor(MS.T @ MS)
        except np.linalg.LinAlgError:
            return None
        u_ls = sla.cho_solve(chol, MS.T @ d)
        r0 = d - MS @ u_ls
        slack = delta**2 - float(r0 @ r0)
        if slack < 0:
            corr = M.T @ r0
            corr[idx] = 0.0
            j = int(np.argmax(corr if nonneg else np.abs(corr)))
            if (corr[j] if nonneg else abs(corr[j])) <= 0:
                return None
            S.append(j)
            signs[j] = float(np.sign(corr[j]))
            continue
        gs = sla.cho_solve(chol, sv)
        q = float(sv @ gs)
        if q <= 0:
            return None
        c = math.sqrt(slack / q)
        uS = u_ls - c * gs
        bad = np.sign(uS) != sv
        if np.any(bad):
            S = [j for j, b in zip(S, bad) if not b]
            continue
        r = d - MS @ uS
        corr = M.T @ r
        corr[idx] = 0.0
        lim = c * (1 + 1e-7) + 1e-14 * dn
        viol = corr - lim if nonneg else np.abs(corr) - lim
        j = int(np.argmax(viol))
        if viol[j] > 0:
            S.append(j)
            signs[j] = float(np.sign(corr[j]))
            continue
        out = np.zeros_like(u)
        out[idx] = uS
        return out
    return None


def solve_bpdn(M, d, delta: float, opts: SolverOptions | None = None, group: int = 1) -> Reconstruction:
    """Minimise ``||u||_1`` subject to ``||M u - d|| <= delta``.

    Non-convergence is reported through ``converged=False``, never raised.
    """
    opts = opts or SolverOptions()
    if group not in (1, 2):
        raise ValueError("group must be 1 or 2")
    if opts.nonneg and group != 1:
        raise ValueError("sign constraint applies to ungrouped variables only")
    M, d, sM, sd = _prepare(M, d, delta)
    n = M.shape[1]
    if sd <= delta:
        return Reconstruction(np.zeros(n), sd, 0.0, 0, True, delta, opts.nonneg, group, opts.method, False)
    Mn = M / sM
    dn = d / sd
    dl = delta / sd
    if opts.method == "pdhg":
        un, it, conv, hist, dual = _pdhg(Mn, dn, dl, opts, group)
    elif opts.method == "admm":
        un, it, conv, hist, dual = _admm(Mn, dn, dl, opts, group)
    else:
        raise ValueError(f"unknown method {opts.method!r}")
    u = un * (sd / sM)
    polished = False
    if opts.polish and group == 1:
        # first-order iterates carry small off-support values; try coarser cuts
        for cut in (opts.support_tol, 1e-4, 1e-3, 1e-2):
            cand = kkt_polish(M, d, delta, u, opts.nonneg, cut)
            if cand is not None:
                u, polished, conv = cand, True, True
                break
        if not polished:
            cand = _support_refit(M, d, delta, u)
            if cand is not None:
                u, polished = cand, True
    if not polished:
        # pull the iterate onto the feasible set along the LS-free direction
        res = float(np.linalg.norm(M @ u - d))
        if res > delta and res > 0:
            u = _restore_feasibility(M, d, delta, u)
    res = float(np.linalg.norm(M @ u - d))
    if not conv:
        logger.warning("%s did not converge in %d iterations", opts.method, it)
    rec = Reconstruction(u, res, l1_norm(u, group), it, bool(conv), delta, opts.nonneg, group,
                         opts.method, polished, None, hist, dual)
    try:
        rec.certificate = verify_certificate(M, d, delta, u, opts.nonneg, group, dual=dual).gap
    except InfeasibleError:
        rec.converged = False
    return rec


def _support_refit(M, d, delta, u, cuts=(1e-6, 1e-4, 1e-3, 1e-2)):
    """Least squares refit on a thresholded support, kept if feasible and no worse."""
    top = float(np.max(np.abs(u))) if u.size else 0.0
    if top == 0:
        return None
    base = l1_norm(u)
    best = None
    for cut in cuts:
        S = np.flatnonzero(np.abs(u) > cut * top)
        if S.size == 0 or S.size > M.shape[0]:
            continue
        uS, *_ = np.linalg.lstsq(M[:, S], d, rcond=None)
        if np.any(np.sign(uS) != np.sign(u[S])):
            continue
        cand = np.zeros_like(u)
        cand[S] = uS
        if np.linalg.norm(M @ cand - d) <= delta and l1_norm(cand) <= base * (1 + 1e-8):
            best, base = cand, l1_norm(cand)
    return best


def _restore_feasibility(M, d, delta, u):
    """Smallest blend of ``u`` with its least squares correction that is feasible."""
    u_ls = u + np.linalg.lstsq(M, d - M @ u, rcond=None)[0]
    if np.linalg.norm(M @ u_ls - d) > delta:
        return u
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(M @ ((1 - mid) * u + mid * u_ls) - d) <= delta:
            hi = mid
        else:
            lo = mid
    return (1 - hi) * u + hi * u_ls


def solve_equality(M, d, opts: SolverOptions | None = None) -> Reconstruction:
    """Equality-constrained limit: ``delta = 1e-10 ||d||``."""
    d = np.asarray(d, dtype=float)
    return solve_bpdn(M, d, 1e-10 * float(np.linalg.norm(d)), opts)


# --------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CertificateReport:
    primal: float
    dual: float
    gap: float
    passed: bool
    cross_difference: float | None = None

    @property
    def relative_gap(self) -> float:
        return self.gap / self.primal if self.primal > 0 else self.gap


def _dual_value(M, d, delta, y, nonneg, group):
    """Dual objective at the feasible rescaling of direction ``y``."""
    g = M.T @ y
    if nonneg:
        top = float(np.max(g)) if g.size else 0.0
    else:
        top = dual_norm(g, group)
    base = float(d @ y) - delta * float(np.linalg.norm(y))
    if top <= 0:
        return 0.0 if base <= 0 else math.inf
    return max(0.0, base / top)


def verify_certificate(M, d, delta: float, u, nonneg: bool = False, group: int = 1,
                       rel_tol: float = 1e-4, cross_check: bool = False,
                       opts: SolverOptions | None = None, dual=None) -> CertificateReport:
    """Duality-gap bound for a candidate ``u``.

    Dual feasible points are built from the residual ``d - M u`` and, for
    ungrouped problems, from the support of ``u``.  The report passes when
    the gap is at most ``rel_tol * ||u||_1``.  A dual estimate from an
    iterative scheme (``Reconstruction.dual``) can be supplied as ``dual``.

    Raises
    ------
    InfeasibleError
        If ``||M u - d|| > delta (1 + 1e-6)``.
    """
    M = np.asarray(M, float)
    d = np.asarray(d, float)
    u = np.asarray(u, float)
    res_vec = d - M @ u
    res = float(np.linalg.norm(res_vec))
    if res > delta * (1 + 1e-6) + 1e-12 * max(1.0, float(np.linalg.norm(d))):
        raise InfeasibleError(f"residual {res:.6g} exceeds delta {delta:.6g}")
    primal = l1_norm(u, group)
    cands = [res_vec]
    if dual is not None:
        cands.append(np.asarray(dual, float))
    if group == 1 and primal > 0:
        top = np.max(np.abs(u))
        S = np.flatnonzero(np.abs(u) > 1e-9 * top)
        if 0 < S.size <= M.shape[0]:
            MS = M[:, S]
            try:
                cands.append(MS @ np.linalg.solve(MS.T @ MS, np.sign(u[S])))
            except np.linalg.LinAlgError:
                pass
    dual = max(_dual_value(M, d, delta, y, nonneg, group) for y in cands)
    gap = max(0.0, primal - dual)
    passed = gap <= rel_tol * max(primal, 1e-300) or (primal == 0 and dual == 0)
    cross = None
    if cross_check:
        base = opts or SolverOptions()
        other = "pdhg" if base.method == "admm" else "admm"
        alt = solve_bpdn(M, d, delta, SolverOptions(**{**asdict(base), "method": other, "nonneg": nonneg}), group)
        cross = float(np.sum(np.abs(alt.u - u)) / max(primal, 1e-300))
    return CertificateReport(primal, dual, gap, bool(passed), cross)


# --------------------------------------------------------------------------
# direct l1 on the array data


@dataclass
class DirectL1Result:
    rho: np.ndarray
    reconstruction: Reconstruction
    ls_residual: float
    delta_total: float


def homogeneous_model(data, points, w0: float, B: float) -> np.ndarray:
    """Model matrix ``A[(r, w), z] = f(w) G_o(x_r, z, w)`` (rows receiver-major)."""
    from .forward import gaussian_pulse
    from .imaging import travel_times

    tau = travel_times(data.receivers, points)  # (r, z)
    f = gaussian_pulse(data.freqs, w0, B)
    A = f[None, :, None] * np.exp(1j * tau[:, None, :] * data.freqs[None, :, None]) / (4 * math.pi * tau[:, None, :])
    return A.reshape(-1, points.shape[0])


def direct_l1(data, mesh, w0: float, B: float, delta: float | None = None, rel_noise: float = 0.05,
              opts: SolverOptions | None = None, eig_tol: float = 1e-12) -> DirectL1Result:
    """Sparse complex amplitudes fit directly to the array data.

    Minimises ``sum_z |rho_z|`` subject to ``||A rho - p|| <= delta_total``
    with the homogeneous-medium model ``A``.  Data from a random medium are
    generally not in the range of ``A``, so the tolerance is measured above
    the least squares floor: ``delta_total^2 = r_ls^2 + delta^2`` with
    ``delta = rel_noise ||p||`` by default.

    The problem is reduced exactly to the ``N_z``-dimensional Gram form
    ``||A rho - p||^2 = ||Lam^(1/2) V^H rho - d'||^2 + r_ls^2``.
    """
    pts = np.asarray(getattr(mesh, "points", mesh), dtype=float)
    A = homogeneous_model(data, pts, w0, B)
    p = data.values.reshape(-1)
    pn = float(np.linalg.norm(p))
    if delta is None:
        delta = rel_noise * pn
    nz = pts.shape[0]
    if pn == 0:
        rec = Reconstruction(np.zeros(2 * nz), 0.0, 0.0, 0, True, delta, False, 2, "admm")
        return DirectL1Result(np.zeros(nz, dtype=complex), rec, 0.0, delta)
    G = A.conj().T @ A
    b = A.conj().T @ p
    lam, V = np.linalg.eigh(G)
    keep = lam > eig_tol * lam.max()
    lam, V = lam[keep], V[:, keep]
    Mc = np.sqrt(lam)[:, None] * V.conj().T
    dc = (V.conj().T @ b) / np.sqrt(lam)
    r_ls2 = max(0.0, pn**2 - float(np.vdot(dc, dc).real))
    # real embedding with interleaved (Re, Im) pairs per mesh point
    Mr = np.empty((2 * Mc.shape[0], 2 * nz))
    Mr[0::2, 0::2] = Mc.real
    Mr[0::2, 1::2] = -Mc.imag
    Mr[1::2, 0::2] = Mc.imag
    Mr[1::2, 1::2] = Mc.real
    dr = np.empty(2 * dc.shape[0])
    dr[0::2] = dc.real
    dr[1::2] = dc.imag
    rec = solve_bpdn(Mr, dr, float(delta), opts or SolverOptions(method="admm", tol=1e-7), group=2)
    rho = rec.complex_values()
    return DirectL1Result(rho, rec, math.sqrt(r_ls2), math.sqrt(r_ls2 + delta**2))
