"""Resolution analysis of the l1 deconvolution.

Cross-correlations of the measurement-matrix columns define the semimetric
``Delta = 1 - I`` and its balls.  From them follow the interaction
coefficient of a source set, the decay functions ``F(alpha, alpha3)`` and
the effective reconstructed intensities, which are combined into numerical
checks of the support-localisation bounds.  Peak detection for images and
reconstructions lives here as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.special import erfc

from .kernel import KernelScales, MeasurementMatrix
from .scenario import BROADBAND, NARROWBAND

CorrFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# correlation models


def broadband_constant(theta: float) -> float:
    """``C_bb = 3 exp(-theta^2) / (2 erfc(sqrt(2) theta))``."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    return 3.0 * math.exp(-theta**2) / (2.0 * float(erfc(math.sqrt(2.0) * theta)))


@dataclass(frozen=True)
class CorrelationModel:
    """Continuum cross-correlation of kernel columns.

    Narrowband: ``exp(-|zt|^2/4R^2 - zt3^2/4R3^2)``.  Broadband: the upper
    bound ``C_bb exp(-|zt|^2/8R^2 - theta |zt3 + (|z|^2 - |z'|^2)/2L| / R3)``.
    """

    regime: str
    R: float
    R3: float
    theta: float
    L: float

    @classmethod
    def from_kernel(cls, ks: KernelScales) -> "CorrelationModel":
        return cls(ks.regime, ks.R, ks.R3, ks.theta, ks.L)

    @property
    def C_bb(self) -> float:
        return broadband_constant(self.theta)

    def __call__(self, z, zp) -> np.ndarray:
        return correlation_closed_form(self, z, zp)


def correlation_closed_form(cm: CorrelationModel, z, zp) -> np.ndarray:
    """Closed-form correlation (narrowband) or its bound (broadband); broadcasts."""
    z = np.asarray(z, dtype=float)
    zp = np.asarray(zp, dtype=float)
    dc = z[..., :-1] - zp[..., :-1]
    dr = z[..., -1] - zp[..., -1]
    c2 = np.sum(dc**2, -1)
    if cm.regime == NARROWBAND:
        return np.exp(-c2 / (4 * cm.R**2) - dr**2 / (4 * cm.R3**2))
    if cm.regime == BROADBAND:
        shift = dr + (np.sum(z[..., :-1] ** 2, -1) - np.sum(zp[..., :-1] ** 2, -1)) / (2 * cm.L)
        return cm.C_bb * np.exp(-c2 / (8 * cm.R**2) - cm.theta * np.abs(shift) / cm.R3)
    raise ValueError(f"unknown regime {cm.regime!r}")


def column_correlations(M) -> np.ndarray:
    """Matrix of ``|<m_z, m_z'>| / (|m_z| |m_z'|)`` over all column pairs."""
    A = np.asarray(getattr(M, "values", M), dtype=float)
    nrm = np.linalg.norm(A, axis=0)
    if np.any(nrm == 0):
        raise ValueError("zero column in measurement matrix")
    An = A / nrm
    return np.abs(An.T @ An)


def correlation_discrete(M, j: int, jp: int) -> float:
    """Cross-correlation of columns ``j`` and ``jp`` of ``M``."""
    A = np.asarray(getattr(M, "values", M), dtype=float)
    a, b = A[:, j], A[:, jp]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero column in measurement matrix")
    return float(min(1.0, abs(a @ b) / (na * nb)))


def semimetric(corr) -> np.ndarray:
    """``Delta = 1 - I``."""
    return 1.0 - np.asarray(corr)


def _corr_function(source) -> CorrFn:
    """Pairwise correlation function ``f(P, Q) -> (len P, len Q)``."""
    if isinstance(source, CorrelationModel):
        return lambda P, Q: correlation_closed_form(source, P[:, None, :], Q[None, :, :])
    if isinstance(source, MeasurementMatrix):
        G = column_correlations(source)
        cols = source.cols

        def lookup(P, Q):
            return G[np.ix_(_column_index(cols, P), _column_index(cols, Q))]

        return lookup
    if callable(source):
        return source
    raise TypeError("expected a CorrelationModel, MeasurementMatrix or callable")


def _column_index(cols: np.ndarray, pts: np.ndarray) -> np.ndarray:
    d2 = np.sum((pts[:, None, :] - cols[None, :, :]) ** 2, -1)
    idx = np.argmin(d2, axis=1)
    scale = max(1.0, float(np.max(np.abs(cols))))
    if np.any(d2[np.arange(len(pts)), idx] > (1e-9 * scale) ** 2):
        raise ValueError("point is not a column of the measurement matrix")
    return idx


@dataclass(frozen=True)
class DeviationReport:
    regime: str
    max_deviation: float
    n_pairs: int
    passed: bool


def closed_vs_discrete_check(M, cm: CorrelationModel, pairs=None, tolerance: float = 0.05,
                             slack: float = 0.05) -> DeviationReport:
    """Compare discrete column correlations with the closed form.

    Narrowband: the maximum absolute deviation is reported and passes below
    ``tolerance``.  Broadband: the largest excess of the discrete value over
    ``(1 + slack)`` times the bound is reported and passes when it is
    nonpositive.  ``pairs`` are column index pairs (default: all pairs).
    """
    G = column_correlations(M)
    cols = M.cols if isinstance(M, MeasurementMatrix) else None
    if cols is None:
        raise ValueError("column coordinates needed; pass a MeasurementMatrix")
    if pairs is None:
        i, j = np.triu_indices(G.shape[0])
    else:
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        i, j = pairs[:, 0], pairs[:, 1]
    disc = G[i, j]
    closed = correlation_closed_form(cm, cols[i], cols[j])
    if cm.regime == NARROWBAND:
        dev = float(np.max(np.abs(disc - closed))) if disc.size else 0.0
        return DeviationReport(cm.regime, dev, int(disc.size), dev < tolerance)
    excess = float(np.max(disc - (1 + slack) * closed)) if disc.size else 0.0
    return DeviationReport(cm.regime, excess, int(disc.size), excess <= 0)


# --------------------------------------------------------------------------
# interaction coefficient and bounds


def nearest_source(corr_zy: np.ndarray) -> np.ndarray:
    """Index of the Delta-nearest source per row; ties go to the lowest index."""
    return np.argmax(corr_zy, axis=1)  # argmax returns the first maximum


def interaction_coefficient(source, Y, search) -> float:
    """``max_z sum_{y in Y minus N(z)} I(z, y)`` over the search points."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] == 0:
        raise ValueError("source set must be nonempty")
    Z = np.atleast_2d(np.asarray(getattr(search, "points", search), dtype=float))
    f = _corr_function(source)
    best = 0.0
    for start in range(0, Z.shape[0], 4096):
        C = np.asarray(f(Z[start:start + 4096], Y), dtype=float)
        near = nearest_source(C)
        tot = C.sum(axis=1) - C[np.arange(C.shape[0]), near]
        best = max(best, float(tot.max()))
    return best


def bound_F(alpha: float, alpha3: float | None = None, regime: str = NARROWBAND, theta: float | None = None) -> float:
    """Decay function of the separation parameters.

    Narrowband: ``exp(-(min(alpha, alpha3)/4)^2) / (alpha^2 alpha3)`` for
    ``alpha, alpha3 > 1``.  Broadband: ``(exp(-(alpha/4)^2/2) + exp(-alpha)) / alpha^3``,
    valid when ``alpha3 > 8 alpha / theta`` (checked if both are given).
    """
    if regime == NARROWBAND:
        if alpha3 is None:
            raise ValueError("narrowband F needs alpha3")
        if alpha <= 1 or alpha3 <= 1:
            raise ValueError("F requires alpha, alpha3 > 1")
        return math.exp(-(min(alpha, alpha3) / 4.0) ** 2) / (alpha**2 * alpha3)
    if regime == BROADBAND:
        if alpha <= 1:
            raise ValueError("F requires alpha > 1")
        if alpha3 is not None and theta is not None and not alpha3 > 8 * alpha / theta:
            raise ValueError("broadband F requires alpha3 > 8 alpha / theta")
        return (math.exp(-0.5 * (alpha / 4.0) ** 2) + math.exp(-alpha)) / alpha**3
    raise ValueError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class SeparationSpec:
    H: float
    H3: float
    R: float
    R3: float

    @property
    def alpha(self) -> float:
        return self.H / self.R

    @property
    def alpha3(self) -> float:
        return self.H3 / self.R3

    def broadband_ok(self, theta: float) -> bool:
        return self.alpha3 > 8 * self.alpha / theta


# --------------------------------------------------------------------------
# balls, effective intensities and theorem checks


def ball_members(source, centers, points, r: float) -> np.ndarray:
    """Boolean ``(len centers, len points)``: ``Delta(c, z) < r``."""
    f = _corr_function(source)
    C = np.atleast_2d(np.asarray(centers, float))
    P = np.atleast_2d(np.asarray(points, float))
    return (1.0 - np.asarray(f(C, P))) < r


def balls_disjoint(members: np.ndarray) -> bool:
    return bool(np.all(members.sum(axis=0) <= 1))


def centers_balls_overlap(source, Y, r: float) -> bool:
    """Whether two r-balls around ``Y`` share a point of the continuum.

    For the closed forms the correlation is monotone in the offset, so the
    balls overlap exactly when the midpoint of some pair lies in both.
    """
    Y = np.atleast_2d(np.asarray(Y, float))
    f = _corr_function(source)
    for a in range(len(Y)):
        for b in range(a + 1, len(Y)):
            mid = 0.5 * (Y[a] + Y[b])[None, :]
            if (1 - f(Y[[a]], mid)[0, 0]) < r and (1 - f(Y[[b]], mid)[0, 0]) < r:
                return True
    return False


def effective_intensity(u_star, mesh_points, Y, r: float, source, check: bool = True) -> np.ndarray:
    """``ubar(z) = sum_{z' in B_r(z)} u*(z') I(z, z')`` for mesh points ``z`` in ``Y``, else 0.

    Raises
    ------
    ValueError
        If ``r`` is outside (0, 1) or two of the balls share a mesh point.
    """
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    u = np.asarray(u_star, float)
    P = np.atleast_2d(np.asarray(getattr(mesh_points, "points", mesh_points), float))
    Y = np.atleast_2d(np.asarray(Y, float))
    f = _corr_function(source)
    C = np.asarray(f(Y, P))
    members = (1.0 - C) < r
    if check and not balls_disjoint(members):
        raise ValueError("balls around the source points overlap")
    out = np.zeros_like(u)
    yi = _column_index(P, Y)
    out[yi] = np.sum(np.where(members, C * u[None, :], 0.0), axis=1)
    return out


@dataclass(frozen=True)
class TheoremReport:
    leakage: float            # ||u*^(o)||_1 / ||u*||_1
    bound: float              # 2 I(Y) / r (plus eps/r term for clusters)
    interaction: float
    effective_error: float    # ||u - ubar*||_1 / ||u||_1
    r: float
    eps: float = 0.0
    cluster_term: float = 0.0
    balls_overlap: bool = False

    @property
    def ratio(self) -> float:
        """bound / observed (infinite when nothing leaks)."""
        return self.bound / self.leakage if self.leakage > 0 else math.inf

    @property
    def holds(self) -> bool:
        return self.leakage <= self.bound * (1 + 1e-9)

    def to_json(self) -> str:
        d = asdict(self)
        d["ratio"] = None if math.isinf(self.ratio) else self.ratio
        d["holds"] = self.holds
        return json.dumps(d)


def theorem_checks(u_star, u_true, mesh_points, Y, r: float, source, eps: float = 0.0,
                   search=None) -> TheoremReport:
    """Support-localisation checks for a reconstruction.

    ``Y`` are the (effective) source points, mesh points themselves.  With
    ``eps = 0`` the bound is ``2 I(Y)/r``; for clustered sources pass the
    cluster centres as ``Y`` and their radius as ``eps``, which adds
    ``(eps/r) ||u||_1 / ||u*||_1`` to the leakage bound.
    The interaction coefficient is maximised over ``search`` (default: the mesh).
    """
    u_s = np.asarray(u_star, float)
    u_t = np.asarray(u_true, float)
    P = np.atleast_2d(np.asarray(getattr(mesh_points, "points", mesh_points), float))
    Y = np.atleast_2d(np.asarray(Y, float))
    f = _corr_function(source)
    C = np.asarray(f(Y, P))
    members = (1.0 - C) < r
    overlap = not balls_disjoint(members)
    inside = members.any(axis=0)
    total = float(np.sum(np.abs(u_s)))
    leak = float(np.sum(np.abs(u_s[~inside]))) / total if total > 0 else 0.0
    iy = interaction_coefficient(source, Y, P if search is None else search)
    bound = 2 * iy / r
    cluster = 0.0
    if eps > 0:
        cluster = eps / r * float(np.sum(np.abs(u_t))) / max(total, 1e-300)
        bound += cluster
    ubar = effective_intensity(u_s, P, Y, r, source, check=False)
    err = float(np.sum(np.abs(u_t - ubar)) / np.sum(np.abs(u_t))) if np.any(u_t) else 0.0
    return TheoremReport(leak, bound, iy, err, r, eps, cluster, overlap)


# --------------------------------------------------------------------------
# peaks


@dataclass(frozen=True)
class Peak:
    position: tuple[float, ...]
    value: float
    index: tuple[float, ...]


def detect_peaks(values, axes=None, threshold_frac: float = 0.33) -> list[Peak]:
    """Strict local maxima above ``threshold_frac`` times the global maximum.

    ``values`` is an n-D array (or an :class:`~cintl1.imaging.Image`, whose
    mesh supplies the shape and axes).  Neighbourhoods include diagonals.
    A plateau of equal values whose neighbours are all lower counts once,
    at its centroid.  Positions are interpolated on ``axes`` when given.
    """
    if not 0 < threshold_frac < 1:
        raise ValueError("threshold_frac must lie in (0, 1)")
    if hasattr(values, "mesh") and hasattr(values, "display"):
        img = values
        mesh = img.mesh
        arr = img.display().reshape(mesh.shape)
        keep = [k for k, n in enumerate(mesh.shape) if n > 1]
        axes = [mesh.axes[k] for k in keep] if keep else [mesh.axes[0]]
        arr = arr.reshape(mesh.grid_shape())
    else:
        arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    top = float(arr.max()) if arr.size else 0.0
    if top <= 0:
        return []
    foot = np.ones((3,) * arr.ndim, dtype=bool)
    local = ndimage.maximum_filter(arr, footprint=foot, mode="constant", cval=-np.inf)
    cand = (arr == local) & (arr >= threshold_frac * top)
    labels, n = ndimage.label(cand, structure=foot)
    peaks = []
    for lab in range(1, n + 1):
        comp = labels == lab
        val = float(arr[comp][0])
        ring = ndimage.binary_dilation(comp, structure=foot) & ~comp
        if np.any(arr[ring] >= val):
            continue
        idx = tuple(float(c.mean()) for c in np.nonzero(comp))
        if axes is not None:
            pos = tuple(float(np.interp(i, np.arange(len(ax)), ax)) for i, ax in zip(idx, axes))
        else:
            pos = idx
        peaks.append(Peak(pos, val, idx))
    return peaks


def peaks_to_csv(peaks: list[Peak], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = len(peaks[0].position) if peaks else 1
        w.writerow([f"p{k}" for k in range(dim)] + ["value"])
        for p in peaks:
            w.writerow([repr(c) for c in p.position] + [repr(p.value)])
