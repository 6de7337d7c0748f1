"""Reverse-time migration and coherent interferometric (CINT) imaging.

Both images are evaluated in the frequency domain on a :class:`Mesh` of
search points.  For CINT the quadruple sum over receiver pairs and
frequency pairs is written as the quadratic form

    J(y) = sum q(r, w1) Psi[r, r'] Phi[w1, w2] conj(q(r', w2)) dw^2,
    q(r, w) = p(x_r, w) exp(-i w tau(x_r, y)),

with the Gaussian windows ``Psi`` (receiver offsets, truncated at a few
``X``) and ``Phi`` (frequency offsets, truncated at a few ``Omega``).
``Psi`` is stored sparse, so one image point costs about
``Nr * Nw * (pairs per receiver + Nw)`` operations.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .forward import ArrayData
from .scenario import DerivedScales, Scenario, mesh_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mesh:
    """Tensor-product mesh with the range axis last.

    ``axes`` holds one 1-D coordinate array per spatial axis. ``points`` is
    the ``(N, dim)`` array of mesh points in C order over ``shape``.
    """

    axes: tuple[np.ndarray, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    @property
    def points(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([g.ravel() for g in grids])

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def steps(self) -> tuple[float, ...]:
        return tuple(float(ax[1] - ax[0]) if len(ax) > 1 else 0.0 for ax in self.axes)

    def grid_shape(self) -> tuple[int, ...]:
        """Shape with singleton axes removed (used for peak detection)."""
        sh = tuple(n for n in self.shape if n > 1)
        return sh or (1,)

    def nearest_index(self, points) -> np.ndarray:
        """Flat index of the nearest mesh point, per axis rounding."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = []
        for k, ax in enumerate(self.axes):
            if len(ax) == 1:
                idx.append(np.zeros(pts.shape[0], dtype=int))
                continue
            h = ax[1] - ax[0]
            i = np.rint((pts[:, k] - ax[0]) / h).astype(int)
            idx.append(np.clip(i, 0, len(ax) - 1))
        return np.ravel_multi_index(tuple(idx), self.shape)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(pts.shape[0], dtype=bool)
        for k, ax in enumerate(self.axes):
            half = 0.5 * (ax[1] - ax[0]) if len(ax) > 1 else 0.0
            ok &= (pts[:, k] >= ax[0] - half - tol) & (pts[:, k] <= ax[-1] + half + tol)
        return ok


def centered_axis(extent: float, step: float, center: float = 0.0) -> np.ndarray:
    """Points ``center + k*step`` with ``|k*step| <= extent/2``."""
    n = int(math.floor(extent / 2 / step + 1e-9))
    return center + step * np.arange(-n, n + 1)


def build_mesh(s: Scenario, d: DerivedScales, h: float | None = None, h3: float | None = None,
               convention: str = "angular", extent: float | None = None) -> Mesh:
    """Unknown mesh over the imaging region.

    The cross-range step is ``h`` (default :func:`~cintl1.scenario.mesh_step`).
    A range axis over ``[L - D3/2, L + D3/2]`` is built only when a range step
    is given (``h3`` or ``s.mesh_h3``); otherwise the mesh is the cross-range
    section at range ``L``.
    """
    h = mesh_step(s, d, convention) if h is None else h
    h3 = s.mesh_h3 if h3 is None else h3
    ext = s.D if extent is None else extent
    cross = centered_axis(ext, h)
    rng = centered_axis(s.D3, h3, s.L) if h3 else np.array([s.L])
    if s.dim == 2:
        return Mesh((cross, rng))
    return Mesh((cross, cross.copy(), rng))


def as_points(mesh) -> np.ndarray:
    """``(N, dim)`` points of a :class:`Mesh` or of an explicit point array."""
    if isinstance(mesh, Mesh):
        return mesh.points
    return np.atleast_2d(np.asarray(mesh, dtype=float))


def travel_times(receivers: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``tau[r, c] = |x_r - y_c|`` (c_o = 1)."""
    diff = receivers[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("rcd,rcd->rc", diff, diff))


@dataclass
class Image:
    """Imaging-function values on a mesh."""

    mesh: Mesh | np.ndarray
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def display(self, normalize: bool = False) -> np.ndarray:
        """Nonnegative display values (modulus for migration)."""
        v = np.abs(self.values) if np.iscomplexobj(self.values) else np.asarray(self.values, float)
        if normalize and v.size and v.max() > 0:
            v = v / v.max()
        return v

    def to_csv(self, path: str | Path, normalize: bool = False) -> None:
        pts = as_points(self.mesh)
        vals = self.display(normalize)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(pts.shape[1] - 1)] + ["range", "value"])
            for p, v in zip(pts, vals):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def migrate(data: ArrayData, mesh: Mesh | np.ndarray, chunk: int = 64) -> Image:
    """Frequency-domain reverse-time migration.

    ``J_o(y) = sum_r sum_j (dw/2pi) p(x_r, w_j) exp(-i w_j tau(x_r, y))``.
    """
    pts = as_points(mesh)
    if pts.shape[0] == 0:
        raise ValueError("empty mesh")
    w = data.freqs
    out = np.empty(pts.shape[0], dtype=complex)
    for start in range(0, pts.shape[0], chunk):
        tau = travel_times(data.receivers, pts[start:start + chunk])
        ph = np.exp(-1j * tau[:, None, :] * w[None, :, None])
        out[start:start + chunk] = np.einsum("rj,rjc->c", data.values, ph)
    out *= data.d_omega / (2.0 * math.pi)
    return Image(mesh, out, "migration")


def receiver_window(receivers: np.ndarray, X: float, truncation: float = 3.0):
    """Sparse ``Psi[r, r'] = exp(-|x_r - x_r'|^2 / (2 X^2))`` for offsets within ``truncation*X``.

    A dense matrix is returned when the truncation covers the whole array.
    """
    cross = receivers[:, :-1]
    span = float(np.max(np.ptp(cross, axis=0))) if cross.shape[0] > 1 else 0.0
    radius = truncation * X
    if not math.isfinite(radius) or radius >= span * (1 + 1e-12):
        diff = cross[:, None, :] - cross[None, :, :]
        return np.exp(-np.sum(diff**2, -1) / (2 * X**2))
    tree = cKDTree(cross)
    pairs = tree.query_pairs(radius * (1 + 1e-12), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d2 = np.sum((cross[i] - cross[j]) ** 2, -1)
    vals = np.exp(-d2 / (2 * X**2))
    n = cross.shape[0]
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    data = np.concatenate([vals, vals, np.ones(n)])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def frequency_window(freqs: np.ndarray, Omega: float, truncation: float = 3.0) -> np.ndarray:
    """``Phi[j1, j2] = exp(-(w1 - w2)^2 / (2 Omega^2))`` truncated at ``truncation*Omega``."""
    dw = freqs[:, None] - freqs[None, :]
    phi = np.exp(-(dw**2) / (2 * Omega**2))
    if math.isfinite(truncation):
        phi[np.abs(dw) > truncation * Omega * (1 + 1e-12)] = 0.0
    return phi


def cint(data: ArrayData, mesh: Mesh | np.ndarray, X: float, Omega: float, truncation: float = 3.0,
         apodization: float | None = None, chunk: int = 32) -> Image:
    """CINT image with Gaussian windows of widths ``X`` and ``Omega``.

    Parameters
    ----------
    data : ArrayData
    mesh : Mesh
        Search points.
    X, Omega : float
        Spatial and frequency threshold parameters.
    truncation : float
        Receiver pairs and frequency pairs are kept within
        ``truncation * X`` and ``truncation * Omega``.  ``inf`` keeps all.
    apodization : float, optional
        Width of an optional Gaussian aperture weight
        ``exp(-|x_r|^2 / (2 apodization^2))`` applied to every receiver.
        The standard image uses the physical receivers unweighted.

    Notes
    -----
    The discretised quadratic form is Hermitian, so its symmetrised value
    (the mean of it and its conjugate) is real; that real part is stored.
    """
    pts = as_points(mesh)
    if pts.shape[0] == 0:
        raise ValueError("empty mesh")
    if not (X > 0 and Omega > 0):
        raise ValueError("window widths must be positive")
    psi = receiver_window(data.receivers, X, truncation)
    phi = frequency_window(data.freqs, Omega, truncation)
    p = data.values
    if apodization is not None:
        wr = np.exp(-np.sum(data.receivers[:, :-1] ** 2, -1) / (2 * apodization**2))
        p = p * wr[:, None]
    w = data.freqs
    nr, nw = p.shape
    out = np.empty(pts.shape[0])
    imag_max = 0.0
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        nc = block.shape[0]
        tau = travel_times(data.receivers, block)
        q = p[:, :, None] * np.exp(-1j * tau[:, None, :] * w[None, :, None])  # (r, j, c)
        t = np.einsum("jk,rkc->rjc", phi, q)
        t = (psi @ t.reshape(nr, nw * nc)).reshape(nr, nw, nc)
        val = np.einsum("rjc,rjc->c", q, np.conj(t))
        imag_max = max(imag_max, float(np.max(np.abs(val.imag))) if nc else 0.0)
        out[start:start + nc] = val.real
    out *= data.d_omega**2
    meta = {"X": X, "Omega": Omega, "truncation": truncation, "apodization": apodization,
            "imag_residue": imag_max * data.d_omega**2}
    return Image(mesh, out, "cint", meta)


def sample_image(img: Image, points, exact: bool = False, data: ArrayData | None = None) -> np.ndarray:
    """Sample an image at ``points`` into the data vector ``d``.

    Nearest-mesh-point sampling by default; with ``exact=True`` the CINT
    image is re-evaluated at the points from ``data`` using the window
    widths stored in ``img.meta``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not isinstance(img.mesh, Mesh):
        raise ValueError("sampling needs an image on a tensor mesh")
    if not np.all(img.mesh.contains(pts)):
        raise ValueError("sample point outside the mesh hull")
    if pts.shape[0] >= img.mesh.size:
        logger.warning("N_y = %d is not below N_z = %d", pts.shape[0], img.mesh.size)
    if exact:
        if data is None or img.kind != "cint":
            raise ValueError("exact sampling needs the array data of a CINT image")
        return cint(data, pts, img.meta["X"], img.meta["Omega"], img.meta.get("truncation", 3.0),
                    img.meta.get("apodization")).values
    idx = img.mesh.nearest_index(pts)
    return np.asarray(img.values)[idx]


def sample_points(mesh: Mesh, step: float) -> np.ndarray:
    """Equidistant sample points spanning the mesh cross-range extent.

    The points form a grid with spacing ``step`` (a multiple of the
    mesh step keeps them on the mesh) and the same range axis as the mesh.
    """
    axes = []
    for k, ax in enumerate(mesh.axes):
        if k == len(mesh.axes) - 1 or len(ax) == 1:
            axes.append(ax)
            continue
        center = 0.5 * (ax[0] + ax[-1])
        axes.append(centered_axis(ax[-1] - ax[0] + 1e-12, step, center))
    return Mesh(tuple(axes)).points
