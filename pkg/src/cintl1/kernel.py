"""Analytic CINT blurring kernel and the measurement matrix built from it.

Points are coordinate vectors with the range coordinate last.  For three
points ``y, z, z'`` the kernel depends on the centre ``zbar = (z + z')/2``
and the difference ``ztil = z - z'``.  Only the diagonal ``z = z'`` enters
the measurement matrix, where the model is real and positive.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import BROADBAND, NARROWBAND, DerivedScales, Scenario

CLAMP = 1e-12
DIAG_BOUND = math.exp(-4.5)


@dataclass(frozen=True)
class KernelScales:
    """Scales entering the kernel plus its amplitude constant ``C``."""

    R: float
    R3: float
    Rt: float
    Rt3: float
    X_d: float
    X_e: float
    gamma: float
    theta: float
    L: float
    k0: float
    Omega_e: float
    regime: str
    C: float = 1.0

    @classmethod
    def from_scales(cls, d: DerivedScales, C: float = 1.0, regime: str | None = None) -> "KernelScales":
        return cls(R=d.R, R3=d.R3, Rt=d.Rt, Rt3=d.Rt3, X_d=d.X_d, X_e=d.X_e, gamma=d.gamma,
                   theta=d.theta, L=d.L, k0=d.k0, Omega_e=d.Omega_e,
                   regime=regime or d.regime, C=C)

    def with_constant(self, C: float) -> "KernelScales":
        return KernelScales(**{**self.__dict__, "C": C})


def _split(y, z, zp):
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    zp = np.asarray(zp, dtype=float)
    zbar = 0.5 * (z + zp)
    ztil = z - zp
    return y, zbar, ztil


def _sq(v):
    return np.sum(v**2, axis=-1)


def _m_modulus_log(ks: KernelScales, ztil):
    zt_c, zt_r = ztil[..., :-1], ztil[..., -1]
    return -(zt_r**2) / (2 * ks.Rt3**2) - 0.5 * _sq(zt_c) * (1.0 / (ks.gamma * ks.X_d**2) + 1.0 / ks.Rt**2)


def _dd_phase(ks: KernelScales, y, zbar, ztil):
    """Phase of the complex factor in 3D (closed-form kernel evaluation)."""
    yc, zbc, ztc = y[..., :-1], zbar[..., :-1], ztil[..., :-1]
    zeta_bar = (zbc - yc) / ks.R
    zeta_til = ztil[..., :-1] / ks.Rt
    beta = (zbar[..., -1] - y[..., -1]) * ks.Omega_e + (_sq(zbc) - _sq(yc)) * ks.Omega_e / (2 * ks.L)
    den = 1.0 + _sq(zeta_bar) / (2 * ks.theta**2)
    lin = ks.k0 * (ztil[..., -1] + np.sum(ztc * zbc, -1) / ks.L
                   + ks.X_e**2 * np.sum(ztc * (zbc - yc), -1) / (2 * ks.X_d**2 * ks.L))
    return lin - beta * np.sum(zeta_bar * zeta_til, -1) / (math.sqrt(2.0) * ks.theta * den)


def kernel_narrowband(y, z, zp, ks: KernelScales, with_phase: bool | None = None) -> np.ndarray:
    """Narrowband kernel ``kappa(y, z, z')``.

    ``C exp(-|zbar - y|^2/2R^2 - (zbar3 - y3)^2/2R3^2) * M`` with
    ``|M| = exp(-ztil3^2/2Rt3^2 - |ztil|^2/2 (1/(gamma X_d^2) + 1/Rt^2))``.
    The phase of ``M`` is included for 3D points by default and omitted in 2D.
    """
    if ks.regime != NARROWBAND:
        raise ValueError("narrowband kernel requested for a broadband scale set")
    y, zbar, ztil = _split(y, z, zp)
    dc = zbar[..., :-1] - y[..., :-1]
    dr = zbar[..., -1] - y[..., -1]
    logmod = -_sq(dc) / (2 * ks.R**2) - dr**2 / (2 * ks.R3**2) + _m_modulus_log(ks, ztil)
    out = ks.C * np.exp(logmod).astype(complex)
    dim = y.shape[-1]
    if (with_phase is None and dim == 3) or with_phase:
        out = out * np.exp(1j * _dd_phase(ks, y, zbar, ztil))
    return out


def _bb_denominator(ks: KernelScales, dc):
    return 1.0 + _sq(dc) / (2 * ks.theta**2 * ks.R**2)


def m_modulus_broadband(y, z, zp, ks: KernelScales) -> np.ndarray:
    """``|M|`` of the broadband kernel, including the positive cross term."""
    y, zbar, ztil = _split(y, z, zp)
    dc = zbar[..., :-1] - y[..., :-1]
    den = _bb_denominator(ks, dc)
    cross = np.sum((dc / ks.R) * (ztil[..., :-1] / ks.Rt), -1) ** 2
    return np.exp(_m_modulus_log(ks, ztil) + cross / (4 * ks.theta**2 * den))


def kernel_broadband(y, z, zp, ks: KernelScales, with_phase: bool | None = None) -> np.ndarray:
    """Broadband kernel with the algebraic prefactor and shifted range focus."""
    if ks.regime != BROADBAND:
        raise ValueError("broadband kernel requested for a narrowband scale set")
    y_, zbar, ztil = _split(y, z, zp)
    dc = zbar[..., :-1] - y_[..., :-1]
    den = _bb_denominator(ks, dc)
    shift = zbar[..., -1] - y_[..., -1] + (_sq(zbar[..., :-1]) - _sq(y_[..., :-1])) / (2 * ks.L)
    logm = -_sq(dc) / (2 * ks.R**2) - shift**2 / (2 * ks.R3**2 * den)
    out = ks.C / np.sqrt(den) * np.exp(logm) * m_modulus_broadband(y, z, zp, ks)
    out = out.astype(complex)
    dim = y_.shape[-1]
    if (with_phase is None and dim == 3) or with_phase:
        out = out * np.exp(1j * _dd_phase(ks, y_, zbar, ztil))
    return out


def kernel(y, z, zp, ks: KernelScales, **kw) -> np.ndarray:
    if ks.regime == NARROWBAND:
        return kernel_narrowband(y, z, zp, ks, **kw)
    return kernel_broadband(y, z, zp, ks, **kw)


def matrix_entries(y, z, ks: KernelScales) -> np.ndarray:
    """Diagonal kernel ``m_{y,z}`` in either regime (real, nonnegative)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    dc = z[..., :-1] - y[..., :-1]
    dr = z[..., -1] - y[..., -1]
    if ks.regime == NARROWBAND:
        return ks.C * np.exp(-_sq(dc) / (2 * ks.R**2) - dr**2 / (2 * ks.R3**2))
    den = _bb_denominator(ks, dc)
    shift = dr + _sq(dc) / (2 * ks.L) + np.sum(y[..., :-1] * dc, -1) / ks.L
    return ks.C / np.sqrt(den) * np.exp(-_sq(dc) / (2 * ks.R**2) - shift**2 / (2 * ks.R3**2 * den))


_MAGIC = b"CINTMAT1"


@dataclass(frozen=True)
class MeasurementMatrix:
    """``N_y x N_z`` matrix of kernel samples; rows are sample points."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    regime: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def save(self, path: str | Path) -> None:
        ny, nz = self.values.shape
        dim = self.rows.shape[1]
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<QQQB", ny, nz, dim, 0 if self.regime == NARROWBAND else 1))
            for arr in (self.rows, self.cols, self.values):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "MeasurementMatrix":
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ValueError("not a measurement matrix file")
            ny, nz, dim, reg = struct.unpack("<QQQB", fh.read(25))
            rows = np.frombuffer(fh.read(8 * ny * dim), "<f8").reshape(ny, dim)
            cols = np.frombuffer(fh.read(8 * nz * dim), "<f8").reshape(nz, dim)
            vals = np.frombuffer(fh.read(8 * ny * nz), "<f8").reshape(ny, nz)
        return cls(rows.copy(), cols.copy(), vals.copy(), NARROWBAND if reg == 0 else BROADBAND)


def build_matrix(mesh_z, sample_points, ks: KernelScales, regime: str | None = None) -> MeasurementMatrix:
    """Measurement matrix ``m_{y,z}`` with entries below ``1e-12 C`` set to 0."""
    if regime is not None and regime != ks.regime:
        ks = KernelScales(**{**ks.__dict__, "regime": regime})
    cols = np.atleast_2d(np.asarray(getattr(mesh_z, "points", mesh_z), dtype=float))
    rows = np.atleast_2d(np.asarray(getattr(sample_points, "points", sample_points), dtype=float))
    vals = matrix_entries(rows[:, None, :], cols[None, :, :], ks)
    vals[vals < CLAMP * abs(ks.C)] = 0.0
    return MeasurementMatrix(rows, cols, vals, ks.regime)


# --------------------------------------------------------------------------
# constant calibration


def fit_constant(observed, shape) -> float:
    """Least-squares amplitude ``C`` minimising ``||observed - C * shape||``."""
    observed = np.asarray(observed, dtype=float)
    shape = np.asarray(shape, dtype=float)
    den = float(shape @ shape)
    if den == 0:
        raise ValueError("degenerate fit: zero kernel shape")
    return float(observed @ shape) / den


def dd_prefactor(s: Scenario, d: DerivedScales) -> float:
    """Closed-form 3D narrowband kernel constant
    ``sqrt(2) pi^(3/2) Nr^2 X_e^2 Omega_e / (144 a^2 L^2)``.

    It assumes the Gaussian aperture weight of width ``a/6`` on every
    receiver, so compare it with images formed with that apodization.
    """
    return math.sqrt(2.0) * math.pi**1.5 * s.Nr**2 * d.X_e**2 * d.Omega_e / (144.0 * s.a**2 * s.L**2)


@dataclass(frozen=True)
class Calibration:
    C: float
    mean_image: np.ndarray
    shape: np.ndarray
    rel_l2_error: float
    n_realizations: int
    analytic_C: float | None = None


def calibrate_constant(ks: KernelScales, s: Scenario, d: DerivedScales, n_realizations: int = 20,
                       n_modes: int = 4096, mesh=None, source=None, apodization: float | None = None,
                       stream: int = 11) -> Calibration:
    """Fit ``C`` to the ensemble-averaged CINT image of one unit source.

    The source defaults to the centre of the imaging region.  In 3D
    narrowband runs the closed-form constant of :func:`dd_prefactor` is
    reported alongside.
    """
    from .forward import SourceSet, synthesize_data
    from .imaging import build_mesh, cint
    from .medium import child_seed, sample_medium

    if n_realizations < 1:
        raise ValueError("need at least one realization")
    mesh = build_mesh(s, d) if mesh is None else mesh
    pts = np.asarray(getattr(mesh, "points", mesh), dtype=float)
    if source is None:
        source = np.zeros(s.dim)
        source[-1] = s.L
    src = SourceSet(np.asarray(source, float)[None, :], np.ones(1, dtype=complex))
    acc = np.zeros(pts.shape[0])
    for i in range(n_realizations):
        m = sample_medium(child_seed(s.master_seed, stream, i), n_modes, s.dim)
        data = synthesize_data(src, m, s, d, noise_seed=child_seed(s.master_seed, stream, i, 3))
        acc += cint(data, pts, d.X, d.Omega, apodization=apodization).values
    mean = acc / n_realizations
    shape = matrix_entries(pts, src.positions[0], ks.with_constant(1.0))
    C = fit_constant(mean, shape)
    err = float(np.linalg.norm(mean - C * shape) / np.linalg.norm(mean))
    analytic = dd_prefactor(s, d) if (s.dim == 3 and ks.regime == NARROWBAND) else None
    return Calibration(C, mean, shape, err, n_realizations, analytic)


# --------------------------------------------------------------------------
# diagonal dominance


@dataclass(frozen=True)
class DominanceReport:
    max_ratio: float
    bound: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.bound * (1 + 1e-12)


def check_diagonal_dominance(ks: KernelScales, separations=None, n: int = 41) -> DominanceReport:
    """Largest ``|kappa(y, z, z')| / C`` over offsets with ``|ztil| >= 3 Rt`` or ``|ztil3| >= 3 Rt3``.

    The kernel is evaluated with its centre on ``y`` (``zbar = y``).
    ``separations`` is an optional ``(k, 2)`` array of (cross-range, range)
    offsets; by default a grid over ``[-6 Rt, 6 Rt] x [-6 Rt3, 6 Rt3]``
    restricted to the off-diagonal region is used.
    """
    if separations is None:
        c = np.linspace(-6 * ks.Rt, 6 * ks.Rt, n)
        r = np.linspace(-6 * ks.Rt3, 6 * ks.Rt3, n)
        cc, rr = np.meshgrid(c, r, indexing="ij")
        sep = np.column_stack([cc.ravel(), rr.ravel()])
        keep = (np.abs(sep[:, 0]) >= 3 * ks.Rt * (1 - 1e-12)) | (np.abs(sep[:, 1]) >= 3 * ks.Rt3 * (1 - 1e-12))
        sep = sep[keep]
    else:
        sep = np.atleast_2d(np.asarray(separations, dtype=float))
    y = np.array([0.0, ks.L])
    z = y + 0.5 * sep
    zp = y - 0.5 * sep
    vals = np.abs(kernel(y, z, zp, ks.with_constant(1.0), with_phase=False))
    return DominanceReport(float(vals.max()) if vals.size else 0.0, DIAG_BOUND, int(sep.shape[0]))
