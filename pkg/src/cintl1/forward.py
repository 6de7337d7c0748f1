"""Green's functions, the Gaussian pulse and synthesis of array data.

Points are coordinate vectors with the range coordinate last: ``(x1, x3)``
in 2D and ``(x1, x2, x3)`` in 3D.  Receivers sit at range 0.  In 2D the
three-dimensional amplitude ``1/(4 pi |x - y|)`` is kept, as in the
wave-propagation model that the imaging analysis is built on.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .medium import MediumRealization, child_seed, ray_integral_nu
from .scenario import DerivedScales, Scenario


def _dist(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.sqrt(np.sum((x - y) ** 2, axis=-1))
    if np.any(d <= 0):
        raise ValueError("coincident points")
    return d


def green_homogeneous(x, y, omega) -> np.ndarray:
    """``exp(i omega |x-y|) / (4 pi |x-y|)`` with ``c_o = 1``.

    ``omega`` may be an array; its axes are appended after the point axes.
    """
    d = _dist(x, y)
    w = np.asarray(omega, dtype=float)
    if w.ndim:
        d = d[..., None]
    return np.exp(1j * w * d) / (4.0 * math.pi * d)


def green_paraxial(x, y, omega, L: float) -> np.ndarray:
    """Paraxial form ``exp[ik(y3 + |x|^2/2L - x.y/L + |y|^2/2L)] / (4 pi L)``.

    ``x`` is a receiver (range 0) and ``y`` an imaging point whose last
    coordinate is its range.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc, y3 = x[..., :-1], y[..., :-1], y[..., -1]
    path = y3 + np.sum(xc**2, -1) / (2 * L) - np.sum(xc * yc, -1) / L + np.sum(yc**2, -1) / (2 * L)
    w = np.asarray(omega, dtype=float)
    if w.ndim:
        path = path[..., None]
    return np.exp(1j * w * path) / (4.0 * math.pi * L)


def paraxial_phase_error(x, y, omega) -> np.ndarray:
    """Phase difference between the exact and paraxial forms (radians).

    Computed from the path difference, which avoids cancelling two phases of
    size ``omega*L``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc, y3 = x[..., :-1], y[..., :-1], y[..., -1]
    c2 = np.sum((xc - yc) ** 2, -1)
    exact_minus_y3 = c2 / (np.sqrt(y3**2 + c2) + y3)
    L = y3
    parax_minus_y3 = np.sum(xc**2, -1) / (2 * L) - np.sum(xc * yc, -1) / L + np.sum(yc**2, -1) / (2 * L)
    return np.asarray(omega) * (exact_minus_y3 - parax_minus_y3)


def green_random(m: MediumRealization | None, x, y, omega, sigma: float) -> np.ndarray:
    """Homogeneous Green's function times the Rytov phase of the realization.

    ``m = None`` or ``sigma = 0`` gives the homogeneous function exactly.
    """
    g = green_homogeneous(x, y, omega)
    if m is None or sigma == 0:
        return g
    ray = ray_integral_nu(m, x, y, method="exact")
    return g * np.exp(1j * ray.phase(sigma, omega))


def gaussian_pulse(omega, w0: float, B: float) -> np.ndarray:
    """Gaussian pulse ``(sqrt(2 pi)/B)^(1/2) exp(-(omega-w0)^2/(4 B^2))``.

    Normalised so that ``(1/2pi) int |f|^2 domega = 1``.
    """
    if not B > 0:
        raise ValueError("bandwidth must be positive")
    w = np.asarray(omega, dtype=float)
    return math.sqrt(math.sqrt(2.0 * math.pi) / B) * np.exp(-((w - w0) ** 2) / (4.0 * B**2))


# --------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class SourceSet:
    """Point sources with complex amplitudes ``rho``."""

    positions: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        amp = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if pos.shape[0] != amp.shape[0]:
            raise ValueError("one amplitude per source is required")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def count(self) -> int:
        return self.positions.shape[0] if self.positions.size else 0

    @classmethod
    def empty(cls, dim: int = 2) -> "SourceSet":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=complex))

    def intensities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def inside(self, s: Scenario) -> bool:
        if self.count == 0:
            return True
        cross = self.positions[:, :-1]
        rng = self.positions[:, -1] - s.L
        return bool(np.all(np.abs(cross) <= s.D / 2 + 1e-12) and np.all(np.abs(rng) <= s.D3 / 2 + 1e-12))


def make_sources(cross_range, s: Scenario, ranges=None, amplitudes=None, seed=None, phases: bool = True) -> SourceSet:
    """Sources at the given cross-range offsets and range ``L`` by default.

    Amplitudes default to unit modulus with seeded uniform random phases.
    """
    cross = np.asarray(cross_range, dtype=float)
    if cross.ndim == 1:
        cross = cross[:, None] if s.dim == 2 else np.column_stack([cross, np.zeros_like(cross)])
    n = cross.shape[0]
    rng_vals = np.full(n, s.L) if ranges is None else np.asarray(ranges, dtype=float)
    pos = np.column_stack([cross, rng_vals])
    if amplitudes is None:
        if phases:
            gen = np.random.default_rng(child_seed(s.master_seed if seed is None else seed, 7))
            amplitudes = np.exp(2j * math.pi * gen.uniform(size=n))
        else:
            amplitudes = np.ones(n, dtype=complex)
    return SourceSet(pos, np.asarray(amplitudes, dtype=complex))


def receiver_positions(s: Scenario) -> np.ndarray:
    """Uniform receivers on ``[-a/2, a/2]`` (a square grid in 3D), range 0."""
    if s.dim == 2:
        x = np.linspace(-s.a / 2, s.a / 2, s.Nr) if s.Nr > 1 else np.zeros(1)
        return np.column_stack([x, np.zeros_like(x)])
    n = math.isqrt(s.Nr)
    g = np.linspace(-s.a / 2, s.a / 2, n) if n > 1 else np.zeros(1)
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([x1.ravel(), x2.ravel(), np.zeros(s.Nr)])


def frequency_grid(s: Scenario, d: DerivedScales, width: float = 3.0) -> np.ndarray:
    """Uniform grid on ``[w0 - 3B, w0 + 3B]`` with step at most ``min(Omega, B)/4``."""
    span = 2.0 * width * d.B
    step_max = min(d.Omega, d.B) / 4.0
    n = int(math.ceil(span / step_max - 1e-9)) + 1
    return np.linspace(d.omega0 - width * d.B, d.omega0 + width * d.B, n)


# --------------------------------------------------------------------------
# array data

_MAGIC = b"CINTDAT1"


@dataclass(frozen=True)
class ArrayData:
    """Frequency-domain recordings ``values[r, j] = p(x_r, freqs[j])``."""

    receivers: np.ndarray
    freqs: np.ndarray
    values: np.ndarray
    noise_level: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if self.values.shape != (self.receivers.shape[0], self.freqs.shape[0]):
            raise ValueError("values must be receivers x frequencies")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("array data must be finite")

    @property
    def d_omega(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 1.0

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2)))

    def save(self, path: str | Path) -> None:
        """Binary layout: magic, (Nr, Nw, dim) as uint64, positions and
        frequencies as float64, then the complex64 samples row-major."""
        nr, nw = self.values.shape
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<QQQ", nr, nw, self.receivers.shape[1]))
            fh.write(np.ascontiguousarray(self.receivers, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.freqs, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<c8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ArrayData":
        with open(path, "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise ValueError("not an array data file")
            nr, nw, dim = struct.unpack("<QQQ", fh.read(24))
            rec = np.frombuffer(fh.read(8 * nr * dim), dtype="<f8").reshape(nr, dim)
            freqs = np.frombuffer(fh.read(8 * nw), dtype="<f8")
            vals = np.frombuffer(fh.read(8 * nr * nw), dtype="<c8").reshape(nr, nw)
        return cls(rec.copy(), freqs.copy(), vals.astype(complex))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["receiver", "omega", "re", "im"])
            for r in range(self.values.shape[0]):
                for j, om in enumerate(self.freqs):
                    v = self.values[r, j]
                    w.writerow([r, repr(float(om)), repr(float(v.real)), repr(float(v.imag))])


def synthesize_data(
    sources: SourceSet,
    m: MediumRealization | None,
    s: Scenario,
    d: DerivedScales,
    receivers: np.ndarray | None = None,
    freqs: np.ndarray | None = None,
    noise_level: float | None = None,
    noise_seed=None,
) -> ArrayData:
    """Array data ``sum_s rho_s f(w) G(x_r, y_s, w) + noise``.

    ``m = None`` synthesizes data in the homogeneous medium.  The noise
    stream defaults to the child ``(master_seed, 3)`` of the scenario seed.
    """
    rec = receiver_positions(s) if receivers is None else np.asarray(receivers, float)
    w = frequency_grid(s, d) if freqs is None else np.asarray(freqs, float)
    pulse = gaussian_pulse(w, d.omega0, d.B)
    vals = np.zeros((rec.shape[0], w.shape[0]), dtype=complex)
    for pos, rho in zip(sources.positions, sources.amplitudes):
        dist = _dist(rec, pos)
        phase = np.outer(dist, w)
        if m is not None and s.sigma > 0:
            ray = ray_integral_nu(m, rec, pos[None, :], method="exact")
            phase = phase + np.outer(s.sigma * ray.scale * ray.nu, w)
        vals += rho * pulse[None, :] * np.exp(1j * phase) / (4.0 * math.pi * dist[:, None])
    data = ArrayData(rec, w, vals, 0.0, None, {"medium": None if m is None else m.key()})
    level = s.noise_level if noise_level is None else noise_level
    seed = child_seed(s.master_seed, 3) if noise_seed is None else noise_seed
    return add_noise(data, level, seed)


def add_noise(data: ArrayData, level: float, seed) -> ArrayData:
    """Add circular complex Gaussian noise of std ``level * RMS(data)``.

    The reference RMS is taken over all noiseless samples.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return replace(data, noise_level=0.0, seed=None)
    gen = np.random.default_rng(seed)
    std = level * data.rms()
    noise = (gen.standard_normal(data.values.shape) + 1j * gen.standard_normal(data.values.shape)) * (std / math.sqrt(2.0))
    seed_tag = seed if isinstance(seed, int) else None
    return replace(data, values=data.values + noise, noise_level=level, seed=seed_tag)
