"""Random Fourier series model of the wave-speed fluctuations.

The fluctuation field is ``mu(x) = sqrt(2/n) * sum_j cos(xi_j . x + phi_j)``
with ``xi_j`` standard normal vectors and ``phi_j`` uniform phases.  Its
covariance is ``exp(-|x|^2/2)`` in expectation (the spectral measure of a
unit Gaussian autocorrelation is the standard normal law).

Travel-time perturbations use the straight-ray integral

    nu(x, y) = (2 pi)^(-1/4) sqrt(|x - y|) int_0^1 mu((1-t) y + t x) dt

and the phase ``omega * dtau = (2 pi)^(1/4)/2 * sigma * k * sqrt(|x-y|) * nu``.
Coordinates are in units of the correlation length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAD_STEP = 1.0 / 8.0
_FOURTH_ROOT_2PI = (2.0 * math.pi) ** 0.25


def child_seed(master_seed: int, *counters: int) -> np.random.SeedSequence:
    """Deterministic child stream ``(master_seed, counters...)``.

    Ensembles index realizations with the counters so that results do not
    depend on execution order or thread count.
    """
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(c) for c in counters))


@dataclass(frozen=True)
class MediumRealization:
    """One realization of the random field, fixed by ``(seed, n_modes, dim)``."""

    seed: int | tuple[int, ...]
    n_modes: int
    dim: int
    wavevectors: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)

    @property
    def amplitude(self) -> float:
        return math.sqrt(2.0 / self.n_modes)

    def key(self) -> dict:
        """Reproducibility record; the mode table itself is regenerated."""
        return {"seed": self.seed, "n_modes": self.n_modes, "dim": self.dim}


def sample_medium(seed: int | np.random.SeedSequence, n_modes: int = 1024, dim: int = 2) -> MediumRealization:
    """Draw a medium realization.

    Parameters
    ----------
    seed : int or SeedSequence
        Seed of the realization.
    n_modes : int
        Number of Fourier modes.
    dim : int
        Spatial dimension of the points the field is evaluated at.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        key: int | tuple[int, ...] = (int(ss.entropy), *ss.spawn_key)
    else:
        ss = np.random.SeedSequence(int(seed))
        key = int(seed)
    rng = np.random.default_rng(ss)
    xi = rng.standard_normal((n_modes, dim))
    phi = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    return MediumRealization(seed=key, n_modes=n_modes, dim=dim, wavevectors=xi, phases=phi)


def medium_from_modes(wavevectors, phases) -> MediumRealization:
    """Build a realization from an explicit mode table (used by tests)."""
    xi = np.atleast_2d(np.asarray(wavevectors, dtype=float))
    phi = np.atleast_1d(np.asarray(phases, dtype=float))
    if xi.shape[0] != phi.shape[0]:
        raise ValueError("one phase per wavevector required")
    return MediumRealization(seed=-1, n_modes=xi.shape[0], dim=xi.shape[1], wavevectors=xi, phases=phi)


def evaluate_mu(m: MediumRealization, points, chunk: int = 4096) -> np.ndarray | float:
    """Evaluate the field at one point or an ``(..., dim)`` array of points."""
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    flat = pts.reshape(-1, m.dim)
    out = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        block = flat[start:start + chunk]
        out[start:start + chunk] = np.cos(block @ m.wavevectors.T + m.phases).sum(axis=1)
    out *= m.amplitude
    if scalar:
        return float(out[0])
    return out.reshape(pts.shape[:-1])


@dataclass(frozen=True)
class RayIntegralResult:
    """Ray integrals for a batch of endpoint pairs.

    ``nu`` has the broadcast shape of the endpoints; ``scale`` stores the
    factor ``(2 pi)^(1/4)/2 * sqrt(|x-y|)`` so that the phase is
    ``sigma * k * scale * nu``.  ``n_quad`` is 0 for the exact mode integral.
    """

    nu: np.ndarray
    n_quad: int
    scale: np.ndarray

    def phase(self, sigma: float, omega) -> np.ndarray:
        """Random phase ``omega*dtau`` (c_o = 1 so ``k = omega``)."""
        omega = np.asarray(omega, dtype=float)
        base = sigma * self.scale * self.nu
        return base[..., None] * omega if omega.ndim else base * float(omega)


def _pairs(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    diff = x - y
    length = np.sqrt(np.sum(diff**2, axis=-1))
    if np.any(length <= 0):
        raise ValueError("ray endpoints coincide")
    return x, y, length


def ray_integral_nu(
    m: MediumRealization,
    x,
    y,
    method: str = "midpoint",
    step: float = QUAD_STEP,
    chunk_modes: int = 2048,
) -> RayIntegralResult:
    """Normalised ray integral of the fluctuations between ``y`` and ``x``.

    Parameters
    ----------
    m : MediumRealization
    x, y : array_like
        Endpoints, broadcastable arrays of shape ``(..., dim)``.
    method : {"midpoint", "exact"}
        ``"midpoint"`` is the composite midpoint rule with step at most
        ``step`` along every ray.  ``"exact"`` integrates each Fourier mode
        in closed form, ``int_0^1 cos(c + b t) dt = cos(c + b/2) sinc(b/2)``,
        which is exact for the finite series and independent of the ray
        length; it is what bulk data synthesis uses.
    """
    x, y, length = _pairs(x, y)
    lead = length.shape
    xf = x.reshape(-1, m.dim)
    yf = y.reshape(-1, m.dim)
    lf = length.reshape(-1)
    acc = np.zeros(lf.shape[0])
    if method == "exact":
        n_quad = 0
        for s in range(0, m.n_modes, chunk_modes):
            xi = m.wavevectors[s:s + chunk_modes]
            ph = m.phases[s:s + chunk_modes]
            a0 = yf @ xi.T + ph
            b = (xf - yf) @ xi.T
            # np.sinc(t) = sin(pi t)/(pi t)
            acc += (np.cos(a0 + 0.5 * b) * np.sinc(b / (2.0 * math.pi))).sum(axis=1)
        acc *= m.amplitude
    elif method == "midpoint":
        n_quad = int(math.ceil(float(lf.max()) / step))
        counts = np.maximum(1, np.ceil(lf / step).astype(int))
        for i in range(lf.shape[0]):
            n = counts[i]
            t = (np.arange(n) + 0.5) / n
            pts = yf[i] + t[:, None] * (xf[i] - yf[i])
            acc[i] = np.mean(evaluate_mu(m, pts))
    else:
        raise ValueError(f"unknown quadrature method {method!r}")
    nu = acc * np.sqrt(lf) / _FOURTH_ROOT_2PI
    scale = 0.5 * _FOURTH_ROOT_2PI * np.sqrt(lf)
    return RayIntegralResult(nu=nu.reshape(lead), n_quad=n_quad, scale=scale.reshape(lead))


def travel_time_phase(m: MediumRealization, x, y, omega, sigma: float, method: str = "exact") -> np.ndarray:
    """Rytov phase factor ``exp(i omega dtau(x, y))``.

    ``omega`` may be an array; the frequency axis is appended last.
    """
    if sigma == 0:
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]) + np.shape(omega)
        return np.ones(shape, dtype=complex)
    ray = ray_integral_nu(m, x, y, method=method)
    return np.exp(1j * ray.phase(sigma, omega))


def nu_variance_finite(length: float) -> float:
    """Exact ``E[nu^2]`` for a straight ray of the given length.

    Evaluates the double integral of the Gaussian autocorrelation along the
    ray in closed form; it tends to 1 as the length grows.
    """
    Lr = float(length)
    inner = math.sqrt(2.0 * math.pi) * math.erf(Lr / math.sqrt(2.0)) / Lr - 2.0 * (1.0 - math.exp(-Lr**2 / 2.0)) / Lr**2
    return Lr / math.sqrt(2.0 * math.pi) * inner


# --------------------------------------------------------------------------
# Monte Carlo oracles


@dataclass(frozen=True)
class MomentEstimate:
    value: complex
    stderr: float
    n: int
    target: complex

    @property
    def deviation(self) -> float:
        return abs(self.value - self.target)


def _ensemble(master_seed: int, n: int, n_modes: int, dim: int, stream: int):
    for i in range(n):
        yield sample_medium(child_seed(master_seed, stream, i), n_modes, dim)


def ensemble_nu(master_seed: int, n: int, x, y, n_modes: int = 1024, dim: int = 2, stream: int = 0) -> np.ndarray:
    """``nu(x, y)`` over ``n`` independent realizations (exact mode integral)."""
    out = []
    for m in _ensemble(master_seed, n, n_modes, dim, stream):
        out.append(ray_integral_nu(m, x, y, method="exact").nu)
    return np.asarray(out)


def moment_oracle_first(master_seed: int, n: int, x, y, omega: float, sigma: float,
                        n_modes: int = 1024, S: float | None = None, stream: int = 1) -> MomentEstimate:
    """Monte Carlo estimate of ``E[G]/G_o = E[exp(i omega dtau)]``.

    The target is ``exp(-|x-y|/S)``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    nu = ensemble_nu(master_seed, n, x, y, n_modes, x.shape[-1], stream)
    length = float(np.linalg.norm(x - y))
    scale = 0.5 * _FOURTH_ROOT_2PI * math.sqrt(length)
    f = np.exp(1j * sigma * omega * scale * nu)
    if S is None:
        from .scenario import scattering_mean_free_path

        S = scattering_mean_free_path(sigma, omega)
    return MomentEstimate(value=complex(f.mean()), stderr=float(f.std() / math.sqrt(n)), n=n,
                          target=complex(math.exp(-length / S)))


def moment_oracle_second(master_seed: int, n: int, x, xp, y, yp, omega: float, omegap: float,
                         sigma: float, Omega_d: float, X_d: float, n_modes: int = 1024,
                         stream: int = 2, min_ensemble: int = 1000) -> MomentEstimate:
    """Monte Carlo estimate of ``E[G G'^*] / (G_o G_o'^*)``.

    Receivers ``x, xp`` and points ``y, yp`` are full coordinate vectors
    (range last).  The target is the simplified second-moment formula
    ``exp(-(w-w')^2/(2 Omega_d^2) - (|yt|^2 + yt.xt + |xt|^2)/(2 X_d^2))``
    built with the cross-range offsets ``xt = x - xp`` and ``yt = y - yp``.
    The decoherence scales are frozen at the central frequency.
    """
    if n < min_ensemble:
        raise ValueError(f"ensemble of {n} realizations is below the minimum {min_ensemble}")
    x, xp, y, yp = (np.asarray(v, float) for v in (x, xp, y, yp))
    dim = x.shape[-1]
    acc = np.empty(n, dtype=complex)
    l1 = float(np.linalg.norm(x - y))
    l2 = float(np.linalg.norm(xp - yp))
    s1 = 0.5 * _FOURTH_ROOT_2PI * math.sqrt(l1) * sigma
    s2 = 0.5 * _FOURTH_ROOT_2PI * math.sqrt(l2) * sigma
    ends_x = np.stack([x, xp])
    ends_y = np.stack([y, yp])
    for i, m in enumerate(_ensemble(master_seed, n, n_modes, dim, stream)):
        nu = ray_integral_nu(m, ends_x, ends_y, method="exact").nu
        acc[i] = np.exp(1j * (omega * s1 * nu[0] - omegap * s2 * nu[1]))
    xt = (x - xp)[:-1]
    yt = (y - yp)[:-1]
    expo = -((omega - omegap) ** 2) / (2 * Omega_d**2) - (yt @ yt + yt @ xt + xt @ xt) / (2 * X_d**2)
    return MomentEstimate(value=complex(acc.mean()), stderr=float(acc.std() / math.sqrt(n)), n=n,
                          target=complex(math.exp(expo)))
