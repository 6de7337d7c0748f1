"""Experiment pipelines: single realizations, ensembles and parameter sweeps.

Every random draw comes from a child of the scenario master seed keyed by
a stream counter and the realization index, so results do not depend on
the execution order or on the number of worker processes.

Seed streams: 1 medium, 3 noise, 7 source phases, 11 kernel calibration.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ..forward import ArrayData, SourceSet, make_sources, synthesize_data
from ..imaging import Image, Mesh, build_mesh, centered_axis, cint, migrate
from ..kernel import KernelScales, build_matrix, calibrate_constant
from ..medium import child_seed, moment_oracle_first, moment_oracle_second, ensemble_nu, sample_medium
from ..resolution import Peak, detect_peaks
from ..scenario import DerivedScales, Scenario, cross_range_unit, derive_scales, mesh_step
from ..solver import Reconstruction, direct_l1, solve_bpdn
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

METHODS = ("migration", "cint", "l1", "direct_l1")
STREAM_MEDIUM, STREAM_NOISE, STREAM_CAL = 1, 3, 11


@dataclass
class RealizationResult:
    index: int
    seed: tuple[int, ...]
    peaks: dict[str, list[float]]
    reconstruction: np.ndarray | None = None
    images: dict[str, np.ndarray] = field(default_factory=dict)
    converged: bool = True
    certificate: float | None = None
    delta_used: float | None = None
    timing: dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    """Outcome of one experiment; peak positions are in cross-range units."""

    kind: str
    scenario_hash: str
    master_seed: int
    unit: float
    unit_convention: str
    sources: list[float]
    mesh_axis: np.ndarray
    realizations: list[RealizationResult]
    kernel_constant: float
    meta: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list[tuple[int, ...]]:
        return [r.seed for r in self.realizations]

    def peak_counts(self, method: str) -> np.ndarray:
        return np.array([len(r.peaks.get(method, [])) for r in self.realizations])

    def mean_peaks(self) -> dict[str, float]:
        present = [m for m in METHODS if any(m in r.peaks for r in self.realizations)]
        return {m: float(self.peak_counts(m).mean()) for m in present}

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.realizations)

    def histogram(self, method: str, bin_width_units: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        """Peak-location histogram with bins of ``bin_width_units`` (centred on 0)."""
        half = 0.5 * (self.mesh_axis[-1] - self.mesh_axis[0]) / self.unit
        nb = int(math.ceil(half / bin_width_units - 0.5))
        edges = (np.arange(-nb, nb + 2) - 0.5) * bin_width_units
        pos = np.concatenate([np.asarray(r.peaks.get(method, []), float) for r in self.realizations] or [np.zeros(0)])
        counts, _ = np.histogram(pos, edges)
        return edges, counts

    def mass_near_sources(self, method: str, radius_units: float) -> float:
        """Fraction of all detected peaks within ``radius_units`` of a true source."""
        pos = np.concatenate([np.asarray(r.peaks.get(method, []), float) for r in self.realizations] or [np.zeros(0)])
        if pos.size == 0:
            return 0.0
        src = np.asarray(self.sources, float)
        near = np.min(np.abs(pos[:, None] - src[None, :]), axis=1) <= radius_units
        return float(near.mean())


# --------------------------------------------------------------------------
# building blocks


@dataclass(frozen=True)
class Setup:
    cfg: ExperimentConfig
    s: Scenario
    d: DerivedScales
    unit: float
    mesh: Mesh
    samples: np.ndarray
    sources: SourceSet
    ks: KernelScales


def _cross_mesh(s: Scenario, h: float) -> Mesh:
    return Mesh((centered_axis(s.D, h), np.array([s.L])))


def make_setup(cfg: ExperimentConfig, cross_units=None, h: float | None = None, C: float | None = None) -> Setup:
    """Scales, mesh, sample points, sources and kernel for a 2D section run."""
    s = cfg.scenario
    if s.dim != 2:
        raise ValueError("the harness pipelines run 2D cross-range sections")
    d = derive_scales(s)
    U = cross_range_unit(s, d, cfg.unit)
    h = mesh_step(s, d, cfg.unit) if h is None else h
    mesh = _cross_mesh(s, h)
    if cfg.sample_step_units is not None:
        step = cfg.sample_step_units * U
    elif s.sample_spacing is not None:
        step = s.sample_spacing
    else:
        step = 2.0 * mesh_step(s, d, cfg.unit)
    samples = np.column_stack([centered_axis(s.D, step), np.full(len(centered_axis(s.D, step)), s.L)])
    units = cfg.sources.cross_range_units if cross_units is None else cross_units
    src = make_sources(np.asarray(units, float) * U, s,
                       ranges=None if cfg.sources.range_offsets is None else s.L + np.asarray(cfg.sources.range_offsets),
                       amplitudes=cfg.sources.amplitudes, phases=cfg.sources.random_phases)
    if not src.inside(s):
        raise ValueError("sources must lie inside the imaging region")
    ks = KernelScales.from_scales(d)
    C = kernel_constant(cfg) if C is None else C
    return Setup(cfg, s, d, U, mesh, samples, src, ks.with_constant(C))


def kernel_constant(cfg: ExperimentConfig) -> float:
    """Configured constant, or the calibrated one (cached per scenario)."""
    if cfg.kernel_constant is not None:
        return float(cfg.kernel_constant)
    return _calibrated(cfg.scenario, cfg.n_modes, cfg.calibration_realizations, cfg.unit)


@lru_cache(maxsize=16)
def _calibrated(s: Scenario, n_modes: int, n_real: int, unit: str) -> float:
    d = derive_scales(s)
    ks = KernelScales.from_scales(d)
    mesh = _cross_mesh(s, mesh_step(s, d, unit))
    cal = calibrate_constant(ks, s, d, n_realizations=n_real, n_modes=n_modes, mesh=mesh, stream=STREAM_CAL)
    logger.info("calibrated kernel constant C = %.6g (rel. L2 misfit %.3g)", cal.C, cal.rel_l2_error)
    return cal.C


def realization_data(st: Setup, i: int, sources: SourceSet | None = None) -> ArrayData:
    s = st.s
    src = st.sources if sources is None else sources
    m = None if st.cfg.homogeneous else sample_medium(child_seed(s.master_seed, STREAM_MEDIUM, i), st.cfg.n_modes, 2)
    return synthesize_data(src, m, s, st.d, noise_seed=child_seed(s.master_seed, STREAM_NOISE, i))


def _cint_at(data: ArrayData, st: Setup, img: Image | None, pts: np.ndarray) -> np.ndarray:
    if img is not None:
        mpts = img.mesh.points
        idx = img.mesh.nearest_index(pts)
        if np.allclose(mpts[idx], pts, atol=1e-9, rtol=0):
            return img.values[idx]
    return cint(data, pts, st.d.X, st.d.Omega).values


def l1_on_cint(st: Setup, d_vec: np.ndarray, mesh: Mesh | None = None) -> tuple[Reconstruction, float]:
    """BPDN on the sampled CINT image with ``delta = delta_rel ||d||``.

    When the least squares misfit of the mesh model already exceeds that
    tolerance (very coarse meshes) the tolerance is raised just above the
    misfit so that the program stays feasible; the value used is returned.
    """
    mesh = st.mesh if mesh is None else mesh
    M = build_matrix(mesh, st.samples, st.ks).values
    delta = st.cfg.delta_rel * float(np.linalg.norm(d_vec))
    u_ls, *_ = np.linalg.lstsq(M, d_vec, rcond=None)
    r_ls = float(np.linalg.norm(M @ u_ls - d_vec))
    if r_ls >= delta:
        delta = r_ls * (1 + 1e-3) + 1e-15
    rec = solve_bpdn(M, d_vec, delta, st.cfg.solver)
    return rec, delta


def _positions(peaks: list[Peak], axis_units: np.ndarray) -> list[float]:
    return [float(np.interp(p.index[0], np.arange(len(axis_units)), axis_units)) for p in peaks]


def run_realization(st: Setup, i: int, keep_images: bool = False, methods=METHODS) -> RealizationResult:
    t0 = time.perf_counter()
    s = st.s
    timing = {}
    if st.sources.count == 0:
        return RealizationResult(i, (s.master_seed, STREAM_MEDIUM, i), {m: [] for m in methods})
    data = realization_data(st, i)
    timing["data"] = time.perf_counter() - t0
    pts = st.mesh.points
    axis_u = st.mesh.axes[0] / st.unit
    thr = st.cfg.threshold_frac
    peaks: dict[str, list[float]] = {}
    images: dict[str, np.ndarray] = {}
    img_c = None
    if "migration" in methods:
        t = time.perf_counter()
        mig = migrate(data, pts)
        peaks["migration"] = _positions(detect_peaks(np.abs(mig.values), threshold_frac=thr), axis_u)
        images["migration"] = np.abs(mig.values)
        timing["migration"] = time.perf_counter() - t
    if "cint" in methods or "l1" in methods:
        t = time.perf_counter()
        img_c = cint(data, st.mesh, st.d.X, st.d.Omega)
        peaks["cint"] = _positions(detect_peaks(img_c.values, threshold_frac=thr), axis_u)
        images["cint"] = img_c.values
        timing["cint"] = time.perf_counter() - t
    rec = None
    conv, cert, delta = True, None, None
    if "l1" in methods:
        t = time.perf_counter()
        dv = _cint_at(data, st, img_c, st.samples)
        rec, delta = l1_on_cint(st, dv)
        conv, cert = rec.converged, rec.certificate
        peaks["l1"] = _positions(detect_peaks(np.maximum(rec.u, 0.0), threshold_frac=thr), axis_u)
        images["l1"] = rec.u
        timing["l1"] = time.perf_counter() - t
    if "direct_l1" in methods and st.cfg.direct_l1:
        t = time.perf_counter()
        dres = direct_l1(data, pts, st.d.omega0, st.d.B, rel_noise=st.cfg.delta_rel, opts=st.cfg.solver)
        mag = np.abs(dres.rho)  # displayed as the amplitude modulus
        peaks["direct_l1"] = _positions(detect_peaks(mag, threshold_frac=thr), axis_u)
        images["direct_l1"] = mag
        conv = conv and dres.reconstruction.converged
        timing["direct_l1"] = time.perf_counter() - t
    timing["total"] = time.perf_counter() - t0
    return RealizationResult(i, (s.master_seed, STREAM_MEDIUM, i), peaks,
                             None if rec is None else rec.u, images if keep_images else {},
                             conv, cert, delta, timing)


def _worker(args):
    cfg, C, i, keep = args
    return run_realization(make_setup(cfg, C=C), i, keep)


def _map(cfg: ExperimentConfig, C: float, indices, threads: int, keep: bool) -> list[RealizationResult]:
    jobs = [(cfg, C, i, keep) for i in indices]
    if threads <= 1 or len(jobs) <= 1:
        st = make_setup(cfg, C=C)
        return [run_realization(st, i, keep) for i in indices]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_worker, jobs))  # map preserves order


def _result(kind: str, st: Setup, reals, meta=None) -> ExperimentResult:
    src_u = (st.sources.positions[:, 0] / st.unit).tolist() if st.sources.count else []
    return ExperimentResult(kind, st.s.digest(), st.s.master_seed, st.unit, st.cfg.unit, src_u,
                            st.mesh.axes[0], reals, st.ks.C, dict(meta or {}))


# --------------------------------------------------------------------------
# experiments


def run_single(cfg: ExperimentConfig, index: int = 0) -> ExperimentResult:
    """One realization with every method; images are kept for plotting."""
    st = make_setup(cfg)
    r = run_realization(st, index, keep_images=True)
    return _result("single", st, [r])


def run_ensemble(cfg: ExperimentConfig, n_realizations: int | None = None, threads: int = 1) -> ExperimentResult:
    """Independent realizations; per-method peak lists, means and histograms."""
    n = cfg.n_realizations if n_realizations is None else n_realizations
    if n < 1:
        raise ValueError("need at least one realization")
    st = make_setup(cfg)
    reals = _map(cfg, st.ks.C, range(n), threads, False)
    return _result("ensemble", st, reals, {"histogram_bin_units": 0.1, "n": n})


@dataclass
class MeshStudyResult:
    H_units: list[float]
    errors: np.ndarray          # (n_realizations, n_H) aggregated relative errors
    aggregated: np.ndarray      # (n_realizations, n_H, n_sources)
    reconstructions: dict[float, np.ndarray]
    axes: dict[float, np.ndarray]
    sources: list[float]
    converged: bool
    meta: dict = field(default_factory=dict)

    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)


def aggregate_mass(u: np.ndarray, axis: np.ndarray, sources, half_width: float) -> np.ndarray:
    """Sum of ``u`` over ``|z - y_s| <= half_width`` for each source ``y_s``."""
    src = np.asarray(sources, float)
    return np.array([float(np.sum(u[np.abs(axis - y) <= half_width + 1e-12])) for y in src])


def _mesh_study_one(args):
    cfg, C, i, H_units = args
    st = make_setup(cfg, C=C)
    data = realization_data(st, i)
    dv = cint(data, st.samples, st.d.X, st.d.Omega).values
    true = st.sources.intensities()
    half = 0.5 * cfg.aggregation_units * st.unit
    errs, aggs, recs, conv = [], [], [], True
    for hu in H_units:
        mesh = _cross_mesh(st.s, hu * st.unit)
        rec, _ = l1_on_cint(st, dv, mesh)
        conv &= rec.converged
        agg = aggregate_mass(rec.u, mesh.axes[0], st.sources.positions[:, 0], half)
        aggs.append(agg)
        errs.append(float(np.sum(np.abs(agg - true)) / np.sum(true)))
        recs.append(rec.u)
    return errs, aggs, recs, conv


def mesh_study(cfg: ExperimentConfig, H_units=None, n_realizations: int | None = None, threads: int = 1) -> MeshStudyResult:
    """l1 reconstructions on meshes of step ``H`` (in cross-range units).

    The CINT data are sampled at the same points for every mesh.  The error
    is the relative l1 mismatch of the mass aggregated in intervals of
    length ``aggregation_units`` about each true source.
    """
    H = list(cfg.mesh_H_units if H_units is None else H_units)
    if not H:
        raise ValueError("H_list must be nonempty")
    n = cfg.n_realizations if n_realizations is None else n_realizations
    st = make_setup(cfg)
    jobs = [(cfg, st.ks.C, i, H) for i in range(n)]
    if threads > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_mesh_study_one, jobs))
    else:
        outs = [_mesh_study_one(j) for j in jobs]
    errors = np.array([o[0] for o in outs])
    aggs = np.array([o[1] for o in outs])
    recs = {h: outs[0][2][k] for k, h in enumerate(H)}
    axes = {h: _cross_mesh(st.s, h * st.unit).axes[0] / st.unit for h in H}
    return MeshStudyResult(H, errors, aggs, recs, axes, (st.sources.positions[:, 0] / st.unit).tolist(),
                           all(o[3] for o in outs), {"aggregation_units": cfg.aggregation_units, "n": n})


@dataclass
class SeparationStudyResult:
    separations: list[float]
    resolved: np.ndarray        # (n_realizations, n_sep) bool
    errors: np.ndarray          # (n_realizations, n_sep) localisation error in units
    peaks: list[list[list[float]]]
    converged: bool

    def resolved_fraction(self) -> np.ndarray:
        return self.resolved.mean(axis=0)

    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)


def two_source_resolved(peaks_u, sources_u) -> bool:
    """Both sources resolved: the two strongest peaks fall on opposite sides
    of the midpoint and each lies within half the separation of its source."""
    if len(peaks_u) < 2:
        return False
    a, b = sorted(sources_u)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pk = np.asarray(peaks_u, float)
    left = pk[pk < mid]
    right = pk[pk >= mid]
    if left.size == 0 or right.size == 0:
        return False
    return bool(np.min(np.abs(left - a)) < half and np.min(np.abs(right - b)) < half)


def localisation_error(peaks_u, sources_u) -> float:
    """Mean distance from each source to its nearest peak (cross-range units)."""
    if len(peaks_u) == 0:
        return math.inf
    pk = np.asarray(peaks_u, float)
    return float(np.mean([np.min(np.abs(pk - y)) for y in sources_u]))


def _sep_one(args):
    cfg, C, i, seps, center = args
    out_res, out_err, out_pk, conv = [], [], [], True
    for sep in seps:
        units = (center - sep / 2, center + sep / 2)
        st = make_setup(cfg, cross_units=units, C=C)
        r = run_realization(st, i, methods=("l1",))
        pk = _weighted_peaks(r, st)
        conv &= r.converged
        out_pk.append(pk)
        out_res.append(two_source_resolved(pk, units))
        out_err.append(localisation_error(pk, units))
    return out_res, out_err, out_pk, conv


def _weighted_peaks(r: RealizationResult, st: Setup) -> list[float]:
    """l1 peaks ordered by decreasing reconstructed value."""
    axis_u = st.mesh.axes[0] / st.unit
    pk = detect_peaks(np.maximum(r.reconstruction, 0.0), threshold_frac=st.cfg.threshold_frac)
    pk = sorted(pk, key=lambda p: -p.value)
    return _positions(pk, axis_u)


def separation_study(cfg: ExperimentConfig, separations=None, n_realizations: int | None = None,
                     threads: int = 1, center_units: float = 0.07) -> SeparationStudyResult:
    """Two-source l1 runs at several separations (cross-range units).

    The pair is centred at ``center_units`` (off the mesh by default).
    """
    seps = list(cfg.separations_units if separations is None else separations)
    if any(x <= 0 for x in seps):
        raise ValueError("separations must be positive")
    n = cfg.n_realizations if n_realizations is None else n_realizations
    C = kernel_constant(cfg)
    jobs = [(cfg, C, i, seps, center_units) for i in range(n)]
    if threads > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_sep_one, jobs))
    else:
        outs = [_sep_one(j) for j in jobs]
    return SeparationStudyResult(seps, np.array([o[0] for o in outs]), np.array([o[1] for o in outs]),
                                 [o[2] for o in outs], all(o[3] for o in outs))


@dataclass
class MomentReport:
    rows: list[dict]

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)


def validate_moments(cfg: ExperimentConfig, n: int | None = None) -> MomentReport:
    """Monte Carlo checks of the travel-time statistics and the mean and
    second moment of the random Green's function."""
    mc = cfg.moments
    n = mc.n if n is None else n
    if n < 1000:
        raise ValueError("moment validation needs at least 1000 realizations")
    s = cfg.scenario
    d = derive_scales(s)
    seed = s.master_seed
    x = np.zeros(s.dim)
    y = np.zeros(s.dim)
    y[-1] = s.L
    nu = ensemble_nu(seed, n, x, y, mc.n_modes, s.dim, stream=21)
    var = float(np.var(nu))
    rows = [{"name": "var_nu", "value": var, "target": 1.0, "tolerance": 0.05,
             "passed": abs(var - 1.0) <= 0.05}]
    yS = np.zeros(s.dim)
    yS[-1] = d.S
    first = moment_oracle_first(seed, n, x, yS, d.omega0, s.sigma, mc.n_modes, d.S, stream=22)
    v1 = abs(first.value)
    rows.append({"name": "mean_phase_at_S", "value": v1, "target": math.exp(-1), "tolerance": 0.05,
                 "passed": abs(v1 - math.exp(-1)) <= 0.05, "stderr": first.stderr})
    xp = x.copy()
    xp[0] = mc.offset_over_Xd * d.X_d
    second = moment_oracle_second(seed, n, x, xp, y, y, d.omega0, d.omega0, s.sigma, d.Omega_d, d.X_d,
                                  mc.n_modes, stream=23)
    target = math.exp(-0.5 * mc.offset_over_Xd**2)
    v2 = abs(second.value)
    rows.append({"name": "second_moment_offset_Xd", "value": v2, "target": target,
                 "tolerance": 0.07, "passed": abs(v2 - target) <= 0.07, "stderr": second.stderr})
    return MomentReport(rows)
