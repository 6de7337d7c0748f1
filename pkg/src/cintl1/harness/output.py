"""CSV/JSON writers for experiment results and optional SVG plots.

CSV files are the canonical outputs.  Floats are written with ``repr`` so
that reruns with the same configuration produce identical files; timings
go to the JSON summaries only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .experiments import METHODS, ExperimentResult, MeshStudyResult, MomentReport, SeparationStudyResult

logger = logging.getLogger(__name__)


def _f(x) -> str:
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_peaks(out: Path, res: ExperimentResult) -> None:
    rows = []
    for r in res.realizations:
        for m in METHODS:
            for p in r.peaks.get(m, []):
                rows.append((r.index, m, float(p)))
    write_csv(out / "peaks.csv", ["realization", "method", "cross_range_units"], rows)


def write_single(out: Path, res: ExperimentResult) -> None:
    write_peaks(out, res)
    r = res.realizations[0]
    axis = res.mesh_axis / res.unit
    cols = [m for m in METHODS if m in r.images]
    write_csv(out / "images.csv", ["cross_range_units"] + cols,
              ([float(x)] + [float(r.images[m][k]) for m in cols] for k, x in enumerate(axis)))
    write_json(out / "summary.json", {
        "kind": res.kind, "scenario_hash": res.scenario_hash, "master_seed": res.master_seed,
        "unit": res.unit, "unit_convention": res.unit_convention, "sources_units": res.sources,
        "kernel_constant": res.kernel_constant, "peak_counts": {m: len(r.peaks.get(m, [])) for m in METHODS},
        "converged": r.converged, "certificate_gap": r.certificate, "delta": r.delta_used, "timing": r.timing,
    })


def write_ensemble(out: Path, res: ExperimentResult, bin_units: float = 0.1) -> dict:
    write_peaks(out, res)
    write_csv(out / "peak_counts.csv", ["realization"] + list(METHODS),
              ([r.index] + [len(r.peaks.get(m, [])) for m in METHODS] for r in res.realizations))
    hists = {m: res.histogram(m, bin_units) for m in METHODS}
    edges = hists[METHODS[0]][0]
    write_csv(out / "histograms.csv", ["bin_left_units", "bin_right_units"] + list(METHODS),
              ([float(edges[k]), float(edges[k + 1])] + [int(hists[m][1][k]) for m in METHODS]
               for k in range(len(edges) - 1)))
    summary = {
        "kind": res.kind, "scenario_hash": res.scenario_hash, "master_seed": res.master_seed,
        "n_realizations": len(res.realizations), "unit": res.unit, "unit_convention": res.unit_convention,
        "sources_units": res.sources, "kernel_constant": res.kernel_constant,
        "mean_peaks": res.mean_peaks(), "histogram_bin_units": bin_units,
        "l1_mass_within_R": res.meta.get("l1_mass_within_R"), "converged": res.converged,
        "timing_total": sum(r.timing.get("total", 0.0) for r in res.realizations),
    }
    write_json(out / "summary.json", summary)
    return summary


def write_mesh_study(out: Path, res: MeshStudyResult) -> dict:
    write_csv(out / "mesh_errors.csv", ["realization", "H_units", "aggregated_error"],
              ((i, float(h), float(res.errors[i, k])) for i in range(res.errors.shape[0])
               for k, h in enumerate(res.H_units)))
    write_csv(out / "aggregated.csv", ["realization", "H_units", "source_units", "aggregated_mass"],
              ((i, float(h), float(y), float(res.aggregated[i, k, j])) for i in range(res.errors.shape[0])
               for k, h in enumerate(res.H_units) for j, y in enumerate(res.sources)))
    for h, u in res.reconstructions.items():
        write_csv(out / f"reconstruction_H{h:g}.csv", ["cross_range_units", "u"],
                  ((float(x), float(v)) for x, v in zip(res.axes[h], u)))
    summary = {"H_units": res.H_units, "mean_errors": res.mean_errors(), "converged": res.converged, **res.meta}
    write_json(out / "summary.json", summary)
    return summary


def write_separation_study(out: Path, res: SeparationStudyResult) -> dict:
    write_csv(out / "separation.csv", ["realization", "separation_units", "resolved", "localisation_error_units"],
              ((i, float(s), int(res.resolved[i, k]), float(res.errors[i, k]))
               for i in range(res.resolved.shape[0]) for k, s in enumerate(res.separations)))
    summary = {"separations_units": res.separations, "resolved_fraction": res.resolved_fraction(),
               "mean_errors": res.mean_errors(), "converged": res.converged}
    write_json(out / "summary.json", summary)
    return summary


def write_moments(out: Path, rep: MomentReport) -> dict:
    keys = ["name", "value", "target", "tolerance", "passed"]
    write_csv(out / "moments.csv", keys, ([r[k] for k in keys] for r in rep.rows))
    summary = {"rows": rep.rows, "passed": rep.passed}
    write_json(out / "summary.json", summary)
    return summary


# --------------------------------------------------------------------------
# plots


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # plotting is optional
        logger.warning("matplotlib is not installed; skipping SVG output")
        return None
    return plt


def plot_single(out: Path, res: ExperimentResult) -> None:
    plt = _pyplot()
    if plt is None:
        return
    r = res.realizations[0]
    axis = res.mesh_axis / res.unit
    fig, axs = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, m in zip(axs.ravel(), ("cint", "migration", "l1", "direct_l1")):
        if m in r.images:
            v = np.asarray(r.images[m], float)
            top = v.max() if v.size and v.max() > 0 else 1.0
            if m in ("l1", "direct_l1"):
                ax.vlines(axis, 0, v / top, lw=1.5)
            else:
                ax.plot(axis, v / top)
        ax.plot(res.sources, np.zeros(len(res.sources)), "k*", ms=9)
        ax.set_title(m)
    for ax in axs[1]:
        ax.set_xlabel("cross-range (units)")
    fig.tight_layout()
    fig.savefig(out / "single.svg")
    plt.close(fig)


def plot_histograms(out: Path, res: ExperimentResult, bin_units: float = 0.1) -> None:
    plt = _pyplot()
    if plt is None:
        return
    fig, axs = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, m in zip(axs.ravel(), ("cint", "migration", "l1", "direct_l1")):
        edges, counts = res.histogram(m, bin_units)
        ax.bar(0.5 * (edges[:-1] + edges[1:]), counts, width=bin_units)
        ax.plot(res.sources, np.zeros(len(res.sources)), "k*", ms=9)
        ax.set_title(f"{m}: {res.peak_counts(m).mean():.2f} peaks")
    fig.tight_layout()
    fig.savefig(out / "histograms.svg")
    plt.close(fig)


def plot_mesh_study(out: Path, res: MeshStudyResult) -> None:
    plt = _pyplot()
    if plt is None:
        return
    fig, axs = plt.subplots(1, len(res.H_units), figsize=(3 * len(res.H_units), 3), sharey=True)
    axs = np.atleast_1d(axs)
    for ax, h in zip(axs, res.H_units):
        ax.vlines(res.axes[h], 0, res.reconstructions[h], lw=1.5)
        ax.plot(res.sources, np.zeros(len(res.sources)), "k*", ms=9)
        ax.set_title(f"H = {h:g}")
    fig.tight_layout()
    fig.savefig(out / "mesh_study.svg")
    plt.close(fig)


def plot_separation(out: Path, res: SeparationStudyResult) -> None:
    plt = _pyplot()
    if plt is None:
        return
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(res.separations, res.mean_errors(), "o-")
    ax.set_xlabel("separation (units)")
    ax.set_ylabel("localisation error (units)")
    fig.tight_layout()
    fig.savefig(out / "separation.svg")
    plt.close(fig)
