"""Command line entry point.

Subcommands: ``derive``, ``validate``, ``single``, ``ensemble``,
``mesh-study``, ``sep-study`` and ``moments``.  Exit codes: 0 success,
2 invalid configuration, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from ..scenario import ScenarioError, derive_scales, validate_regime
from . import output
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import mesh_study, run_ensemble, run_single, separation_study, validate_moments

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3

logger = logging.getLogger("cintl1")


def bundled_config(name: str) -> Path:
    """Path of a checked-in config shipped with the package (``"reference"`` etc.)."""
    return Path(str(resources.files("cintl1") / "configs" / f"{name}.json"))


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cintl1", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("derive", "print derived scales"),
        ("validate", "evaluate the scaling assumptions"),
        ("single", "one realization, every method"),
        ("ensemble", "peak statistics over realizations"),
        ("mesh-study", "l1 reconstructions on refined meshes"),
        ("sep-study", "two-source runs at several separations"),
        ("moments", "Monte Carlo checks of the medium statistics"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=str, default=None,
                        help="JSON config path or the name of a bundled config")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
        sp.add_argument("--svg", action="store_true", help="also write SVG plots")
        sp.add_argument("-n", "--realizations", type=int, default=None, help="override the realization count")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(arg: str | None) -> ExperimentConfig:
    if arg is None:
        return ExperimentConfig()
    path = Path(arg)
    if not path.exists() and not arg.endswith(".json"):
        path = bundled_config(arg)
    return load_config(path)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.realizations is not None and args.realizations < 1:
            raise ConfigError("--realizations must be at least 1")
    except (ConfigError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    try:
        if cmd == "derive":
            d = derive_scales(cfg.scenario)
            output.write_json(out / "scales.json", d.to_dict())
            output.write_csv(out / "scales.csv", ["name", "value"],
                             ((k, v) for k, v in d.to_dict().items()))
            for k, v in d.to_dict().items():
                print(f"{k:18s} {v}")
            return EXIT_OK
        if cmd == "validate":
            rep = validate_regime(cfg.scenario)
            rows = rep.rows()
            keys = ["assumption", "relation", "lhs", "rhs", "ratio", "passed", "warning", "applies"]
            output.write_csv(out / "regime.csv", keys, ([r[k] for k in keys] for r in rows))
            output.write_json(out / "regime.json", rows)
            for r in rows:
                flag = "ok" if r["passed"] else "FAIL"
                print(f"{r['assumption']:6s} {flag:4s} {r['relation']:45s} ratio={r['ratio']:.3g}")
            return EXIT_OK
        if cmd == "single":
            res = run_single(cfg)
            output.write_single(out, res)
            if args.svg:
                output.plot_single(out, res)
            ok = res.converged
        elif cmd == "ensemble":
            res = run_ensemble(cfg, args.realizations, threads=args.threads)
            R_units = derive_scales(cfg.scenario).R / res.unit
            res.meta["l1_mass_within_R"] = res.mass_near_sources("l1", R_units)
            summary = output.write_ensemble(out, res)
            if args.svg:
                output.plot_histograms(out, res)
            print(summary["mean_peaks"])
            ok = res.converged
        elif cmd == "mesh-study":
            res = mesh_study(cfg, n_realizations=args.realizations, threads=args.threads)
            summary = output.write_mesh_study(out, res)
            if args.svg:
                output.plot_mesh_study(out, res)
            print(dict(zip(res.H_units, summary["mean_errors"].tolist())))
            ok = res.converged
        elif cmd == "sep-study":
            res = separation_study(cfg, n_realizations=args.realizations, threads=args.threads)
            output.write_separation_study(out, res)
            if args.svg:
                output.plot_separation(out, res)
            print(dict(zip(res.separations, res.resolved_fraction().tolist())))
            ok = res.converged
        else:  # moments
            rep = validate_moments(cfg, args.realizations)
            output.write_moments(out, rep)
            for r in rep.rows:
                print(f"{r['name']:26s} {r['value']:.4f} target {r['target']:.4f} "
                      f"{'PASS' if r['passed'] else 'FAIL'}")
            ok = True
    except (ConfigError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not ok:
        print("solver did not converge in at least one solve", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
