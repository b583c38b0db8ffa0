"""Batch command-line front end.

Subcommands: dataset, radius, train, eval, report. A single JSON config
drives everything beyond path and seed overrides. Each run writes into a
timestamped subdirectory with a copy of its config for provenance.

Exit codes: 0 success, 1 usage, 2 config, 3 solver failure, 4 missing
artifacts.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from diroca.datasets import DatasetBundle, build_lilucas, build_slc, save_bundle
from diroca.evaluation import (
    MethodSpec,
    derive_seed,
    fit_fold,
    fold_indices,
    generate_data,
    run_f_misspec,
    run_grid,
    run_omega_misspec,
    write_results,
    write_summary,
)
from diroca.radius import ConcentrationConfig, empirical_radii, gaussian_radii
from diroca.solvers import SolverDivergenceError, load_map, save_map

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_MISSING = 4

_BUILDERS = {"slc": build_slc, "lilucas": build_lilucas}


class ConfigError(Exception):
    pass


def _build_bundle(name: str, seed: int | None = None) -> DatasetBundle:
    if name not in _BUILDERS:
        raise ConfigError(
            f"unknown dataset {name!r} (expected one of {sorted(_BUILDERS)})"
        )
    if seed is None:
        return _BUILDERS[name]()
    return _BUILDERS[name](seed=seed)


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    return doc


def _run_dir(base: str | Path, stage: str) -> Path:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    out = Path(base) / f"{stage}-{stamp}"
    out.mkdir(parents=True, exist_ok=False)
    return out


def _methods_from_config(doc: dict) -> list[MethodSpec]:
    raw = doc.get("methods")
    if not raw:
        raise ConfigError("config needs a nonempty 'methods' list")
    methods = []
    for entry in raw:
        try:
            methods.append(MethodSpec(
                name=entry.get("name", entry["kind"]),
                kind=entry["kind"],
                eps_low=float(entry.get("eps_low", 0.0)),
                eps_high=float(entry.get("eps_high", 0.0)),
                variant=entry.get("variant", "perfect"),
                reg=float(entry.get("reg", 0.01)),
                solver=dict(entry.get("solver", {})),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad method entry {entry!r}: {exc}") from exc
    if len({m.name for m in methods}) != len(methods):
        raise ConfigError("method names must be unique")
    return methods


def _grid_from_config(doc: dict) -> dict:
    grid = doc.get("grid", {})
    out = {
        "alphas": [float(a) for a in grid.get("alphas", [0.0])],
        "sigmas": [float(s) for s in grid.get("sigmas", [0.0])],
        "noise_kinds": list(grid.get("noise_kinds", ["gaussian"])),
        "k": int(grid.get("k", 5)),
        "m": int(grid.get("m", 1)),
    }
    if not out["alphas"] or not out["sigmas"] or not out["noise_kinds"]:
        raise ConfigError("grids must be nonempty")
    if out["k"] < 2:
        raise ConfigError("k must be at least 2")
    return out


def _common(doc: dict) -> tuple[DatasetBundle, str, int, int]:
    ds = doc.get("dataset", {})
    name = ds.get("name", "slc")
    seed = ds.get("seed")
    bundle = _build_bundle(name, None if seed is None else int(seed))
    setting = doc.get("setting", "gaussian")
    if setting not in ("gaussian", "empirical"):
        raise ConfigError(f"unknown setting {setting!r}")
    root_seed = int(doc.get("root_seed", 0))
    n = int(doc.get("n_samples", 10000))
    return bundle, setting, root_seed, n


# ---------------------------------------------------------------------------
# Subcommands


def cmd_dataset(args) -> int:
    try:
        bundle = _build_bundle(args.name, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out)
    data = generate_data(bundle, args.n, args.seed if args.seed is not None else 0)
    for level in ("low", "high"):
        for i, x in enumerate(data[level]):
            np.savetxt(out / f"{level}_samples_{i:02d}.csv", x,
                       delimiter=",", fmt="%.17g")
    print(f"wrote dataset {bundle.name!r} to {out}")
    return EXIT_OK


def cmd_radius(args) -> int:
    doc = _load_config(args.config)
    raw = doc.get("concentration", {})
    try:
        cfg = ConcentrationConfig(**raw)
        g_low, g_high, g_joint = gaussian_radii(cfg)
        e_low, e_high, e_joint = empirical_radii(cfg)
    except (TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({
        "gaussian": {"eps_low": g_low, "eps_high": g_high, "eps_joint": g_joint},
        "empirical": {"eps_low": e_low, "eps_high": e_high, "eps_joint": e_joint},
    }, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    bundle, setting, root_seed, n = _common(doc)
    methods = _methods_from_config(doc)
    grid = _grid_from_config(doc)
    out = _run_dir(doc.get("io", {}).get("out_dir", "runs"), "train")
    shutil.copy(args.config, out / "config.json")

    data = generate_data(bundle, n, root_seed)
    folds = fold_indices(data["low"][0].shape[0], grid["k"])
    manifest = {"dataset": bundle.name, "setting": setting, "maps": [],
                "failures": []}
    failed = False
    trace_rows = []
    for fold, (train_idx, _) in enumerate(folds):
        train_low = [x[train_idx] for x in data["low"]]
        train_high = [x[train_idx] for x in data["high"]]
        for method in methods:
            map_path = out / f"map_{method.name}_fold{fold}.json"
            try:
                amap, trace = fit_fold(
                    bundle, setting, method, train_low, train_high,
                    derive_seed(root_seed, "fit", method.name, fold),
                    return_trace=True,
                )
            except SolverDivergenceError as exc:
                failed = True
                manifest["failures"].append(
                    {"method": method.name, "fold": fold, "trace": exc.trace}
                )
                continue
            save_map(map_path, amap, method.name, method.eps_low,
                     method.eps_high, root_seed, bundle.name)
            manifest["maps"].append(map_path.name)
            for i, value in enumerate(trace):
                trace_rows.append([method.name, fold, i, f"{value:.12g}"])
    with open(out / "traces.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "fold", "iteration", "objective"])
        writer.writerows(trace_rows)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if failed:
        print(f"solver failure(s); see {out / 'manifest.json'}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(manifest['maps'])} map files to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    doc = _load_config(args.config)
    bundle, setting, root_seed, n = _common(doc)
    methods = _methods_from_config(doc)
    grid = _grid_from_config(doc)
    maps_dir = Path(args.maps) if args.maps else None
    fitted = None
    if maps_dir is not None:
        if not maps_dir.is_dir():
            print(f"missing artifacts: {maps_dir} is not a directory",
                  file=sys.stderr)
            return EXIT_MISSING
        fitted = {}
        for method in methods:
            for fold in range(grid["k"]):
                path = maps_dir / f"map_{method.name}_fold{fold}.json"
                if not path.exists():
                    print(f"missing artifacts: {path}", file=sys.stderr)
                    return EXIT_MISSING
                amap, _ = load_map(path)
                fitted[(method.name, fold)] = amap
    out = _run_dir(doc.get("io", {}).get("out_dir", "runs"), "eval")
    shutil.copy(args.config, out / "config.json")
    results = run_grid(
        bundle, setting, methods,
        grid["alphas"], grid["sigmas"], grid["noise_kinds"],
        k=grid["k"], m=grid["m"], root_seed=root_seed, n=n, fitted=fitted,
    )
    misspec = doc.get("misspec", {})
    if "f" in misspec:
        block = misspec["f"]
        results += run_f_misspec(
            bundle, setting, methods, block.get("fnl", "sin"),
            [float(v) for v in block.get("k", [1.0])],
            k=grid["k"], m=grid["m"], root_seed=root_seed, n=n,
        )
    if "omega" in misspec:
        block = misspec["omega"]
        results += run_omega_misspec(
            bundle, setting, methods, int(block.get("n_misalign", 1)),
            int(block.get("delta", 0)),
            k=grid["k"], m=grid["m"], root_seed=root_seed, n=n,
        )
    write_results(out / "results.csv", results)
    write_summary(out / "summary.json", results)
    print(f"wrote {len(results)} records to {out / 'results.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.results)
    csv_path = src / "results.csv" if src.is_dir() else src
    if not csv_path.exists():
        print(f"missing artifacts: {csv_path}", file=sys.stderr)
        return EXIT_MISSING
    from diroca.evaluation import read_results

    results = read_results(csv_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def emit(group_key, x_attr, x_name):
        groups: dict[tuple, dict[tuple, list[float]]] = {}
        for r in results:
            g = group_key(r)
            x = getattr(r, x_attr)
            groups.setdefault(g, {}).setdefault((r.method, x), []).append(r.error)
        for g, cells in sorted(groups.items()):
            tag = "__".join(str(v) for v in g)
            path = out / f"curve_{x_name}__{tag}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["method", x_name, "mean", "std", "count"])
                for (method, x), errs in sorted(cells.items()):
                    std = float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0
                    writer.writerow([
                        method, f"{x:.12g}", f"{float(np.mean(errs)):.17g}",
                        f"{std:.17g}", len(errs),
                    ])
        return len(groups)

    n_alpha = emit(lambda r: (f"sigma={r.sigma:g}", r.noise_kind), "alpha", "alpha")
    n_sigma = emit(lambda r: (f"alpha={r.alpha:g}", r.noise_kind), "sigma", "sigma")
    print(f"wrote {n_alpha + n_sigma} curve files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diroca",
        description="Robust causal-abstraction learning: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="emit a built-in dataset with samples")
    p.add_argument("name", help="slc or lilucas")
    p.add_argument("--out", default="dataset", help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="dataset draw override (defaults to the shipped draw)")
    p.add_argument("--n", type=int, default=10000,
                   help="samples per intervention per level")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("radius", help="print concentration radii as JSON")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_radius)

    p = sub.add_parser("train", help="fit maps per (method, fold)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score maps over the contamination grid")
    p.add_argument("--config", required=True)
    p.add_argument("--maps", default=None,
                   help="train output directory (refits when omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate results into per-curve files")
    p.add_argument("--results", required=True,
                   help="results.csv or an eval output directory")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDivergenceError:
        print("solver diverged", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
