"""Command-line front end: ``vri <command> [options]``.

Every command accepts ``--config FILE.json``; flags given on the command
line override values from the file, which override built-in defaults.
Each output directory receives ``metadata.json`` holding the effective
configuration.

Exit status: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .descriptors import SectionSpec, compute_field, save_field, write_field_csv
from .dynamics import NumericalError
from .experiments import (
    LAW_DEGREE,
    QUANTITIES,
    QUARTIC_C_MAX,
    RankDeficiencyError,
    SweepTable,
    branching_run,
    default_c_grid,
    estimate_critical_c,
    fit_reference_laws,
    sweep,
)
from .manifolds import (
    extract_manifolds,
    identify_lobes,
    lobe_summary,
    write_curves_csv,
    write_lobes_csv,
    write_summary,
)
from .potential import ConvergenceError, SystemParams, find_critical_points

log = logging.getLogger("vri")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Report malformed command lines with the validation exit status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


DEFAULTS = {
    "common": {"H0": 0.1, "m_x": 1.0, "m_y": 1.0, "out": ".", "threads": 1},
    "critical-points": {"c": [0.0], "json": False},
    "ld-field": {
        "c": [0.0],
        "tau": 8.0,
        "grid": [600, 600],
        "step": 1e-3,
        "p_exponent": 0.5,
        "quantile": 0.97,
        "y_range": [-1.2, 1.2],
        "p_y_range": [-0.7, 0.7],
        "x_section": 0.05,
        "csv": True,
        "image": True,
    },
    "branching": {"c": [0.0], "n_traj": 1000, "t_max": 100.0, "step": 1e-3, "labels": False},
    "sweep": {
        "c": None,
        "c_step": 0.025,
        "c_max": 0.5,
        "quantities": list(QUANTITIES),
        "n_traj": 1000,
        "t_max": 100.0,
        "step": 1e-3,
        "tau": 8.0,
        "grid": [600, 600],
        "quantile": 0.97,
        "flatness_grid": 101,
        "cache_dir": None,
        "critical_c": True,
    },
    "fit": {"table": None},
}


def _grid(text: str) -> list[int]:
    parts = text.lower().split("x")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be N or NYxNP, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"grid must be N or NYxNP, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vri", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of option values")
    common.add_argument("--out", type=Path, help="output directory (default: current)")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--H0", type=float, dest="H0", help="total energy")
    common.add_argument("--m-x", type=float, dest="m_x")
    common.add_argument("--m-y", type=float, dest="m_y")
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("critical-points", parents=[common], help="locate and classify equilibria")
    p.add_argument("--c", type=float, nargs="+")
    p.add_argument("--json", action="store_true", default=None, help="print JSON instead of a table")

    p = sub.add_parser("ld-field", parents=[common], help="Lagrangian descriptor field, manifolds, lobes")
    p.add_argument("--c", type=float, nargs="+")
    p.add_argument("--tau", type=float)
    p.add_argument("--grid", type=_grid, help="N or NYxNP section nodes")
    p.add_argument("--step", type=float, help="RK4 step")
    p.add_argument("--quantile", type=float, help="ridge threshold quantile")
    p.add_argument("--no-image", dest="image", action="store_false", default=None)
    p.add_argument("--no-csv", dest="csv", action="store_false", default=None)

    p = sub.add_parser("branching", parents=[common], help="branching ratios from the initial-condition line")
    p.add_argument("--c", type=float, nargs="+")
    p.add_argument("--n-traj", type=int, dest="n_traj")
    p.add_argument("--t-max", type=float, dest="t_max")
    p.add_argument("--step", type=float)
    p.add_argument("--labels", action="store_true", default=None, help="also write per-trajectory fates")

    p = sub.add_parser("sweep", parents=[common], help="evaluate quantities over a grid of c")
    p.add_argument("--c", type=float, nargs="+", help="explicit c values (default 0..c-max by c-step)")
    p.add_argument("--c-step", type=float, dest="c_step")
    p.add_argument("--c-max", type=float, dest="c_max")
    p.add_argument("--quantities", nargs="+", choices=QUANTITIES)
    p.add_argument("--n-traj", type=int, dest="n_traj")
    p.add_argument("--t-max", type=float, dest="t_max")
    p.add_argument("--step", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--grid", type=_grid)
    p.add_argument("--quantile", type=float)
    p.add_argument("--flatness-grid", type=int, dest="flatness_grid")
    p.add_argument("--cache-dir", dest="cache_dir", help="reuse LD fields saved here")
    p.add_argument("--no-critical-c", dest="critical_c", action="store_false", default=None)

    p = sub.add_parser("fit", parents=[common], help="fit the polynomial laws to a sweep table")
    p.add_argument("--table", type=Path, help="CSV written by the sweep command")
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[args.command])
    if args.config is not None:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise ValidationError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update(from_file)
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    for key in ("out", "table", "cache_dir"):
        if cfg.get(key) is not None:
            cfg[key] = str(cfg[key])
    if isinstance(cfg.get("c"), (int, float)):
        cfg["c"] = [cfg["c"]]
    if isinstance(cfg.get("grid"), int):
        cfg["grid"] = [cfg["grid"], cfg["grid"]]
    cfg["command"] = args.command
    validate(cfg)
    return cfg


def _need(cond: bool, msg: str):
    if not cond:
        raise ValidationError(msg)


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: dict) -> None:
    """Check every numeric field before any computation starts."""
    _need(_finite(cfg["H0"]), "H0 must be a finite number")
    _need(_finite(cfg["m_x"]) and cfg["m_x"] > 0, "m_x must be positive")
    _need(_finite(cfg["m_y"]) and cfg["m_y"] > 0, "m_y must be positive")
    _need(isinstance(cfg["threads"], int) and cfg["threads"] >= 1, "threads must be an integer >= 1")
    if cfg.get("c") is not None:
        _need(len(cfg["c"]) > 0 and all(_finite(c) for c in cfg["c"]), "c values must be finite numbers")
    if "tau" in cfg:
        _need(_finite(cfg["tau"]) and cfg["tau"] > 0, "tau must be positive")
    if "step" in cfg:
        _need(_finite(cfg["step"]) and 0 < cfg["step"] <= 0.1, "step must lie in (0, 0.1]")
    if "grid" in cfg:
        g = cfg["grid"]
        _need(len(g) == 2 and all(isinstance(n, int) and n >= 2 for n in g), "grid needs two counts >= 2")
    if "quantile" in cfg:
        _need(_finite(cfg["quantile"]) and 0 < cfg["quantile"] < 1, "quantile must lie in (0, 1)")
    if "p_exponent" in cfg:
        _need(_finite(cfg["p_exponent"]) and 0 < cfg["p_exponent"] <= 1, "p_exponent must lie in (0, 1]")
    if "n_traj" in cfg:
        _need(isinstance(cfg["n_traj"], int) and cfg["n_traj"] >= 2, "n-traj must be an integer >= 2")
    if "t_max" in cfg:
        _need(_finite(cfg["t_max"]) and cfg["t_max"] > 0, "t-max must be positive")
    if cfg["command"] == "sweep":
        if cfg["c"] is None:
            _need(_finite(cfg["c_step"]) and cfg["c_step"] > 0, "c-step must be positive")
            _need(_finite(cfg["c_max"]) and cfg["c_max"] >= 0, "c-max must be >= 0")
        for c in cfg["c"] or []:
            _need(0 <= c <= 0.5, f"sweep c values must lie in [0, 0.5], got {c}")
        bad = set(cfg["quantities"]) - set(QUANTITIES)
        _need(not bad, f"unknown quantities {sorted(bad)}")
        _need(isinstance(cfg["flatness_grid"], int) and cfg["flatness_grid"] >= 2, "flatness-grid must be >= 2")
    if cfg["command"] == "fit":
        _need(cfg["table"] is not None, "fit needs --table")
        _need(Path(cfg["table"]).is_file(), f"no such table: {cfg['table']}")
    if "y_range" in cfg:
        _need(cfg["y_range"][0] < cfg["y_range"][1], "y_range must be increasing")
        _need(cfg["p_y_range"][0] < cfg["p_y_range"][1], "p_y_range must be increasing")


def _params(cfg: dict, c: float = 0.0) -> SystemParams:
    return SystemParams(c=float(c), m_x=cfg["m_x"], m_y=cfg["m_y"], H0=cfg["H0"])


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    meta = {"version": __version__, "config": cfg}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def _tag(c: float) -> str:
    return f"c{c:.4f}".rstrip("0").rstrip(".")


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


# ---------------------------------------------------------------- commands


def cmd_critical_points(cfg: dict) -> int:
    out = _outdir(cfg)
    rows = []
    for c in cfg["c"]:
        for cp in find_critical_points(_params(cfg, c)):
            rows.append(
                {
                    "c": c,
                    "kind": cp.kind,
                    "x": cp.position[0],
                    "y": cp.position[1],
                    "energy": cp.energy,
                    "stability": cp.stability,
                }
            )
    header = ["c", "kind", "x", "y", "energy", "stability"]
    with open(out / "critical_points.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    (out / "critical_points.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    if cfg["json"]:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'c':>6}  {'kind':<22} {'x':>9} {'y':>9} {'energy':>9}  stability")
        for r in rows:
            print(f"{r['c']:6.3f}  {r['kind']:<22} {r['x']:9.4f} {r['y']:9.4f} {r['energy']:9.4f}  {r['stability']}")
    return EXIT_OK


def _plot_field(ld, curves, lobes, path: Path):
    plt = _plt()
    s = ld.section
    fig, ax = plt.subplots(figsize=(7, 5))
    vals = np.where(ld.mask, ld.values_total, np.nan)
    im = ax.imshow(
        vals, origin="lower", aspect="auto", cmap="viridis",
        extent=(s.y_range[0], s.y_range[1], s.p_y_range[0], s.p_y_range[1]),
    )
    fig.colorbar(im, ax=ax, label=f"LD (p={ld.p_exponent:g}, tau={ld.tau:g})")
    for cv in curves:
        ax.plot(cv.points[:, 0], cv.points[:, 1], color="blue" if cv.kind == "stable" else "red", lw=0.6)
    for lb in lobes:
        if lb.present:
            ring = np.vstack([lb.boundary, lb.boundary[:1]])
            ax.plot(ring[:, 0], ring[:, 1], "w--", lw=0.8)
    ax.set_xlabel("y")
    ax.set_ylabel("p_y")
    ax.set_title(f"c = {ld.params.c:g}, x = {s.x_section:g}, H0 = {ld.params.H0:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_ld_field(cfg: dict) -> int:
    out = _outdir(cfg)
    for c in cfg["c"]:
        params = _params(cfg, c)
        section = SectionSpec(
            x_section=cfg["x_section"], H0=cfg["H0"], y_range=tuple(cfg["y_range"]),
            p_y_range=tuple(cfg["p_y_range"]), n_y=cfg["grid"][0], n_p=cfg["grid"][1],
        )
        ld = compute_field(
            section, params, tau=cfg["tau"], p_exponent=cfg["p_exponent"],
            step=cfg["step"], threads=cfg["threads"],
        )
        stem = out / f"ld_{_tag(c)}"
        save_field(ld, stem)
        if cfg["csv"]:
            write_field_csv(ld, stem.with_name(stem.name + ".csv"))
        curves = extract_manifolds(ld, cfg["quantile"])
        top, bottom = identify_lobes(
            [cv for cv in curves if cv.kind == "stable"],
            [cv for cv in curves if cv.kind == "unstable"],
            ld,
        )
        write_curves_csv(curves, out / f"curves_{_tag(c)}.csv")
        write_lobes_csv([top, bottom], out / f"lobes_{_tag(c)}.csv")
        summary = lobe_summary(curves, top, bottom, ld, cfg["quantile"])
        write_summary(summary, out / f"lobes_{_tag(c)}.json")
        if cfg["image"]:
            _plot_field(ld, curves, [top, bottom], out / f"ld_{_tag(c)}.png")
        print(
            f"c={c:g}: {int(ld.mask.sum())} nodes, {len(curves)} curves, "
            f"lobe areas top={top.area:.4f} bottom={bottom.area:.4f}"
        )
    return EXIT_OK


BRANCHING_HEADER = ("c", "n_total", "n_top", "n_bottom", "n_unresolved", "ratio_top", "ratio_bottom")


def cmd_branching(cfg: dict) -> int:
    out = _outdir(cfg)
    results = []
    for c in cfg["c"]:
        r = branching_run(
            _params(cfg, c), cfg["n_traj"], t_max=cfg["t_max"], h=cfg["step"], threads=cfg["threads"]
        )
        results.append(r)
        print(
            f"c={c:g}: top {r.n_top}, bottom {r.n_bottom}, unresolved {r.n_unresolved}; "
            f"ratio_top={r.ratio_top:.4f} ratio_bottom={r.ratio_bottom:.4f}"
        )
        if cfg["labels"]:
            with open(out / f"fates_{_tag(c)}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(("index", "y0", "fate"))
                for i, (y, lab) in enumerate(zip(r.ys, r.labels)):
                    w.writerow((i, repr(float(y)), lab))
    with open(out / "branching.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BRANCHING_HEADER)
        for r in results:
            w.writerow((repr(float(r.c)), r.n_total, r.n_top, r.n_bottom, r.n_unresolved,
                        repr(r.ratio_top), repr(r.ratio_bottom)))
    if len(results) > 1:
        plt = _plt()
        fig, ax = plt.subplots(figsize=(6, 4))
        cs = [r.c for r in results]
        ax.plot(cs, [r.ratio_bottom for r in results], "o", label="bottom well")
        ax.plot(cs, [r.ratio_top for r in results], "s", label="top well")
        ax.set_xlabel("c")
        ax.set_ylabel("branching ratio")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "branching.png", dpi=120)
        plt.close(fig)
    return EXIT_OK


def _plot_laws(table: SweepTable, report: dict, out: Path):
    """One figure per quantity: samples with the fitted law dashed."""
    plt = _plt()
    columns = {q: table.column(q) for q in table.quantities}
    for name, (cs, vs) in columns.items():
        if len(cs) == 0:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.6))
        ax.plot(cs, vs, "o", ms=4)
        entry = report.get(name, {})
        if "coefficients" in entry:
            lo, hi = entry["domain"]
            grid = np.linspace(lo, hi, 200)
            ax.plot(grid, np.polyval(entry["coefficients"], grid), "--", color="k", lw=1)
        ax.set_xlabel("c")
        ax.set_ylabel(name)
        fig.tight_layout()
        fig.savefig(out / f"{name}.png", dpi=120)
        plt.close(fig)
    if "lobe-area-difference" in report and "coefficients" in report["lobe-area-difference"]:
        e = report["lobe-area-difference"]
        ct, vt = columns["lobe-area-top"]
        cb, vb = columns["lobe-area-bottom"]
        common = np.intersect1d(ct, cb)
        diff = [vb[list(cb).index(c)] - vt[list(ct).index(c)] for c in common]
        fig, ax = plt.subplots(figsize=(5, 3.6))
        ax.plot(common, diff, "o", ms=4)
        grid = np.linspace(*e["domain"], 200)
        ax.plot(grid, np.polyval(e["coefficients"], grid), "--", color="k", lw=1)
        ax.set_xlabel("c")
        ax.set_ylabel("lobe-area-difference")
        fig.tight_layout()
        fig.savefig(out / "lobe-area-difference.png", dpi=120)
        plt.close(fig)


def _write_report(report: dict, out: Path):
    (out / "fit.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{'quantity':<22} {'fitted (highest degree first)':<48} reference")
    for name, e in report.items():
        if name.startswith("_"):
            continue
        if "skipped" in e:
            print(f"{name:<22} skipped: {e['skipped']}")
            continue
        fitted = ", ".join(f"{v:.4g}" for v in e["coefficients"])
        ref = ", ".join(f"{v:.4g}" for v in e.get("reference_coefficients", []))
        print(f"{name:<22} {fitted:<48} {ref}")


def cmd_sweep(cfg: dict) -> int:
    out = _outdir(cfg)
    cs = cfg["c"] if cfg["c"] is not None else default_c_grid(cfg["c_step"], cfg["c_max"])
    section = SectionSpec(H0=cfg["H0"], n_y=cfg["grid"][0], n_p=cfg["grid"][1])
    table = sweep(
        _params(cfg),
        cs,
        cfg["quantities"],
        n_traj=cfg["n_traj"],
        t_max=cfg["t_max"],
        h=cfg["step"],
        section=section,
        tau=cfg["tau"],
        quantile=cfg["quantile"],
        flatness_n=cfg["flatness_grid"],
        threads=cfg["threads"],
        cache_dir=cfg["cache_dir"],
    )
    table.write_csv(out / "sweep.csv")
    if table.failures:
        (out / "failures.json").write_text(
            json.dumps({repr(k): v for k, v in table.failures.items()}, indent=2, sort_keys=True) + "\n"
        )
        for c, f in table.failures.items():
            print(f"c={c:g}: {f}", file=sys.stderr)
    report = fit_reference_laws(table)
    if cfg["critical_c"] and "ratio-top" in cfg["quantities"]:
        c_rt, rt = table.column("ratio-top")
        report["_critical_c"] = estimate_critical_c(
            _params(cfg), c_rt, rt, n=cfg["n_traj"], t_max=cfg["t_max"], h=cfg["step"], threads=cfg["threads"],
        )
        crit = report["_critical_c"]
        print(f"critical c: {crit['critical_c']} (reference {crit['reference']})")
    _write_report(report, out)
    _plot_laws(table, report, out)
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    try:
        table = SweepTable.read_csv(cfg["table"])
    except (OSError, ValueError, IndexError) as exc:
        raise ValidationError(f"cannot read sweep table: {exc}") from None
    fitted = [q for q in table.quantities if q in LAW_DEGREE]
    _need(bool(fitted), "table has no fittable quantity columns")
    for q in fitted:
        cs, _ = table.column(q)
        if q.startswith("ratio"):
            cs = cs[cs <= QUARTIC_C_MAX + 1e-12]
        need = LAW_DEGREE[q] + 1
        _need(len(np.unique(cs)) >= need, f"{q}: {len(np.unique(cs))} distinct c values, degree {LAW_DEGREE[q]} law needs {need}")
    out = _outdir(cfg)
    report = fit_reference_laws(table)
    _write_report(report, out)
    _plot_laws(table, report, out)
    return EXIT_OK


COMMANDS = {
    "critical-points": cmd_critical_points,
    "ld-field": cmd_ld_field,
    "branching": cmd_branching,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help and --version exit 0, malformed command lines exit 1
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, NumericalError, RankDeficiencyError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
