"""
Command-line front end.

    gated-spd simulate  --config run.yaml --seed 1 --out out/
    gated-spd sweep     --recipe fig3 | --axis temperature:200:270:8
    gated-spd fit       --input decay.csv --k 2
    gated-spd waveform  --config run.yaml
    gated-spd calibrate --config run.yaml

Exit codes: 0 success, 1 configuration or usage error, 2 runtime or
convergence failure. The output directory is --out, else $GATED_SPD_OUT,
else ``output_dir`` from the config.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import figures
from .calibration import CalibrationError, DecayDataset, FitError, calibrate, fit_decay, write_fit_report
from .config import DEFAULT_TARGETS, ConfigError, RunConfig, dump_detector, load_config
from .harness import SWEEP_AXES, COLUMNS, measure_point, sweep
from .io import OUT_ENV, atomic_write, write_rows
from .signal_chain import run_chain, write_waveform_csv

log = logging.getLogger("gated_spd")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def parse_axis(spec: str) -> tuple[str, list]:
    """``axis:start:stop:steps[:log]`` or ``axis:v1,v2,...``."""
    parts = spec.split(":")
    axis = parts[0]
    if axis not in SWEEP_AXES:
        raise UsageError(f"--axis {spec}: unknown axis {axis!r} (choose from {', '.join(SWEEP_AXES)})")
    if len(parts) == 2:
        try:
            return axis, [_number(x) for x in parts[1].split(",") if x]
        except ValueError:
            raise UsageError(f"--axis {spec}: bad value list") from None
    if len(parts) not in (4, 5) or (len(parts) == 5 and parts[4] not in ("log", "lin")):
        raise UsageError(f"--axis {spec}: expected axis:start:stop:steps[:log|lin]")
    try:
        start, stop, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise UsageError(f"--axis {spec}: bad number") from None
    if steps < 1:
        raise UsageError(f"--axis {spec}: steps must be >= 1")
    if len(parts) == 5 and parts[4] == "log":
        if start <= 0 or stop <= 0:
            raise UsageError(f"--axis {spec}: log spacing needs positive bounds")
        values = np.geomspace(start, stop, steps)
    else:
        values = np.linspace(start, stop, steps)
    values = [float(v) for v in values]
    if axis in ("n_blank", "light_on"):
        values = [int(round(v)) for v in values]
    return axis, values


def _number(x: str):
    try:
        return int(x)
    except ValueError:
        return float(x)


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or cfg.output_dir)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    protocol = cfg.protocol if args.gates is None else cfg.protocol.replace(n_gates=args.gates)
    res = measure_point(protocol, cfg.detector, np.random.SeedSequence(cfg.seed))
    runs = [("dark", res.dark), ("light", res.light), ("light_12us", res.light_12us)]
    rows = []
    for name, c in runs:
        if c is None:
            continue
        rows.append({
            "run": name, "l_counts": c.l_counts, "d_counts": c.d_counts,
            "l_gates": c.l_gates, "d_gates": c.d_gates,
            "l_blanked": c.l_blanked, "d_blanked": c.d_blanked, "duration_s": c.duration,
            "l_photon": c.l_causes[0], "l_dark": c.l_causes[1], "l_afterpulse": c.l_causes[2],
            "d_photon": c.d_causes[0], "d_dark": c.d_causes[1], "d_afterpulse": c.d_causes[2],
        })
    write_rows(out / "counters.csv", rows)
    e = res.estimates
    est = [
        {"quantity": "de", "value": e.de, "stderr": e.de_err},
        {"quantity": "p_d", "value": e.p_d, "stderr": e.p_d_err},
        {"quantity": "p_ap", "value": e.p_ap, "stderr": e.p_ap_err},
        {"quantity": "p_apl", "value": e.p_apl, "stderr": e.p_apl_err},
        {"quantity": "p_aps", "value": e.p_aps, "stderr": e.p_aps_err},
        {"quantity": "firing_rate_Hz", "value": e.firing_rate, "stderr": e.firing_rate_err},
    ]
    write_rows(out / "estimates.csv", est)
    print(f"wrote {out / 'counters.csv'} and {out / 'estimates.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    recipes = list(args.recipe or [])
    axes = [parse_axis(a) for a in (args.axis or [])]
    if not recipes and not axes:
        if "recipe" in cfg.sweep:
            r = cfg.sweep["recipe"]
            recipes = [r] if isinstance(r, str) else list(r)
        for name, spec in (cfg.sweep.get("axes") or {}).items():
            axes.append(parse_axis(f"{name}:{spec}") if isinstance(spec, str) else (name, list(spec)))
    if "all" in recipes:
        recipes = list(figures.RECIPES)
    if not recipes and not axes:
        raise UsageError("empty grid: give --recipe or at least one --axis")
    for r in recipes:
        if r not in figures.RECIPES:
            raise UsageError(f"unknown recipe {r!r} (choose from {', '.join(figures.RECIPES)}, all)")

    n_gates = args.gates if args.gates is not None else cfg.sweep.get("n_gates")
    for r in recipes:
        fname, fn = figures.RECIPES[r]
        kwargs = {"seed": cfg.seed}
        if n_gates is not None:
            kwargs["n_gates"] = int(n_gates)
        if r not in ("fig4",):
            kwargs["jobs"] = args.jobs
        rows = fn(cfg.detector, **kwargs)
        write_rows(out / fname, rows)
        print(f"wrote {out / fname} ({len(rows)} rows)")
    if axes:
        grid = dict(axes)
        base = cfg.protocol if n_gates is None else cfg.protocol.replace(n_gates=int(n_gates))
        rows = sweep(grid, base, cfg.detector, cfg.seed, jobs=args.jobs,
                     firing=cfg.sweep.get("firing", "total"),
                     auto=bool(cfg.sweep.get("auto_gates", False)))
        write_rows(out / "sweep.csv", rows, COLUMNS)
        print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
        if any(r["error"] for r in rows):
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    src = args.input or cfg.fit.get("input")
    k = args.k if args.k is not None else int(cfg.fit.get("k", 2))
    if not src:
        raise UsageError("fit needs --input (or fit.input in the config)")
    try:
        data = DecayDataset.from_csv(src)
    except FileNotFoundError:
        raise ConfigError(f"fit input {src} does not exist") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"fit input {src}: {exc}") from None
    try:
        fit = fit_decay(data, k)
    except FitError as exc:
        if exc.best is not None:
            write_fit_report(exc.best, out / "fit_report.csv", out / "fit_report.txt")
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    write_fit_report(fit, out / "fit_report.csv", out / "fit_report.txt")
    print((out / "fit_report.txt").read_text(), end="")
    return EXIT_OK


def cmd_waveform(args) -> int:
    cfg = _load(args)
    if cfg.chain is None:
        raise ConfigError("chain: waveform needs a [chain] section in the config")
    out = _out_dir(args, cfg)
    avalanche = cfg.avalanche
    if args.charge is not None:
        from .signal_chain import AvalanchePulse

        avalanche = None if args.charge == 0 else AvalanchePulse(
            charge=args.charge, **({} if cfg.avalanche is None else
                                   {"decay": cfg.avalanche.decay, "onset": cfg.avalanche.onset}))
    tr = run_chain(cfg.chain, avalanche, width=cfg.protocol.gate_width)
    for name, w in (("monitor", tr.monitor), ("analog", tr.analog), ("digital", tr.digital)):
        write_waveform_csv(w, out / f"waveform_{name}.csv")
    print(f"wrote waveform_{{monitor,analog,digital}}.csv to {out} (fired: {tr.fired})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    targets = cfg.calibrate.get("targets") or list(DEFAULT_TARGETS)
    free = cfg.calibrate.get("free") or ["p_dark_ref", "dark_halving"]
    tol = float(cfg.calibrate.get("tol", 1e-2))
    try:
        res = calibrate(targets, cfg.detector, free=free, tol=tol)
        status = EXIT_OK
    except CalibrationError as exc:
        res = exc.best
        print(str(exc), file=sys.stderr)
        status = EXIT_RUNTIME
    except ValueError as exc:
        raise ConfigError(f"calibrate: {exc}") from None
    write_rows(out / "calibration.csv", res.table)
    atomic_write(out / "calibrated_detector.yaml", dump_detector(res.params))
    print(f"wrote {out / 'calibration.csv'} and {out / 'calibrated_detector.yaml'}")
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gated-spd", description="Gated APD single-photon detector simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="L/D protocol run at one operating point")
    s.add_argument("--gates", type=int, help="override protocol.n_gates")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("sweep", parents=[common], help="parameter sweeps and figure recipes")
    s.add_argument("--recipe", action="append", help="fig2..fig6 or all (repeatable)")
    s.add_argument("--axis", action="append", help="axis:start:stop:steps[:log] (repeatable)")
    s.add_argument("--gates", type=int, help="triggers per run")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("fit", parents=[common], help="multi-exponential fit of a decay CSV")
    s.add_argument("--input", metavar="CSV", help="columns t_seconds, p_ap[, sigma]")
    s.add_argument("--k", type=int, help="number of exponential species (1-3)")
    s.set_defaults(func=cmd_fit)
    s = sub.add_parser("waveform", parents=[common], help="monitor / analog / digital traces")
    s.add_argument("--charge", type=float, help="avalanche charge in electrons (0 = none)")
    s.set_defaults(func=cmd_waveform)
    s = sub.add_parser("calibrate", parents=[common], help="fit parameters to anchored values")
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"gated-spd {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, RuntimeError, FloatingPointError) as exc:
        print(f"gated-spd {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
