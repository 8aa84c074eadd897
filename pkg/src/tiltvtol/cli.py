"""Command-line driver: ``tiltvtol run | compare | sweep | list``."""
from __future__ import annotations

import argparse
import copy
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .scenarios import ConfigError, builtin_scenarios, load_config
from .sim import Metrics, SimLog, run, write_metrics

log = logging.getLogger("tiltvtol")

COMPARE_ROWS = ("rmse_vx", "rmse_vz", "max_pitch", "settle_time")


def _resolve(path: str) -> Path:
    """A config path, or the name of a shipped scenario."""
    p = Path(path)
    if p.exists() or p.suffix:
        return p
    return builtin_scenarios().get(path, p)


def _load(path: str, args):
    sc, sim = load_config(_resolve(path))
    over = {}
    if getattr(args, "controller", None):
        over["controller"] = args.controller
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if over:
        sim = replace(sim, **over)
    return sc, sim


def _progress(verbose: bool):
    if not verbose:
        return None
    return lambda t: log.info("t = %.0f s", t)


def _summary(sc, lg: SimLog, m: Metrics) -> dict:
    target = float(np.max(np.abs(lg.v_sp[:, 0]))) if len(lg) else 0.0
    return {
        "rmse_vx": float(m.rmse_v[0]),
        "rmse_vz": float(m.rmse_v[2]),
        "max_pitch": math.degrees(m.max_abs_pitch),
        "settle_time": m.settle_time_to(target, 0.5),
    }


def _extra(lg: SimLog) -> dict:
    out = {"controller": lg.meta.get("controller", ""), "samples": len(lg),
           "wall_time": float(lg.meta.get("wall_time", float("nan")))}
    out["fault"] = lg.fault or "none"
    return out


def _report_fault(lg: SimLog) -> int:
    if lg.fault:
        print(f"error: run aborted at t = {lg.fault_time:.3f} s: {lg.fault}", file=sys.stderr)
        return 3
    return 0


def cmd_run(args) -> int:
    sc, sim = _load(args.config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lg, m = run(sc, sim, progress=_progress(args.verbose))
    lg.write_csv(out / "log.csv")
    extra = _extra(lg)
    extra.update({k: v for k, v in _summary(sc, lg, m).items() if k == "settle_time"})
    if lg.failure_time is not None:
        extra["recovery_time"] = m.recovery_time_after_failure(1.0)
    write_metrics(m, out / "metrics.txt", extra)
    if args.plot and len(lg):
        from .plots import emit_plots
        emit_plots(lg, out)
    for t, msg in lg.events:
        print(f"t = {t:.3f} s: {msg}")
    print(f"wrote {out / 'log.csv'} and {out / 'metrics.txt'}")
    return _report_fault(lg)


def _table(rows: dict[str, dict]) -> str:
    cols = list(rows)
    lines = [f"{'metric':<14}" + "".join(f"{c:>12}" for c in cols)]
    for r in COMPARE_ROWS:
        cells = []
        for c in cols:
            v = rows[c][r]
            cells.append(f"{'na':>12}" if v is None else f"{v:>12.3f}")
        lines.append(f"{r:<14}" + "".join(cells))
    return "\n".join(lines)


def cmd_compare(args) -> int:
    sc, sim = _load(args.config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logs, rows, status = [], {}, 0
    for ctrl in ("mpc", "pid"):
        lg, m = run(sc, replace(sim, controller=ctrl), progress=_progress(args.verbose))
        lg.write_csv(out / f"log_{ctrl}.csv")
        write_metrics(m, out / f"metrics_{ctrl}.txt", _extra(lg))
        logs.append(lg)
        rows[ctrl] = _summary(sc, lg, m)
        status = status or _report_fault(lg)
    table = _table(rows)
    (out / "compare.txt").write_text(table + "\n")
    print(table)
    if args.plot:
        from .plots import emit_plots
        emit_plots(logs, out, labels=["mpc", "pid"])
    return status


def _set_path(sc, path: str, value: float):
    """Return a copy of ``sc`` with a dotted attribute path replaced."""
    head, _, rest = path.partition(".")
    if not hasattr(sc, head):
        raise ConfigError(f"unknown parameter path {path!r}")
    if not rest:
        cur = getattr(sc, head)
        if isinstance(cur, np.ndarray):
            value = np.full_like(cur, value)
        elif isinstance(cur, int) and not isinstance(cur, bool):
            value = int(value)
        return replace(sc, **{head: value})
    return replace(sc, **{head: _set_path(getattr(sc, head), rest, value)})


def cmd_sweep(args) -> int:
    sc, sim = _load(args.config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be a comma-separated list of numbers, got {args.values!r}") from None
    lines = [f"{args.param:<24}{'rmse_vx':>10}{'rmse_vz':>10}{'max_pitch':>11}{'fault':>8}"]
    status = 0
    for v in values:
        sv = copy.copy(sc)
        sim_v = sim
        if args.param.startswith("sim."):
            sim_v = _set_path(sim, args.param[4:], v)
        else:
            try:
                sv = _set_path(sc, args.param, v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"cannot set {args.param} = {v}: {exc}") from None
        lg, m = run(sv, sim_v, progress=_progress(args.verbose))
        d = out / f"{args.param}={v:g}"
        d.mkdir(exist_ok=True)
        lg.write_csv(d / "log.csv")
        write_metrics(m, d / "metrics.txt", _extra(lg))
        lines.append(f"{v:<24g}{m.rmse_v[0]:>10.3f}{m.rmse_v[2]:>10.3f}{math.degrees(m.max_abs_pitch):>11.2f}"
                     f"{'yes' if lg.fault else 'no':>8}")
        status = status or _report_fault(lg)
    text = "\n".join(lines)
    (out / "sweep.txt").write_text(text + "\n")
    print(text)
    return status


def cmd_list(args) -> int:
    for name, path in builtin_scenarios().items():
        print(f"{name:<16}{path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tiltvtol", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("config", help="scenario TOML file, or the name of a shipped scenario")
        p.add_argument("--out", default=out_default, help="output directory (default: %(default)s)")
        p.add_argument("--controller", choices=("mpc", "pid"), help="override the controller in the config")
        p.add_argument("--seed", type=int, help="seed recorded with the run (the simulator is deterministic)")
        p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True, help="write SVG figures")
        p.add_argument("--verbose", "-v", action="store_true", help="log progress")

    common(sub.add_parser("run", help="simulate one scenario"), "out")
    common(sub.add_parser("compare", help="run MPC and baseline on one scenario"), "out_compare")
    sw = sub.add_parser("sweep", help="batch runs over one parameter")
    common(sw, "out_sweep")
    sw.add_argument("--param", required=True,
                    help="dotted ScenarioConfig path, e.g. radius or weights.Q_ref; prefix sim. for SimConfig")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sub.add_parser("list", help="list shipped scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "list": cmd_list}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
