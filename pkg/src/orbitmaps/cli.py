"""Command-line driver: ``orbitmaps {family,fit,map,experiment,control}``.

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then command-line flags; later sources win.  The output
root defaults to ``$ORBITMAPS_OUT`` or ``./orbitmaps_out``.  Every command
writes the resolved settings to ``config_<command>.json`` in the output
directory so the run can be repeated from that file alone.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import control as ctl
from . import dynamics as dyn
from . import experiments as exp
from . import famap, families, prm

log = logging.getLogger("orbitmaps")

OUT_ENV = "ORBITMAPS_OUT"
CONFIG_VERSION = 1


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    mu: float = dyn.MU_EARTH_MOON
    family_id: str | None = None
    ds: float | None = None
    count: int | None = None
    amplitude: float = 0.01
    ns: int | None = None
    regions: int = 8
    degree: int = 30
    order: int = 5
    mode: str = "normalized"
    region: int | None = None
    op_point: float | None = None
    member: int | None = None
    window: int = 21
    local_degree: int = 6
    samples: int = 100
    hold_revs: int = 5
    kp: float = ctl.ControllerConfig.kp
    kd: float = ctl.ControllerConfig.kd
    eta_t: float = ctl.ControllerConfig.eta_t
    revs: float = ctl.ControllerConfig.revs
    disturbance: float = ctl.ControllerConfig.disturbance
    seed: int = 0
    out: str | None = None
    plots: bool = True
    auto_build: bool = False

    def controller(self) -> ctl.ControllerConfig:
        return ctl.ControllerConfig(kp=self.kp, kd=self.kd, eta_t=self.eta_t, revs=self.revs,
                                    seed=self.seed, disturbance=self.disturbance)


_FIELDS = {f.name for f in fields(RunConfig)}


def _kind(cfg: RunConfig) -> str:
    return families.family_kind(cfg.family_id)[1]


def resolve(cfg: RunConfig, command: str, training: bool = False) -> RunConfig:
    """Fill command-dependent defaults (family, step, count, steps per period)."""
    if cfg.family_id is None:
        cfg.family_id = "L2-Lyap" if command == "control" else "L1-Lyap"
    if cfg.family_id not in families.FAMILIES:
        raise UsageError(f"unknown family id {cfg.family_id!r}; choose from "
                         f"{', '.join(sorted(families.FAMILIES))}")
    halo = _kind(cfg) == "halo"
    if cfg.ns is None:
        cfg.ns = families.HALO_NS if halo else dyn.DEFAULT_NS
    if cfg.ds is None:
        cfg.ds = 1e-2 if halo else (5e-4 if training else 1e-3)
    if cfg.count is None:
        cfg.count = 1000 if training and not halo else 200
    if cfg.out is None:
        cfg.out = os.environ.get(OUT_ENV) or "orbitmaps_out"
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    def need(cond, msg):
        if not cond:
            raise UsageError(msg)

    need(0.0 < cfg.mu < 0.5, f"mu must lie in (0, 0.5), got {cfg.mu}")
    need(cfg.ds is None or (math.isfinite(cfg.ds) and cfg.ds > 0), f"ds must be positive, got {cfg.ds}")
    need(cfg.count is None or cfg.count >= 2, f"count must be >= 2, got {cfg.count}")
    need(cfg.amplitude > 0, "amplitude must be positive")
    need(cfg.ns is None or (cfg.ns >= 2 and cfg.ns % 2 == 0), f"ns must be even and >= 2, got {cfg.ns}")
    need(cfg.regions >= 1, "regions must be >= 1")
    need(cfg.degree >= 0, "degree must be >= 0")
    need(cfg.order >= 1, "order must be >= 1")
    need(cfg.mode in ("normalized", "time", "both"), f"mode must be normalized, time or both")
    need(cfg.window >= cfg.local_degree + 1, "window must exceed the local degree")
    need(cfg.samples >= 1 and cfg.hold_revs >= 1, "samples and hold_revs must be >= 1")
    need(cfg.kp > 0 and cfg.kd > 0, "gains kp, kd must be positive")
    need(0.0 < cfg.eta_t < 1.0, "eta_t must lie in (0, 1)")
    need(cfg.revs > 0, "revs must be positive")
    need(cfg.disturbance >= 0, "disturbance must be non-negative")


# -- artifact paths ----------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def family_path(cfg: RunConfig) -> Path:
    return _out(cfg) / f"family_{cfg.family_id}.json"


def model_path(cfg: RunConfig) -> Path:
    return _out(cfg) / f"prm_{cfg.family_id}.json"


def map_path(cfg: RunConfig, mode: str) -> Path:
    return _out(cfg) / f"map_{cfg.family_id}_{mode}.json"


def capture(cfg: RunConfig, command: str, extra: dict | None = None) -> Path:
    d = {"schema_version": CONFIG_VERSION, "command": command, **asdict(cfg)}
    d.update(extra or {})
    p = _out(cfg) / f"config_{command}.json"
    p.write_text(json.dumps(d, indent=1, sort_keys=True))
    return p


def _need(path: Path, cfg: RunConfig, what: str):
    if not path.exists() and not cfg.auto_build:
        raise UsageError(f"{what} {path} not found; build it first or pass --auto-build")


# -- pipeline steps ----------------------------------------------------------------

def build_family(cfg: RunConfig) -> families.FamilyTable:
    which = cfg.family_id.split("-")[0]
    if _kind(cfg) == "lyapunov":
        table = families.planar_family(which, cfg.mu, amplitude=cfg.amplitude, ds=cfg.ds,
                                       count=cfg.count, ns=cfg.ns)
    else:
        table = families.halo_family(which, cfg.mu, ds=cfg.ds, count=cfg.count, ns=cfg.ns)
    log.info("%s: %d members (%s)", cfg.family_id, len(table), table.stop_reason)
    return table


def get_family(cfg: RunConfig) -> families.FamilyTable:
    path = family_path(cfg)
    if path.exists():
        return families.load_table(path)
    _need(path, cfg, "family table")
    table = build_family(cfg)
    families.save_table(table, path)
    return table


def fit_table(table: families.FamilyTable) -> families.FamilyTable:
    """A table with monotone kappa: Halo tables are cut at folds, longest branch kept."""
    if not families.fold_indices(table):
        return table
    branches = families.monotone_branches(table)
    return max(branches, key=len)


def get_model(cfg: RunConfig) -> prm.GlobalPrm:
    path = model_path(cfg)
    if path.exists():
        return prm.load_model(path)
    _need(path, cfg, "model")
    model = prm.fit_global(fit_table(get_family(cfg)), cfg.regions, cfg.degree)
    prm.save_model(model, path)
    return model


def op_point(cfg: RunConfig, model: prm.GlobalPrm) -> float:
    if cfg.op_point is not None:
        lo, hi = model.domain
        if not lo <= cfg.op_point <= hi:
            raise UsageError(f"op_point {cfg.op_point} outside model domain [{lo}, {hi}]")
        return cfg.op_point
    i = len(model.regions) // 2 if cfg.region is None else cfg.region
    if not 0 <= i < len(model.regions):
        raise UsageError(f"region {i} out of range for {len(model.regions)} regions")
    return model.regions[i].op_point


def get_map(cfg: RunConfig, mode: str) -> famap.Stpm:
    path = map_path(cfg, mode)
    if path.exists():
        return famap.load_stpm(path)
    _need(path, cfg, "map")
    model = get_model(cfg)
    m = famap.build_from_prm(model, op_point(cfg, model), mode, cfg.order, cfg.ns, p=cfg.mu)
    famap.save_stpm(m, path)
    return m


# -- commands ------------------------------------------------------------------------

def cmd_family(cfg: RunConfig) -> int:
    table = build_family(cfg)
    jp, cp = families.save_table(table, family_path(cfg))
    checks = [families.check_member(m, cfg.mu) for m in table.members]
    bad = sum(not c.ok for c in checks)
    folds = families.fold_indices(table)
    print(f"{cfg.family_id}: {len(table)} members, kappa {table.kappas.min():.8f}.."
          f"{table.kappas.max():.8f}, folds at {folds}, {bad} failing validation")
    print(f"stop: {table.stop_reason}")
    print(f"wrote {jp} {cp}")
    if cfg.plots:
        from . import plotting

        plotting.plot_family(table, _out(cfg) / f"family_{cfg.family_id}.png")
        plotting.plot_kappa_profile(table, _out(cfg) / f"family_{cfg.family_id}_kappa.png")
    return 0 if bad == 0 else 1


def cmd_fit(cfg: RunConfig) -> int:
    table = get_family(cfg)
    if cfg.member is not None:
        local = prm.fit_local(table, cfg.member, cfg.window, cfg.local_degree)
        path = _out(cfg) / f"prm_{cfg.family_id}_local_{cfg.member}.json"
        prm.save_model(local, path)
        print(f"local model about kappa={local.op_point:.10f}: residual RMS {local.residual_rms}")
        print(f"wrote {path}")
        return 0
    model = prm.fit_global(fit_table(table), cfg.regions, cfg.degree)
    path = prm.save_model(model, model_path(cfg))
    for i, r in enumerate(model.regions):
        rms = ", ".join(f"{k}={v:.2e}" for k, v in r.residual_rms.items())
        print(f"region {i}: [{r.lower:.8f}, {r.upper:.8f}] n={r.count} cond={r.condition:.2e} {rms}")
    print(f"wrote {path}")
    return 0


def cmd_map(cfg: RunConfig) -> int:
    model = get_model(cfg)
    k = op_point(cfg, model)
    modes = ("normalized", "time") if cfg.mode == "both" else (cfg.mode,)
    for mode in modes:
        m = famap.build_from_prm(model, k, mode, cfg.order, cfg.ns, p=cfg.mu)
        path = famap.save_stpm(m, map_path(cfg, mode))
        print(f"{mode} map about kappa={k:.10f}: {len(m)} instants, order {m.order}, "
              f"trust radius {m.trust_radius:.3e}; wrote {path}")
    return 0


def cmd_experiment(cfg: RunConfig, which: str) -> int:
    out = _out(cfg)
    plots = None
    if cfg.plots:
        from . import plotting as plots
    if which == "hold-orbits":
        res = exp.hold_orbits(get_model(cfg), cfg.samples, cfg.hold_revs, cfg.seed, p=cfg.mu)
        (out / "hold_orbits.csv").write_text(res.to_csv())
        (out / "hold_orbits_samples.csv").write_text(res.samples_csv())
        for r in range(res.revs):
            print(f"rev {r + 1}: rmse {res.rmse[r]:.3e} max {res.max_error[r]:.3e}")
        if plots:
            plots.plot_hold(res, out / "hold_orbits.png")
    elif which == "global-vs-local":
        table = fit_table(get_family(cfg))
        member = len(table) // 2 if cfg.member is None else cfg.member
        res = exp.global_vs_local(table, get_model(cfg), member, cfg.window, cfg.local_degree,
                                  p=cfg.mu)
        (out / "global_vs_local.csv").write_text(res.to_csv())
        for d, g, l in zip(res.dkappas, res.global_error, res.local_error):
            print(f"dkappa/span {d / res.span:+6.2f}: global {g:.3e} local {l:.3e}")
        if plots:
            plots.plot_global_local(res, out / "global_vs_local.png")
    elif which == "fixed-locus":
        mn, mt = get_map(cfg, "normalized"), get_map(cfg, "time")
        etas = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
        res = exp.fixed_locus(mn, mt, etas)
        (out / "fixed_locus.csv").write_text(res.to_csv())
        (out / "fixed_locus_points.csv").write_text(
            famap.loci_to_csv(res.normalized + res.absolute))
        for e, a, b in zip(res.etas, res.eta_spread, res.time_spread):
            print(f"eta {e:.2f}: spread fixed-eta {a:.3e} fixed-t {b:.3e}")
        if plots:
            T = mn.period(0.0)
            tr = dyn.trajectory(mn.evaluate(0.0, 0), T, mn.ns, cfg.mu)
            plots.plot_loci(res, out / "fixed_locus.png", tr)
    else:
        raise UsageError(f"unknown experiment {which!r}")
    return 0


def cmd_control(cfg: RunConfig, mode: str) -> int:
    m = get_map(cfg, "normalized")
    cc = cfg.controller()
    out = _out(cfg)
    start = ctl.scenario_start(m, cc)
    runs = []
    if mode == "proposed":
        runs = [ctl.simulate_pd(m, start, cc, cfg.mu)]
    elif mode == "tracking":
        target = ctl.final_member(m, ctl.simulate_pd(m, start, cc, cfg.mu), cfg.mu)
        runs = [ctl.simulate_tracking(target, start, cc, cfg.mu, ns=m.ns)]
    elif mode == "compare":
        c = ctl.compare(m, start, cc, cfg.mu)
        runs = [c.proposed, c.tracking]
        summary = {"schema_version": ctl.SCHEMA_VERSION, "kind": "control_comparison",
                   "total_dv_proposed": c.proposed.total_dv,
                   "total_dv_tracking": c.tracking.total_dv,
                   "reduction_percent": c.reduction,
                   "target_kappa": c.target.kappa, "target_period": c.target.period}
        (out / "compare_summary.json").write_text(json.dumps(summary, indent=1))
    else:
        raise UsageError(f"unknown control mode {mode!r}")
    for run in runs:
        ctl.save_run(run, out)
        state = "failed: " + run.failure if run.failed else (
            f"converged at rev {run.converged_rev:.3f}" if run.converged else "not converged")
        print(f"{run.method}: total dv {run.total_dv:.6e} over {len(run.impulses)} impulses, {state}")
    if mode == "compare":
        print(f"reduction {c.reduction:.2f}%")
    if cfg.plots:
        from . import plotting

        plotting.plot_control(runs, out / f"control_{mode}.png")
    proposed = [r for r in runs if r.method == "proposed"]
    ok = all(not r.failed for r in runs) and all(r.converged for r in proposed)
    return 0 if ok else 1


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", default=S, help="JSON file of settings (flags override it)")
    g.add_argument("--out", default=S, help=f"output directory (default ${OUT_ENV} or ./orbitmaps_out)")
    g.add_argument("--id", dest="family_id", default=S, help="family: L1-Lyap, L2-Lyap, L1-Halo, L2-Halo")
    g.add_argument("--mu", type=float, default=S)
    g.add_argument("--ds", type=float, default=S, help="pseudo-arclength step")
    g.add_argument("--count", type=int, default=S, help="members to sweep")
    g.add_argument("--amplitude", type=float, default=S, help="linear seed amplitude (Lyapunov)")
    g.add_argument("--ns", type=int, default=S, help="RK4 steps per period")
    g.add_argument("--regions", type=int, default=S)
    g.add_argument("--degree", type=int, default=S)
    g.add_argument("--order", type=int, default=S, help="series truncation order N")
    g.add_argument("--region", type=int, default=S, help="op point = mean kappa of this region")
    g.add_argument("--op-point", dest="op_point", type=float, default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--no-plots", dest="plots", action="store_false", default=S)
    g.add_argument("--auto-build", dest="auto_build", action="store_true", default=S,
                   help="build missing family/model/map artifacts")
    g.add_argument("-v", "--verbose", action="store_true", default=S)

    ap = argparse.ArgumentParser(prog="orbitmaps", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("family", parents=[common], help="sweep and validate a family")
    p = sub.add_parser("fit", parents=[common], help="fit the global (or a local) PRM")
    p.add_argument("--member", type=int, default=S, help="fit a local model about this member")
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--local-degree", dest="local_degree", type=int, default=S)
    p = sub.add_parser("map", parents=[common], help="build a propagation map")
    p.add_argument("--mode", choices=["normalized", "time", "both"], default=S)
    p = sub.add_parser("experiment", parents=[common], help="accuracy experiments")
    p.add_argument("which", choices=["hold-orbits", "global-vs-local", "fixed-locus"])
    p.add_argument("--samples", type=int, default=S)
    p.add_argument("--hold-revs", dest="hold_revs", type=int, default=S)
    p.add_argument("--member", type=int, default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--local-degree", dest="local_degree", type=int, default=S)
    p = sub.add_parser("control", parents=[common], help="station-keeping simulations")
    p.add_argument("which", choices=["proposed", "tracking", "compare"])
    p.add_argument("--kp", type=float, default=S)
    p.add_argument("--kd", type=float, default=S)
    p.add_argument("--eta-t", dest="eta_t", type=float, default=S)
    p.add_argument("--revs", type=float, default=S)
    p.add_argument("--disturbance", type=float, default=S)
    return ap


def load_config(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError("config file must hold a JSON object")
    v = d.pop("schema_version", CONFIG_VERSION)
    if v != CONFIG_VERSION:
        raise UsageError(f"unsupported config schema_version {v!r}")
    d.pop("command", None)
    unknown = set(d) - _FIELDS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return d


def make_config(ns: argparse.Namespace) -> RunConfig:
    flags = vars(ns).copy()
    settings = {}
    if "config" in flags:
        settings.update(load_config(flags.pop("config")))
    for k in ("command", "which", "verbose"):
        flags.pop(k, None)
    settings.update(flags)
    try:
        return RunConfig(**settings)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


NUMERICAL_ERRORS = (families.CorrectionError, families.ContinuationError,
                    families.BifurcationError, prm.PrmFitError, famap.StpmBuildError,
                    dyn.CollisionError, ArithmeticError, RuntimeError, np.linalg.LinAlgError)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command, which = ns.command, getattr(ns, "which", None)
    cfg = None
    try:
        cfg = make_config(ns)
        training = command != "family"
        cfg = resolve(cfg, command, training=training)
        capture(cfg, command if which is None else f"{command}_{which}")
        if command == "family":
            return cmd_family(cfg)
        if command == "fit":
            return cmd_fit(cfg)
        if command == "map":
            return cmd_map(cfg)
        if command == "experiment":
            return cmd_experiment(cfg, which)
        return cmd_control(cfg, which)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"orbitmaps: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, prm.PrmDomainError, famap.StpmDomainError) as exc:
        if isinstance(exc, prm.PrmFitError):
            print(f"orbitmaps: numerical failure: {exc}", file=sys.stderr)
            return 1
        print(f"orbitmaps: error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        where = f" ({cfg.family_id})" if cfg is not None else ""
        print(f"orbitmaps: numerical failure{where}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
