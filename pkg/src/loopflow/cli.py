"""Command line entry point: ``loopflow <subcommand> [--config FILE] ...``.

Outputs go to ``<outdir>/<subcommand>/<config-hash>/``.  Files carry no
timestamps, so identical configurations reproduce identical bytes.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import graphmaps as gm
from . import lambdaverify as lv
from . import loopspace as ls
from . import semigroup, semiflow, spectral
from .config import ConfigError, RunConfig, build_setup, sweep_spec
from .errors import LoopflowError
from .loopspace import LoopField
from .model import action, find_critical_loop

log = logging.getLogger("loopflow")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, LoopField):
        return obj.real_coords().tolist()
    return obj


def parse_field(text: str, J: int, n: int, dec=None) -> LoopField:
    """Loop field from a short spec.

    zero | const:v | cos:j:amp[:comp] | sin:j:amp[:comp] | eig:i:amp (W12 amplitude,
    needs the splitting) | JSON list of real coordinates | path to a JSON file
    holding such a list or {"real_coords": [...]}.
    """
    text = text.strip()
    p = Path(text)
    if text.startswith("[") or (p.suffix == ".json" and p.exists()):
        data = json.loads(text if text.startswith("[") else p.read_text())
        if isinstance(data, dict):
            data = data["real_coords"]
        return LoopField.from_real(np.asarray(data, dtype=float), J, n)
    head, *rest = text.split(":")
    if head == "zero":
        return LoopField.zeros(J, n)
    if head == "const":
        vals = [float(v) for v in rest[0].split(",")]
        if len(vals) == 1 and n > 1:
            vals = vals * n
        return LoopField.constant(vals, J)
    if head in ("cos", "sin"):
        comp = int(rest[2]) if len(rest) > 2 else 0
        return LoopField.harmonic(int(rest[0]), float(rest[1]), head, J, n, comp)
    if head == "eig":
        if dec is None:
            raise ValueError("eig: fields need the spectral splitting")
        i, amp = int(rest[0]), float(rest[1])
        q = dec.basis[:, i]
        return LoopField.from_real(q * (amp / ls.w12_norm_coords(q, J, n)), J, n)
    raise ValueError(f"cannot parse field spec {text!r}")


class Runner:
    def __init__(self, cfg: RunConfig, outdir: str | None, jobs: int):
        self.cfg = cfg
        self.jobs = jobs
        self.root = cfg.outdir(outdir)
        self._setup = None

    @property
    def setup(self) -> lv.Setup:
        if self._setup is None:
            self._setup = build_setup(self.cfg)
        return self._setup

    def dest(self, command: str) -> Path:
        d = self.root / command / self.cfg.hash
        d.mkdir(parents=True, exist_ok=True)
        return d

    def envelope(self, command: str, args: dict, result) -> dict:
        rep = self.setup.ledger_report
        return _clean({
            "command": command,
            "config_hash": self.cfg.hash,
            "args": args,
            "ledger": {"valid": rep.get("valid"), "theoretical_valid": rep.get("theoretical_valid"),
                       "mode": rep.get("mode"), "T0": self.setup.ledger.T0},
            "result": result,
        })

    def write(self, command: str, args: dict, result, name: str) -> Path:
        path = self.dest(command) / name
        semiflow.write_json(self.envelope(command, args, result), path)
        return path


def _ledger_block(setup: lv.Setup) -> dict:
    return {"ledger": setup.ledger.to_dict(), "validation": setup.ledger_report}


def cmd_spectrum(run: Runner, a) -> list[Path]:
    s = run.setup
    res = {"critical_value": s.x.c, "critical_residual": s.x.residual, "newton_iterations": s.x.iterations,
           "critical_loop": s.x.x, **spectral.spectral_summary(s.dec, a.count)}
    return [run.write("spectrum", {"count": a.count}, res, "spectrum.json")]


def cmd_flow(run: Runner, a) -> list[Path]:
    s = run.setup
    z = parse_field(a.z, s.dec.J, s.dec.n, s.dec)
    traj = semiflow.evolve(s.dec, s.model, s.x, z, a.T, grid=s.settings.grid, rho0=s.ledger.rho0)
    d = run.dest("flow")
    semiflow.write_trajectory_csv(traj, d / "trajectory.csv")
    acts = semiflow.action_along(s.model, traj)
    res = semiflow.trajectory_summary(
        s.model, traj, representation_residual=semiflow.residual_representation(s.dec, s.model, s.x, traj),
        max_action_increase=float(np.max(np.diff(acts), initial=-math.inf)))
    return [d / "trajectory.csv", run.write("flow", {"z": a.z, "T": a.T}, res, "flow.json")]


def cmd_stable(run: Runner, a) -> list[Path]:
    s = run.setup
    zp = parse_field(a.zplus, s.dec.J, s.dec.n, s.dec)
    pt = gm.solve_stable(s.dec, s.model, s.x, s.ledger, zp, s.settings)
    return [run.write("stable", {"zplus": a.zplus}, pt.to_json(), "graphpoint.json")]


def cmd_unstable(run: Runner, a) -> list[Path]:
    s = run.setup
    zm = parse_field(a.zminus, s.dec.J, s.dec.n, s.dec)
    traj = gm.solve_unstable(s.dec, s.model, s.x, s.ledger, zm, s.settings)
    d = run.dest("unstable")
    semiflow.write_trajectory_csv(traj, d / "trajectory.csv")
    res = {"endpoint": traj.final, "endpoint_W12": ls.norm(traj.final, ls.W12),
           "endpoint_action": action(s.model, s.x.x + traj.final), "iters": traj.meta["iters"],
           "ratios": traj.meta["ratios"], "fp_residual": traj.meta["fp_residual"]}
    return [d / "trajectory.csv", run.write("unstable", {"zminus": a.zminus}, res, "unstable.json")]


def cmd_sphere(run: Runner, a) -> list[Path]:
    s = run.setup
    eps = s.ledger.eps if a.eps is None else a.eps
    pts = gm.descending_sphere(s.model, s.x, s.dec, eps, s.ledger, s.settings,
                               eps0=run.cfg["ledger"]["eps0"])
    res = {"eps": eps, "target_action": s.x.c - eps,
           "points": [{"gamma_id": i, "real_coords": g, "W12": ls.norm(g, ls.W12),
                       "action": action(s.model, s.x.x + g)} for i, g in enumerate(pts)]}
    return [run.write("sphere", {"eps": eps}, res, "sphere.json")]


def cmd_mixed(run: Runner, a) -> list[Path]:
    s = run.setup
    zp = parse_field(a.zplus, s.dec.J, s.dec.n, s.dec)
    pt = gm.solve_mixed(s.dec, s.model, s.x, s.ledger, a.T, s.gamma(a.gamma_id), zp, s.settings,
                        gamma_id=a.gamma_id)
    return [run.write("mixed", {"T": a.T, "gamma_id": a.gamma_id, "zplus": a.zplus}, pt.to_json(),
                      "graphpoint.json")]


def _sweep_files(run: Runner, command: str, res: lv.SweepResult, stem: str, value: str) -> list[Path]:
    d = run.dest(command)
    keys = lv.group_keys(res)
    rows = []
    for r in res.rows:
        group = "/".join(f"{k}={r[k]}" for k in keys)
        rows.append(dict(r, group_rate=res.group_rates.get(group, float("nan")),
                         fitted_rate=res.fitted_rate, bound_rate=res.bound_rate))
    lv.write_rows_csv(rows, d / f"{stem}.csv")
    lv.write_decay_file(res, d / f"{stem}_decay.dat", value)
    return [d / f"{stem}.csv", d / f"{stem}_decay.dat",
            run.write(command, {"jobs_independent": True}, res.summary(), f"{stem}.json")]


def cmd_lambda_sweep(run: Runner, a) -> list[Path]:
    s = run.setup
    res = lv.sweep_convergence(s, sweep_spec(run.cfg, s.ledger.T0), jobs=run.jobs)
    return _sweep_files(run, "lambda-sweep", res, "sweep", "dist_W12")


def cmd_c1_sweep(run: Runner, a) -> list[Path]:
    s = run.setup
    res = lv.sweep_c1(s, sweep_spec(run.cfg, s.ledger.T0), jobs=run.jobs)
    return _sweep_files(run, "c1-sweep", res, "c1", "c1_dist_L2")


def cmd_roundtrip(run: Runner, a) -> list[Path]:
    s = run.setup
    rep = lv.roundtrip_audit(s, sweep_spec(run.cfg, s.ledger.T0), jobs=run.jobs)
    d = run.dest("roundtrip")
    lv.write_rows_csv(rep["rows"], d / "roundtrip.csv")
    summary = {k: v for k, v in rep.items() if k != "rows"}
    return [d / "roundtrip.csv", run.write("roundtrip", {}, summary, "roundtrip.json")]


def cmd_smoothing_audit(run: Runner, a) -> list[Path]:
    sm = run.cfg["smoothing"]
    J = run.cfg["J"] if a.J is None else a.J
    model = run.cfg.model()
    x = find_critical_loop(model, LoopField.constant(run.cfg["critical_guess"], J),
                           newton_tol=run.cfg["tolerances"]["newton_tol"])
    dec = spectral.decompose(spectral.assemble(model, x), run.cfg["ledger"]["mu_fraction"],
                             run.cfg["tolerances"]["degeneracy_tol"])
    s_grid = np.geomspace(sm["s_min"], sm["s_max"], sm["points"])
    rep = semigroup.audit_smoothing(dec, s_grid, sm["alpha"], jobs=run.jobs)
    d = run.dest("smoothing-audit")
    semigroup.write_audit_csv(rep, d / f"smoothing_J{J}.csv")
    summary = {k: v for k, v in rep.items() if k != "rows"}
    return [d / f"smoothing_J{J}.csv", run.write("smoothing-audit", {"J": J}, summary, f"smoothing_J{J}.json")]


def cmd_validate_ledger(run: Runner, a) -> list[Path]:
    return [run.write("validate-ledger", {}, _ledger_block(run.setup), "ledger.json")]


COMMANDS = {
    "spectrum": cmd_spectrum,
    "flow": cmd_flow,
    "stable": cmd_stable,
    "unstable": cmd_unstable,
    "sphere": cmd_sphere,
    "mixed": cmd_mixed,
    "lambda-sweep": cmd_lambda_sweep,
    "c1-sweep": cmd_c1_sweep,
    "roundtrip": cmd_roundtrip,
    "smoothing-audit": cmd_smoothing_audit,
    "validate-ledger": cmd_validate_ledger,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: bundled pendulum config)")
    common.add_argument("--outdir", help="output root (fallback: config, then $LOOPFLOW_OUTDIR)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="loopflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("spectrum", parents=[common], help="critical loop and Jacobi spectrum")
    sp.add_argument("--count", type=int, default=16, help="eigenvalues to report")
    sp = sub.add_parser("flow", parents=[common], help="forward semiflow from a chart point")
    sp.add_argument("--z", required=True, help="initial chart field (see parse_field)")
    sp.add_argument("--T", type=float, required=True)
    sp = sub.add_parser("stable", parents=[common], help="stable-manifold graph point")
    sp.add_argument("--zplus", default="zero")
    sp = sub.add_parser("unstable", parents=[common], help="unstable-manifold trajectory")
    sp.add_argument("--zminus", default="eig:0:0.05")
    sp = sub.add_parser("sphere", parents=[common], help="descending sphere on the level c - eps")
    sp.add_argument("--eps", type=float)
    sp = sub.add_parser("mixed", parents=[common], help="time-T graph point")
    sp.add_argument("--T", type=float, required=True)
    sp.add_argument("--gamma-id", type=int, default=0)
    sp.add_argument("--zplus", default="zero")
    for name, text in (("lambda-sweep", "convergence sweep of the graph maps"),
                       ("c1-sweep", "convergence sweep of the linearized graph maps"),
                       ("roundtrip", "forward roundtrip into the fibers"),
                       ("validate-ledger", "constants ledger checks")):
        sub.add_parser(name, parents=[common], help=text)
    sp = sub.add_parser("smoothing-audit", parents=[common], help="semigroup smoothing constant")
    sp.add_argument("--J", type=int, help="override the truncation")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        run = Runner(cfg, args.outdir, max(1, args.jobs))
        paths = COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"loopflow: config error: {exc}", file=sys.stderr)
        return 2
    except (LoopflowError, ValueError, OSError) as exc:
        print(f"loopflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
