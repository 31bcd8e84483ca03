"""Run configuration: JSON schema validation, defaults, hashing and setup construction."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .graphmaps import SolverSettings
from .loopspace import LoopField
from .model import TorusModel
from .semiflow import TimeGrid

DEFAULTS = {
    "J": 32,
    "grid": {"kind": "graded", "dt": 0.02, "ratio": 1.2, "floor": 1e-6, "coarsen_after": 20.0,
             "tail_ratio": 1.1, "tail_max": 1.0},
    "ledger": {"mode": "empirical", "rho0": 0.2, "rho": 0.1, "r": 0.1, "eps": 0.004, "eps0": None,
               "c": None, "mu_fraction": 0.5, "kappa_samples": 400, "gamma_count": None},
    "tolerances": {"fp_tol": 1e-10, "fiber_tol": 1e-6, "action_tol": 1e-8, "degeneracy_tol": 1e-8,
                   "newton_tol": 1e-10, "rate_tol_fraction": 0.05, "max_iter": 200, "stall_ratio": 0.9,
                   "n_sphere": 8},
    "sweep": {"T_offsets": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0], "gamma_count": 2,
              "zplus_count": 5, "zplus_fraction": 0.5, "v_count": 3, "modes": 6,
              "taus": [0.1, 0.05, 0.025]},
    "smoothing": {"s_min": 1e-3, "s_max": 10.0, "points": 120, "alpha": 0.75},
    "outdir": None,
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(resources.files("loopflow").joinpath("configs/schema.json").read_text())


def bundled_path(name: str = "pendulum") -> Path:
    return Path(str(resources.files("loopflow").joinpath(f"configs/{name}.json")))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            jsonschema.validate(raw, schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        data = _merge(DEFAULTS, raw)
        if len(data["critical_guess"]) != data["model"]["dim"]:
            raise ConfigError("critical_guess needs one value per model dimension")
        for t in data["model"]["terms"]:
            if len(t["k"]) != data["model"]["dim"]:
                raise ConfigError("every term needs a wave vector k of length dim")
        return cls(data)

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> "RunConfig":
        p = bundled_path() if path is None else Path(path)
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: not valid JSON ({exc})") from None
        return cls.from_dict(raw)

    def canonical(self) -> str:
        """Canonical JSON of everything that affects results (the output location does not)."""
        body = {k: v for k, v in self.data.items() if k != "outdir"}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def __getitem__(self, key):
        return self.data[key]

    def with_overrides(self, **over) -> "RunConfig":
        return RunConfig(_merge(self.data, over))

    def model(self) -> TorusModel:
        return TorusModel.from_spec(self.data["model"])

    def guess(self) -> LoopField:
        J = self.data["J"]
        return LoopField.constant(self.data["critical_guess"], J)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(**self.data["grid"])

    def settings(self) -> SolverSettings:
        tol = self.data["tolerances"]
        return SolverSettings(fp_tol=tol["fp_tol"], fiber_tol=tol["fiber_tol"], action_tol=tol["action_tol"],
                              max_iter=tol["max_iter"], stall_ratio=tol["stall_ratio"], grid=self.time_grid(),
                              n_sphere=tol["n_sphere"])

    def outdir(self, cli_value: str | None = None) -> Path:
        return Path(cli_value or self.data["outdir"] or os.environ.get("LOOPFLOW_OUTDIR") or "loopflow-out")


def build_setup(cfg: RunConfig):
    from . import lambdaverify

    L, tol = cfg["ledger"], cfg["tolerances"]
    return lambdaverify.build_setup(
        cfg.model(), cfg.guess(), L["rho0"], L["rho"], L["r"], L["eps"], mu_fraction=L["mu_fraction"],
        c=L["c"], mode=L["mode"], settings=cfg.settings(), gamma_count=L["gamma_count"],
        kappa_samples=L["kappa_samples"], seed=cfg["seed"], degeneracy_tol=tol["degeneracy_tol"],
        newton_tol=tol["newton_tol"], eps0=L["eps0"],
        rate_tol_fraction=tol["rate_tol_fraction"])


def sweep_spec(cfg: RunConfig, T0: float):
    from .lambdaverify import SweepSpec

    sw = cfg["sweep"]
    return SweepSpec(T_list=tuple(float(T0 + d) for d in sw["T_offsets"]), gamma_count=sw["gamma_count"],
                     zplus_count=sw["zplus_count"], zplus_fraction=sw["zplus_fraction"], v_count=sw["v_count"],
                     seed=cfg["seed"], modes=sw["modes"], taus=tuple(sw["taus"]))
