"""Run configuration: INI-style sections, strict validation, exact round-trip.

An empty file yields the desk-scale default run. The membrane constants keep
the customary published values where the desk scale allows; beta, c_m, R_m
and sigma_scale form the desk normalization that makes the printed CFL
formula, the front speed and the run length mutually consistent on a level-6
grid (see README).
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace

from .model import ModelParams, StimulusProtocol
from .mr import MRConfig

MODES = ("uniform", "mr", "mr-lts")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "mr"
    finest_level: int = 6
    min_level: int = 2
    t_final: float = 0.5
    snapshot_times: tuple = (0.1, 0.25, 0.5)
    cfl_factor: float = 0.5
    dt_policy: str = "fixed_initial"      # or "adaptive" (uniform mode only)
    full_tensor_flux: bool = True
    reaction: bool = True
    force_full_tree: bool = False
    blowup_factor: float = 25.0
    solver_tol: float = 1.0e-8
    eps_ref: float = 5.0e-4
    remesh_interval: int = 2
    use_derived_tolerance: bool = False
    tol_C: float = 1.0
    tol_alpha: float = 2.0
    tol_D: float = 1.0
    elliptic_cadence: str = "every_fine_step"
    lts_reaction_substeps: bool = True
    reference_run: str = ""
    params: ModelParams = field(default_factory=lambda: ModelParams(
        beta=4036.5, c_m=3.75e-5, R_m=2.24e5, v_p=100.0,
        eta1=0.005, eta2=0.1, eta3=1.5, eta4=7.5, eta5=0.1,
        sigma_il=6.0, sigma_it=0.6, sigma_el=24.0, sigma_et=12.0,
        sigma_scale=5.8e-5, fiber_angle=-math.pi / 4,
    ))
    stimulus: StimulusProtocol = field(default_factory=StimulusProtocol)

    def mr_config(self) -> MRConfig:
        return MRConfig(
            finest_level=self.finest_level,
            min_level=self.min_level,
            eps_ref=self.eps_ref,
            remesh_interval=self.remesh_interval,
            use_derived_tolerance=self.use_derived_tolerance,
            tol_C=self.tol_C,
            tol_alpha=self.tol_alpha,
            tol_D=self.tol_D,
        )

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if not (1 <= self.finest_level <= 14):
            raise ConfigError(f"run.finest_level must be in [1, 14], got {self.finest_level}")
        if not (0 <= self.min_level <= self.finest_level):
            raise ConfigError("run.min_level must lie in [0, finest_level]")
        if self.t_final <= 0:
            raise ConfigError("run.t_final must be positive")
        if self.cfl_factor <= 0:
            raise ConfigError("run.cfl_factor must be positive")
        if self.dt_policy not in ("fixed_initial", "adaptive"):
            raise ConfigError(f"run.dt_policy must be fixed_initial or adaptive, got {self.dt_policy!r}")
        if self.dt_policy == "adaptive" and self.mode != "uniform":
            raise ConfigError("run.dt_policy=adaptive is only available in uniform mode")
        for t in self.snapshot_times:
            if not (0.0 <= t <= self.t_final):
                raise ConfigError(f"snapshot time {t} outside [0, t_final]")
        if self.solver_tol <= 0:
            raise ConfigError("solver.tol must be positive")
        if self.eps_ref <= 0:
            raise ConfigError("mr.eps_ref must be positive")
        if self.remesh_interval < 1:
            raise ConfigError("mr.remesh_interval must be >= 1")
        if self.elliptic_cadence not in ("every_fine_step", "sync_only"):
            raise ConfigError(f"lts.elliptic_cadence invalid: {self.elliptic_cadence!r}")
        if self.blowup_factor <= 1:
            raise ConfigError("run.blowup_factor must exceed 1")
        try:
            self.mr_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


_SCHEMA = {
    "run": {
        "mode": str, "finest_level": int, "min_level": int, "t_final": float,
        "snapshot_times": "floats", "cfl_factor": float, "dt_policy": str,
        "full_tensor_flux": bool, "reaction": bool, "force_full_tree": bool,
        "blowup_factor": float,
    },
    "model": {
        "beta": float, "c_m": float, "r_m": float, "v_p": float,
        "eta1": float, "eta2": float, "eta3": float, "eta4": float, "eta5": float,
        "sigma_il": float, "sigma_it": float, "sigma_el": float, "sigma_et": float,
        "sigma_scale": float, "fiber_angle": float,
    },
    "stimulus": {
        "ic_shape": str, "ic_center_x": float, "ic_center_y": float,
        "ic_radius": float, "ic_halfwidth_x": float, "ic_halfwidth_y": float,
        "ic_amplitude": float, "w0": float,
        "app_amplitude": float, "app_t0": float, "app_t1": float,
        "app_shape": str, "app_center_x": float, "app_center_y": float,
        "app_radius": float,
    },
    "mr": {
        "eps_ref": float, "remesh_interval": int, "use_derived_tolerance": bool,
        "tol_c": float, "tol_alpha": float, "tol_d": float,
    },
    "lts": {"elliptic_cadence": str, "reaction_substeps": bool},
    "solver": {"tol": float},
    "output": {"reference_run": str},
}


def _parse_value(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def loads_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _parse_value(raw, _SCHEMA[section][key], f"[{section}] {key}")

    cfg = RunConfig()
    run = values.get("run", {})
    cfg = replace(
        cfg,
        mode=run.get("mode", cfg.mode),
        finest_level=run.get("finest_level", cfg.finest_level),
        min_level=run.get("min_level", cfg.min_level),
        t_final=run.get("t_final", cfg.t_final),
        snapshot_times=run.get("snapshot_times", cfg.snapshot_times),
        cfl_factor=run.get("cfl_factor", cfg.cfl_factor),
        dt_policy=run.get("dt_policy", cfg.dt_policy),
        full_tensor_flux=run.get("full_tensor_flux", cfg.full_tensor_flux),
        reaction=run.get("reaction", cfg.reaction),
        force_full_tree=run.get("force_full_tree", cfg.force_full_tree),
        blowup_factor=run.get("blowup_factor", cfg.blowup_factor),
    )
    m = values.get("model", {})
    if m:
        p = cfg.params
        try:
            p = ModelParams(
                beta=m.get("beta", p.beta), c_m=m.get("c_m", p.c_m),
                R_m=m.get("r_m", p.R_m), v_p=m.get("v_p", p.v_p),
                eta1=m.get("eta1", p.eta1), eta2=m.get("eta2", p.eta2),
                eta3=m.get("eta3", p.eta3), eta4=m.get("eta4", p.eta4),
                eta5=m.get("eta5", p.eta5),
                sigma_il=m.get("sigma_il", p.sigma_il), sigma_it=m.get("sigma_it", p.sigma_it),
                sigma_el=m.get("sigma_el", p.sigma_el), sigma_et=m.get("sigma_et", p.sigma_et),
                sigma_scale=m.get("sigma_scale", p.sigma_scale),
                fiber_angle=m.get("fiber_angle", p.fiber_angle),
            )
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from exc
        cfg = replace(cfg, params=p)
    s = values.get("stimulus", {})
    if s:
        st = cfg.stimulus
        try:
            st = StimulusProtocol(
                ic_shape=s.get("ic_shape", st.ic_shape),
                ic_center=(s.get("ic_center_x", st.ic_center[0]),
                           s.get("ic_center_y", st.ic_center[1])),
                ic_radius=s.get("ic_radius", st.ic_radius),
                ic_halfwidth=(s.get("ic_halfwidth_x", st.ic_halfwidth[0]),
                              s.get("ic_halfwidth_y", st.ic_halfwidth[1])),
                ic_amplitude=s.get("ic_amplitude", st.ic_amplitude),
                w0=s.get("w0", st.w0),
                app_amplitude=s.get("app_amplitude", st.app_amplitude),
                app_window=(s.get("app_t0", st.app_window[0]),
                            s.get("app_t1", st.app_window[1])),
                app_shape=s.get("app_shape", st.app_shape),
                app_center=(s.get("app_center_x", st.app_center[0]),
                            s.get("app_center_y", st.app_center[1])),
                app_radius=s.get("app_radius", st.app_radius),
            )
        except ValueError as exc:
            raise ConfigError(f"[stimulus] {exc}") from exc
        cfg = replace(cfg, stimulus=st)
    mrv = values.get("mr", {})
    cfg = replace(
        cfg,
        eps_ref=mrv.get("eps_ref", cfg.eps_ref),
        remesh_interval=mrv.get("remesh_interval", cfg.remesh_interval),
        use_derived_tolerance=mrv.get("use_derived_tolerance", cfg.use_derived_tolerance),
        tol_C=mrv.get("tol_c", cfg.tol_C),
        tol_alpha=mrv.get("tol_alpha", cfg.tol_alpha),
        tol_D=mrv.get("tol_d", cfg.tol_D),
    )
    lts = values.get("lts", {})
    cfg = replace(
        cfg,
        elliptic_cadence=lts.get("elliptic_cadence", cfg.elliptic_cadence),
        lts_reaction_substeps=lts.get("reaction_substeps", cfg.lts_reaction_substeps),
    )
    sol = values.get("solver", {})
    cfg = replace(cfg, solver_tol=sol.get("tol", cfg.solver_tol))
    out = values.get("output", {})
    cfg = replace(cfg, reference_run=out.get("reference_run", cfg.reference_run))
    return cfg.validate()


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def dumps_config(cfg: RunConfig) -> str:
    p, s = cfg.params, cfg.stimulus
    buf = io.StringIO()

    def w(line=""):
        buf.write(line + "\n")

    w("[run]")
    w(f"mode = {cfg.mode}")
    w(f"finest_level = {cfg.finest_level}")
    w(f"min_level = {cfg.min_level}")
    w(f"t_final = {cfg.t_final!r}")
    w("snapshot_times = " + ",".join(repr(t) for t in cfg.snapshot_times))
    w(f"cfl_factor = {cfg.cfl_factor!r}")
    w(f"dt_policy = {cfg.dt_policy}")
    w(f"full_tensor_flux = {str(cfg.full_tensor_flux).lower()}")
    w(f"reaction = {str(cfg.reaction).lower()}")
    w(f"force_full_tree = {str(cfg.force_full_tree).lower()}")
    w(f"blowup_factor = {cfg.blowup_factor!r}")
    w()
    w("[model]")
    w(f"beta = {p.beta!r}")
    w(f"c_m = {p.c_m!r}")
    w(f"r_m = {p.R_m!r}")
    w(f"v_p = {p.v_p!r}")
    for k in ("eta1", "eta2", "eta3", "eta4", "eta5"):
        w(f"{k} = {getattr(p, k)!r}")
    for k in ("sigma_il", "sigma_it", "sigma_el", "sigma_et", "sigma_scale"):
        w(f"{k} = {getattr(p, k)!r}")
    w(f"fiber_angle = {p.fiber_angle!r}")
    w()
    w("[stimulus]")
    w(f"ic_shape = {s.ic_shape}")
    w(f"ic_center_x = {s.ic_center[0]!r}")
    w(f"ic_center_y = {s.ic_center[1]!r}")
    w(f"ic_radius = {s.ic_radius!r}")
    w(f"ic_halfwidth_x = {s.ic_halfwidth[0]!r}")
    w(f"ic_halfwidth_y = {s.ic_halfwidth[1]!r}")
    w(f"ic_amplitude = {s.ic_amplitude!r}")
    w(f"w0 = {s.w0!r}")
    w(f"app_amplitude = {s.app_amplitude!r}")
    w(f"app_t0 = {s.app_window[0]!r}")
    w(f"app_t1 = {s.app_window[1]!r}")
    w(f"app_shape = {s.app_shape}")
    w(f"app_center_x = {s.app_center[0]!r}")
    w(f"app_center_y = {s.app_center[1]!r}")
    w(f"app_radius = {s.app_radius!r}")
    w()
    w("[mr]")
    w(f"eps_ref = {cfg.eps_ref!r}")
    w(f"remesh_interval = {cfg.remesh_interval}")
    w(f"use_derived_tolerance = {str(cfg.use_derived_tolerance).lower()}")
    w(f"tol_c = {cfg.tol_C!r}")
    w(f"tol_alpha = {cfg.tol_alpha!r}")
    w(f"tol_d = {cfg.tol_D!r}")
    w()
    w("[lts]")
    w(f"elliptic_cadence = {cfg.elliptic_cadence}")
    w(f"reaction_substeps = {str(cfg.lts_reaction_substeps).lower()}")
    w()
    w("[solver]")
    w(f"tol = {cfg.solver_tol!r}")
    w()
    w("[output]")
    w(f"reference_run = {cfg.reference_run}")
    return buf.getvalue()


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))
