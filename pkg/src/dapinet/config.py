"""Configuration schema: parsing, strict validation and object assembly.

One JSON document drives every command.  Physical quantities carry explicit
units in their field names; unknown keys are rejected everywhere so typos
fail loudly before any computation.  A config may describe a single run
(events) or a named suite of runs sharing the same network (scenarios).
"""

from __future__ import annotations

import json

import numpy as np

from .control import AttackEvent
from .model import CouplingSpec, DerParams, GainMatrix, make_coupling
from .network import make_grid
from .sim import Scenario, ScenarioEvent


class ConfigError(ValueError):
    pass


DER_KEYS = {
    "m_rad_per_s_per_w": ("m", True),
    "n_v_per_var": ("n", True),
    "tau_c_s": ("tau_c", False),
    "k_s": ("k", False),
    "kappa_s": ("kappa", False),
    "xi": ("xi", False),
    "p_star_w": ("p_star", False),
    "q_star_var": ("q_star", False),
    "omega_star_rad_per_s": ("omega_star", False),
    "v_star_v": ("v_star", False),
    "s_bar_va": ("s_bar", False),
}

TOP_KEYS = {"ders", "coupling", "grid", "events", "scenarios", "synthesis",
            "sim", "output"}
COUPLING_KEYS = {"links", "a_max", "b_max", "strength"}
GRID_KEYS = {"lines", "lines_q", "v_scale", "loads"}
LOAD_KEYS = {"name", "ders", "weights", "steps"}
EVENT_KEYS = {"t_s", "type", "kind", "links", "ders", "cut", "enable",
              "offsets", "zero_b"}
SYNTH_KEYS = {"kappa_y_grid", "tau_grid", "tau_h_grid", "tau_g_grid",
              "tau_v_grid", "weights", "alpha_bar", "beta_bar", "y_floor"}
SIM_KEYS = {"dt_s", "horizon_s", "seed", "scheme", "name"}
OUTPUT_KEYS = {"directory", "formats"}


def _require_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def save_config(cfg, path):
    validate_config(cfg)
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def validate_config(cfg):
    """Schema validation; raises ConfigError on the first problem."""
    _require_keys(cfg, TOP_KEYS, "config")
    for req in ("ders", "coupling", "grid", "sim"):
        if req not in cfg:
            raise ConfigError(f"missing required section {req!r}")

    ders = cfg["ders"]
    if not isinstance(ders, list) or not ders:
        raise ConfigError("ders must be a non-empty list")
    for i, d in enumerate(ders):
        _require_keys(d, set(DER_KEYS), f"ders[{i}]")
        for key, (_, required) in DER_KEYS.items():
            if required and key not in d:
                raise ConfigError(f"ders[{i}] missing {key}")
            if key in d and not isinstance(d[key], (int, float)):
                raise ConfigError(f"ders[{i}].{key} must be a number")
    n = len(ders)

    cp = cfg["coupling"]
    _require_keys(cp, COUPLING_KEYS, "coupling")
    for i, j in cp.get("links", []):
        if not (0 <= i < n and 0 <= j < n and i != j):
            raise ConfigError(f"coupling link ({i},{j}) out of range")

    grid = cfg["grid"]
    _require_keys(grid, GRID_KEYS, "grid")
    for line in grid.get("lines", []):
        if len(line) != 3 or not (0 <= line[0] < n and 0 <= line[1] < n):
            raise ConfigError(f"bad grid line {line!r}")
        if line[2] < 0:
            raise ConfigError(f"negative susceptance in line {line!r}")
    for k, ld in enumerate(grid.get("loads", [])):
        _require_keys(ld, LOAD_KEYS, f"grid.loads[{k}]")
        if "ders" not in ld or "steps" not in ld:
            raise ConfigError(f"grid.loads[{k}] needs ders and steps")
        if any(not (0 <= i < n) for i in ld["ders"]):
            raise ConfigError(f"grid.loads[{k}] references unknown DER")
        for st in ld["steps"]:
            if len(st) != 3:
                raise ConfigError(f"grid.loads[{k}] step must be [t_s, p_w, q_var]")

    def check_events(evs, where):
        last = -np.inf
        for k, ev in enumerate(evs):
            _require_keys(ev, EVENT_KEYS, f"{where}[{k}]")
            if "t_s" not in ev or "type" not in ev:
                raise ConfigError(f"{where}[{k}] needs t_s and type")
            if ev["type"] not in ("attack", "physical_island", "dapi_enable"):
                raise ConfigError(f"{where}[{k}] unknown type {ev['type']!r}")
            if ev["t_s"] <= last:
                raise ConfigError(f"{where} must be strictly time-ordered")
            last = ev["t_s"]

    check_events(cfg.get("events", []), "events")
    scenarios = cfg.get("scenarios", {})
    if not isinstance(scenarios, dict):
        raise ConfigError("scenarios must be an object of name -> events")
    for name, evs in scenarios.items():
        check_events(evs, f"scenarios[{name}]")

    if "synthesis" in cfg:
        syn = cfg["synthesis"]
        _require_keys(syn, SYNTH_KEYS, "synthesis")
        for key in ("alpha_bar", "beta_bar", "y_floor"):
            if key in syn and syn[key] <= 0:
                raise ConfigError(f"synthesis.{key} must be positive")
        if "weights" in syn:
            w = syn["weights"]
            if len(w) != 3 or any(v <= 0 for v in w):
                raise ConfigError("synthesis.weights must be three positive numbers")
        for key in SYNTH_KEYS:
            if key.endswith("_grid") and key in syn:
                if not syn[key] or any(v <= 0 for v in syn[key]):
                    raise ConfigError(f"synthesis.{key} must be non-empty and positive")

    sim = cfg["sim"]
    _require_keys(sim, SIM_KEYS, "sim")
    if sim.get("dt_s", 1e-3) <= 0:
        raise ConfigError("sim.dt_s must be positive")
    if sim.get("horizon_s", 20.0) <= 0:
        raise ConfigError("sim.horizon_s must be positive")
    if sim.get("scheme", "base_dapi") not in ("base_dapi", "proposed"):
        raise ConfigError("sim.scheme must be base_dapi or proposed")

    if "output" in cfg:
        _require_keys(cfg["output"], OUTPUT_KEYS, "output")


def build_ders(cfg):
    out = []
    for d in cfg["ders"]:
        kwargs = {attr: d[key] for key, (attr, _) in DER_KEYS.items() if key in d}
        out.append(DerParams(**kwargs))
    return out


def build_coupling(cfg) -> CouplingSpec:
    cp = cfg["coupling"]
    return make_coupling(len(cfg["ders"]), [tuple(l) for l in cp.get("links", [])],
                         a=cp.get("a_max", 1.0), b=cp.get("b_max", 1.0),
                         strength=cp.get("strength", 1.0))


def build_grid(cfg):
    g = cfg["grid"]
    n = len(cfg["ders"])
    ders = build_ders(cfg)
    sus_q = None
    if "lines_q" in g:
        sus_q = np.zeros((n, n))
        for i, j, b in g["lines_q"]:
            sus_q[i][j] = sus_q[j][i] = b
    return make_grid(
        n, [tuple(l) for l in g.get("lines", [])],
        loads=[{**ld} for ld in g.get("loads", [])],
        v_scale=g.get("v_scale", 1.0),
        p_star=np.array([d.p_star for d in ders]),
        q_star=np.array([d.q_star for d in ders]),
        s_bar=np.array([d.s_bar for d in ders]),
        susceptance_q=sus_q)


def build_events(evs):
    out = []
    for ev in evs:
        t = float(ev["t_s"])
        kind = ev["type"]
        if kind == "dapi_enable":
            out.append(ScenarioEvent(t, "dapi_enable", enable=bool(ev.get("enable", True))))
        elif kind == "physical_island":
            members = frozenset(ev["ders"]) if "ders" in ev else None
            cut = frozenset(tuple(c) for c in ev["cut"]) if "cut" in ev else None
            out.append(ScenarioEvent(t, "physical_island", members=members, cut=cut))
        else:
            akind = ev.get("kind")
            if akind == "confidentiality_island":
                targets = frozenset(ev["ders"])
            else:
                targets = frozenset(tuple(l) for l in ev.get("links", []))
            offsets = None
            if "offsets" in ev:
                offsets = {tuple(int(v) for v in key.split(",")): tuple(val)
                           for key, val in ev["offsets"].items()}
            out.append(ScenarioEvent(t, "attack",
                                     attack=AttackEvent(t, akind, targets,
                                                        fdi_offsets=offsets,
                                                        zero_b=bool(ev.get("zero_b", True)))))
    return out


def scenario_names(cfg):
    return list(cfg.get("scenarios", {}).keys()) or ["run"]


def build_scenario_from_config(cfg, name=None, scheme=None, gain=None,
                               proposed_coupling=None, dt=None, seed=None) -> Scenario:
    sim = cfg["sim"]
    if name is None or name == "run":
        events = cfg.get("events", [])
        name = sim.get("name", "run")
    else:
        try:
            events = cfg["scenarios"][name]
        except KeyError:
            raise ConfigError(f"config defines no scenario {name!r}")
    return Scenario(
        ders=build_ders(cfg), coupling=build_coupling(cfg), grid=build_grid(cfg),
        events=build_events(events),
        horizon=float(sim.get("horizon_s", 20.0)),
        dt=float(dt if dt is not None else sim.get("dt_s", 1e-3)),
        scheme=scheme or sim.get("scheme", "base_dapi"),
        gain=gain, proposed_coupling=proposed_coupling,
        seed=int(seed if seed is not None else sim.get("seed", 0)),
        name=name)


def synthesis_options(cfg):
    syn = cfg.get("synthesis", {})
    grids = {}
    for key in ("kappa_y", "tau", "tau_h", "tau_g", "tau_v"):
        if f"{key}_grid" in syn:
            grids[key] = tuple(syn[f"{key}_grid"])
    return {
        "grids": grids or None,
        "weights": tuple(syn.get("weights", (1.0, 1.0, 1.0))),
        "alpha_bar": float(syn.get("alpha_bar", 1.0)),
        "beta_bar": float(syn.get("beta_bar", 1.0)),
        "y_floor": float(syn.get("y_floor", 0.05)),
    }


def gain_file_payload(result):
    """Serializable synthesis artifact: gains, bounds, Lyapunov matrix."""
    return {
        "n_ders": result.k_gain.n_ders,
        "k_omega": result.k_gain.k_omega,
        "k_Omega": result.k_gain.k_Omega,
        "k_v": result.k_gain.k_v,
        "k_e": result.k_gain.k_e,
        "alpha": result.alpha,
        "beta": result.beta,
        "gamma_alpha": result.gamma_alpha,
        "gamma_beta": result.gamma_beta,
        "kappa_l": result.kappa_l,
        "p_lyap": result.p_lyap.tolist(),
        "y_block": result.y_block.tolist(),
        "l_block": result.l_block.tolist(),
        "hyper": {
            "kappa_y": result.problem.kappa_y,
            "tau": result.problem.tau,
            "tau_h": result.problem.tau_h,
            "tau_g": result.problem.tau_g,
            "tau_v": result.problem.tau_v,
        },
        "residuals": {k: float(v) for k, v in result.residuals.items()},
        "objective": result.objective,
    }


def write_gain_file(result, path):
    with open(path, "w") as fh:
        json.dump(gain_file_payload(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_gain_file(path, n_ders=None):
    """Returns (GainMatrix, payload dict)."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read gain file {path}: {exc}") from exc
    for key in ("n_ders", "k_omega", "k_Omega", "k_v", "k_e", "alpha", "beta",
                "p_lyap", "hyper"):
        if key not in payload:
            raise ConfigError(f"gain file {path} missing {key!r}")
    if n_ders is not None and payload["n_ders"] != n_ders:
        raise ConfigError(f"gain file is for {payload['n_ders']} DERs, config has {n_ders}")
    gain = GainMatrix(payload["k_omega"], payload["k_Omega"], payload["k_v"],
                      payload["k_e"], n_ders=int(payload["n_ders"]),
                      allow_nonnegative=True)
    payload["p_lyap"] = np.asarray(payload["p_lyap"], dtype=float)
    return gain, payload


def default_config():
    """The bundled 5-DER, 3-MG reference suite."""
    from . import scenarios as sc

    ders = []
    for i in range(5):
        ders.append({
            "m_rad_per_s_per_w": sc.M_GAINS[i],
            "n_v_per_var": sc.N_GAINS[i],
            "q_star_var": sc.Q_STAR,
            "s_bar_va": sc.S_BAR,
        })
    dt = 1e-3
    all_links = [list(l) for l in sc.LINKS]

    def ev_list(name):
        out = []
        for ev in sc.scenario_events(name, dt):
            if ev.kind == "dapi_enable":
                out.append({"t_s": ev.t, "type": "dapi_enable", "enable": ev.enable})
            elif ev.kind == "physical_island":
                out.append({"t_s": ev.t, "type": "physical_island",
                            "ders": sorted(ev.members)})
            else:
                at = ev.attack
                entry = {"t_s": ev.t, "type": "attack", "kind": at.kind}
                if at.kind == "confidentiality_island":
                    entry["ders"] = sorted(at.targets)
                else:
                    entry["links"] = [list(l) for l in sorted(at.targets)]
                    if at.kind == "dos" and not at.zero_b:
                        entry["zero_b"] = False
                out.append(entry)
        return out

    return {
        "ders": ders,
        "coupling": {"links": all_links, "a_max": 1.0, "b_max": 1.0, "strength": 1.0},
        "grid": {
            "lines": [[i, j, sc.LINE_B] for i, j in sc.LINKS],
            "lines_q": [[i, j, sc.LINE_B_Q] for i, j in sc.LINKS],
            "v_scale": 1.0,
            "loads": [{"name": ld["name"], "ders": list(ld["ders"]),
                       "steps": [list(s) for s in ld["steps"]]}
                      for ld in sc.LOADS],
        },
        "scenarios": {name: ev_list(name) for name in sc.SCENARIO_NAMES},
        "synthesis": {
            "kappa_y_grid": list(sc.SYNTH_GRIDS["kappa_y"]),
            "tau_grid": list(sc.SYNTH_GRIDS["tau"]),
            "tau_h_grid": list(sc.SYNTH_GRIDS["tau_h"]),
            "tau_g_grid": list(sc.SYNTH_GRIDS["tau_g"]),
            "tau_v_grid": list(sc.SYNTH_GRIDS["tau_v"]),
            "weights": list(sc.SYNTH_WEIGHTS),
            "alpha_bar": 1.0,
            "beta_bar": 1.0,
            "y_floor": sc.SYNTH_Y_FLOOR,
        },
        "sim": {"dt_s": dt, "horizon_s": 20.0, "seed": 0, "scheme": "base_dapi",
                "name": "nmg5"},
        "output": {"directory": "out", "formats": ["csv"]},
    }
