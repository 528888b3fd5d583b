"""Deterministic fixed-step scenario runner.

Integrates the coupled angle/control dynamics with classical 4th-order
Runge-Kutta at a fixed step, splitting steps exactly at event and load-step
times so switching instants never smear across a stage.  A single run is
strictly sequential; comparison legs share the event stream and seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .control import AttackEvent, apply_attack
from .model import NSTATE, CouplingSpec, GainMatrix, ModelError, aggregate
from .network import GridTopology, apply_physical_island, electrical_powers, island_of

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    """One scheduled switching action.

    kind "attack" carries an AttackEvent; "physical_island" cuts electrical
    lines only (members or explicit line pairs); "dapi_enable" toggles the
    secondary layer (consensus integrators plus feedback).
    """

    t: float
    kind: str  # "attack" | "physical_island" | "dapi_enable"
    attack: AttackEvent = None
    members: frozenset = None
    cut: frozenset = None
    enable: bool = True

    def __post_init__(self):
        if self.kind not in ("attack", "physical_island", "dapi_enable"):
            raise ModelError(f"unknown event kind {self.kind!r}")
        if self.kind == "attack" and self.attack is None:
            raise ModelError("attack event without AttackEvent payload")
        if self.kind == "physical_island" and self.members is None and self.cut is None:
            raise ModelError("physical_island event needs members or cut")

    def label(self):
        if self.kind == "attack":
            return f"attack:{self.attack.kind}"
        if self.kind == "physical_island":
            return "physical_island"
        return f"dapi_enable:{self.enable}"


@dataclass
class Scenario:
    """Complete description of one simulation run."""

    ders: list
    coupling: CouplingSpec
    grid: GridTopology
    events: list = field(default_factory=list)
    horizon: float = 20.0
    dt: float = 1e-3
    scheme: str = "base_dapi"  # "base_dapi" | "proposed"
    gain: GainMatrix = None
    proposed_coupling: CouplingSpec = None  # alpha/beta-parameterised couplings
    dapi_on: bool = True
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ModelError("dt must be positive")
        ts = [e.t for e in self.events]
        if any(t2 <= t1 for t1, t2 in zip(ts, ts[1:])):
            raise ModelError("events must be strictly time-ordered")
        if ts and self.horizon < max(ts):
            raise ModelError("horizon must cover the last event")
        if self.scheme not in ("base_dapi", "proposed"):
            raise ModelError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "proposed" and self.gain is None:
            raise ModelError("proposed scheme requires a gain matrix")


FIELDS = ("delta", "domega", "Omega", "dv", "e", "dp", "dq", "uw", "uv")


@dataclass
class TrajectoryLog:
    """Uniformly sampled trajectory plus event markers and diagnostics."""

    times: np.ndarray
    data: dict               # field name -> (n_samples, N) array
    events: list             # [(t, label), ...]
    n_ders: int
    dt: float
    clamp_count: int = 0
    aborted: bool = False
    abort_reason: str = ""
    scheme: str = ""
    name: str = ""
    # post-event runtime configuration (in-process only, not serialized)
    final_coupling: CouplingSpec = None
    final_grid: GridTopology = None
    final_dapi_on: bool = True

    def series(self, name, der=None):
        arr = self.data[name]
        return arr if der is None else arr[:, der]

    def window(self, t0, t1):
        """Sample index slice covering t0 <= t <= t1."""
        i0 = int(np.searchsorted(self.times, t0 - 1e-12))
        i1 = int(np.searchsorted(self.times, t1 + 1e-12))
        return slice(i0, i1)

    def to_csv(self, path):
        cols = ["t"] + [f"der{i}_{f}" for i in range(self.n_ders) for f in FIELDS]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for s in range(len(self.times)):
                row = [f"{self.times[s]:.17g}"]
                for i in range(self.n_ders):
                    row.extend(f"{self.data[f][s, i]:.17g}" for f in FIELDS)
                fh.write(",".join(row) + "\n")

    def sidecar(self, path):
        payload = {
            "name": self.name, "scheme": self.scheme, "dt": self.dt,
            "n_ders": self.n_ders, "clamp_count": self.clamp_count,
            "aborted": self.aborted, "abort_reason": self.abort_reason,
            "events": [{"t": t, "label": lab} for t, lab in self.events],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path, sidecar_path=None):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            raw = np.loadtxt(fh, delimiter=",", ndmin=2)
        if header[0] != "t" or (len(header) - 1) % len(FIELDS) != 0:
            raise ModelError(f"malformed trajectory CSV {path}")
        n = (len(header) - 1) // len(FIELDS)
        expect = ["t"] + [f"der{i}_{f}" for i in range(n) for f in FIELDS]
        if header != expect:
            raise ModelError(f"unexpected column layout in {path}")
        times = raw[:, 0]
        data = {}
        for fi, f in enumerate(FIELDS):
            data[f] = raw[:, 1 + fi::len(FIELDS)]
        events = []
        meta = {}
        if sidecar_path is not None:
            with open(sidecar_path) as fh:
                meta = json.load(fh)
            events = [(ev["t"], ev["label"]) for ev in meta.get("events", [])]
        dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
        return cls(times, data, events, n, dt,
                   clamp_count=int(meta.get("clamp_count", 0)),
                   aborted=bool(meta.get("aborted", False)),
                   abort_reason=str(meta.get("abort_reason", "")),
                   scheme=str(meta.get("scheme", "")),
                   name=str(meta.get("name", "")))


class _Runtime:
    """Matrices for one (coupling, grid, dapi) snapshot."""

    def __init__(self, ders, coupling, grid, gain, dapi_on):
        self.ders = ders
        self.coupling = coupling
        self.grid = grid
        self.gain = gain
        self.dapi_on = dapi_on
        sys = aggregate(ders, coupling)
        self.sys = sys
        n = sys.n_ders
        self.kd = gain.full() if (gain is not None and dapi_on) else np.zeros((2 * n, NSTATE * n))
        if dapi_on:
            self.a_eff = sys.a_d + sys.delta_a + sys.b_d @ self.kd
            self.e_eff = sys.e_d + sys.delta_e
        else:
            # droop only: consensus rows frozen, consensus feed-in removed
            a = sys.a_d.copy()
            for i in range(n):
                r = NSTATE * i
                a[r + 1, :] = 0.0
                a[r + 3, :] = 0.0
                a[r + 0, r + 1] = 0.0
                a[r + 2, r + 3] = 0.0
            self.a_eff = a
            self.e_eff = sys.e_d

    def disturbance(self, delta, x, t):
        dp, dq = electrical_powers(delta, x[2::NSTATE], self.grid, t)
        d = np.empty(2 * self.sys.n_ders)
        d[0::2], d[1::2] = dp, dq
        return d

    def rhs(self, t, z):
        n = self.sys.n_ders
        delta, x = z[:n], z[n:]
        d = self.disturbance(delta, x, t)
        zdot = np.empty_like(z)
        zdot[:n] = x[0::NSTATE]
        zdot[n:] = self.a_eff @ x + self.e_eff @ d
        return zdot


def _rk4_step(rt, t, z, h):
    # divergence shows up as overflow here; the runner detects it and aborts
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = rt.rhs(t, z)
        k2 = rt.rhs(t + 0.5 * h, z + 0.5 * h * k1)
        k3 = rt.rhs(t + 0.5 * h, z + 0.5 * h * k2)
        k4 = rt.rhs(t + h, z + h * k3)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run(scenario: Scenario) -> TrajectoryLog:
    """Integrate one scenario and record the trajectory at every step.

    Events are applied exactly at their timestamps by splitting the
    integration step; every RK4 stage inside a step sees a single snapshot
    of the coupling/grid configuration.  Bit-reproducible for a fixed
    (scenario, seed).
    """
    n = len(scenario.ders)
    if scenario.scheme == "proposed":
        gain = scenario.gain
        coupling = (scenario.proposed_coupling or scenario.coupling).copy()
    else:
        gain = GainMatrix.zero(n)
        coupling = scenario.coupling.copy()
    grid = scenario.grid.copy()
    dapi_on = scenario.dapi_on
    rt = _Runtime(scenario.ders, coupling, grid, gain, dapi_on)

    n_steps = int(round(scenario.horizon / scenario.dt))
    times = np.arange(n_steps + 1) * scenario.dt
    data = {f: np.zeros((n_steps + 1, n)) for f in FIELDS}
    markers = []

    # split points: scheduled events plus load profile steps
    load_times = sorted({t for ld in grid.loads for t, _, _ in ld.steps if 0.0 < t})
    pending = sorted(
        [(e.t, 0, e) for e in scenario.events] + [(t, 1, None) for t in load_times])

    z = np.zeros(n + NSTATE * n)
    _record(data, 0, rt, times[0], z)
    pi = 0
    # events exactly at t=0 apply before the first step
    while pi < len(pending) and pending[pi][0] <= 0.0:
        ev = pending[pi][2]
        if ev is not None:
            coupling, grid, dapi_on = _apply_event(ev, coupling, grid, dapi_on, markers)
            rt = _Runtime(scenario.ders, coupling, grid, gain, dapi_on)
        pi += 1

    for s in range(n_steps):
        t0, t1 = times[s], times[s + 1]
        t = t0
        while pi < len(pending) and pending[pi][0] <= t1 + 1e-12:
            te, _, ev = pending[pi]
            te = min(te, t1)
            if te > t + 1e-15:
                z = _rk4_step(rt, t, z, te - t)
                t = te
            if ev is not None:
                coupling, grid, dapi_on = _apply_event(ev, coupling, grid, dapi_on, markers)
                rt = _Runtime(scenario.ders, coupling, grid, gain, dapi_on)
            pi += 1
        if t1 > t + 1e-15:
            z = _rk4_step(rt, t, z, t1 - t)
        if not np.all(np.isfinite(z)):
            log.error("non-finite state at t=%.4f; aborting run", t1)
            out = TrajectoryLog(times[:s + 1], {f: data[f][:s + 1] for f in FIELDS},
                                markers, n, scenario.dt, grid.clamp_count,
                                aborted=True,
                                abort_reason=f"non-finite state at t={t1:.6g}",
                                scheme=scenario.scheme, name=scenario.name,
                                final_coupling=coupling, final_grid=grid,
                                final_dapi_on=dapi_on)
            return out
        _record(data, s + 1, rt, t1, z)

    return TrajectoryLog(times, data, markers, n, scenario.dt, grid.clamp_count,
                         scheme=scenario.scheme, name=scenario.name,
                         final_coupling=coupling, final_grid=grid,
                         final_dapi_on=dapi_on)


def _apply_event(ev: ScenarioEvent, coupling, grid, dapi_on, markers):
    markers.append((ev.t, ev.label()))
    if ev.kind == "attack":
        coupling, grid = apply_attack(coupling, grid, ev.attack, ev.t)
    elif ev.kind == "physical_island":
        cut = ev.cut if ev.cut is not None else island_of(grid, ev.members)
        grid = apply_physical_island(grid, cut)
    else:
        dapi_on = ev.enable
    return coupling, grid, dapi_on


def _record(data, s, rt: _Runtime, t, z):
    n = rt.sys.n_ders
    delta, x = z[:n], z[n:]
    d = rt.disturbance(delta, x, t)
    du = rt.kd @ x
    data["delta"][s] = delta
    data["domega"][s] = x[0::NSTATE]
    data["Omega"][s] = x[1::NSTATE]
    data["dv"][s] = x[2::NSTATE]
    data["e"][s] = x[3::NSTATE]
    data["dp"][s] = d[0::2]
    data["dq"][s] = d[1::2]
    if rt.dapi_on:
        data["uw"][s] = x[1::NSTATE] + du[0::2]
        data["uv"][s] = x[3::NSTATE] + du[1::2]
    else:
        data["uw"][s] = 0.0
        data["uv"][s] = 0.0


def final_configuration(scenario: Scenario):
    """(coupling, grid, dapi_on) after every scheduled event, no integration."""
    if scenario.scheme == "proposed":
        coupling = (scenario.proposed_coupling or scenario.coupling).copy()
    else:
        coupling = scenario.coupling.copy()
    grid = scenario.grid.copy()
    dapi_on = scenario.dapi_on
    for ev in scenario.events:
        coupling, grid, dapi_on = _apply_event(ev, coupling, grid, dapi_on, [])
    return coupling, grid, dapi_on


def run_comparison(scenario: Scenario):
    """Run the identical scenario with K = 0 and with the synthesised gain.

    Returns (base_log, proposed_log); event streams and seeds are shared, the
    legs differ only in the scheme/gain (and, for the proposed leg, in the
    connective-strength coupling values carried by the scenario itself).
    """
    if scenario.gain is None:
        raise ModelError("run_comparison needs a synthesised gain for the proposed leg")
    base = Scenario(scenario.ders, scenario.coupling, scenario.grid,
                    scenario.events, scenario.horizon, scenario.dt,
                    "base_dapi", None, scenario.proposed_coupling,
                    scenario.dapi_on, scenario.seed, scenario.name)
    prop = Scenario(scenario.ders, scenario.coupling, scenario.grid,
                    scenario.events, scenario.horizon, scenario.dt,
                    "proposed", scenario.gain, scenario.proposed_coupling,
                    scenario.dapi_on, scenario.seed, scenario.name)
    return run(base), run(prop)
