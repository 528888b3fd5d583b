"""Reference 5-DER / 3-MG scenario suite.

Topology: MG1 = {0, 1}, MG2 = {2, 3}, MG3 = {4}; communication links inside
each MG plus one inter-MG link per MG, electrical lines mirroring them.
Power quantities are on a desk-scale per-unit base (documented toolkit
choice; the published experiments used a kW-scale electromagnetic model and
give no load magnitudes, so acceptance here is directional).

The four runs share one initialisation phase (DAPI active from t=0, loads
stepping in at t=0.5 s):

* init        -- no further events
* scenario1   -- confidentiality islanding of MG2 at t=10 (cyber+physical)
* scenario2   -- physical islanding of {3, 4} at t=10, FDI on the stale
                 cross-island links one step later
* scenario3   -- DoS on the frequency consensus links at t=10 (voltage
                 couplings survive except on the intra-MG1 link), MG1
                 islanded at t=12
"""

from __future__ import annotations

import numpy as np

from .control import AttackEvent
from .model import DerParams, make_coupling
from .network import make_grid
from .sim import Scenario, ScenarioEvent

M_GAINS = (1e-4, 1e-4, 5e-5, 1e-4, 1e-4)
N_GAINS = (2e-4, 2e-4, 1e-4, 2e-4, 2e-4)
LINKS = ((0, 1), (2, 3), (1, 2), (3, 4), (4, 0))
MG_SETS = ({0, 1}, {2, 3}, {4})
LINE_B = 2.0e4    # stiff active-power lines: m * B ~ O(1), sharing settles in seconds
LINE_B_Q = 200.0  # softer reactive channel: q-flows stay inside the capacity ball
S_BAR = 2.0
Q_STAR = 1.0

# Active loads are proportional to the MGs' droop-weighted generation shares
# (1/m weights 1:1:2:1:1) and reactive loads to the rating shares, so the
# steady-state inter-MG line flows are zero: islanding a balanced MG then
# causes only small deviations, as in the reference confidentiality scenario.
P_TOTAL = 0.68
LOADS = (
    {"name": "mg1", "ders": [0, 1], "steps": [(0.5, P_TOTAL / 3.0, 0.10)]},
    {"name": "mg2", "ders": [2, 3], "steps": [(0.5, P_TOTAL / 2.0, 0.10)]},
    {"name": "mg3", "ders": [4], "steps": [(0.5, P_TOTAL / 6.0, 0.05)]},
)

SCENARIO_NAMES = ("init", "scenario1", "scenario2", "scenario3")

# synthesis defaults tuned for the desk-scale suite: the tiny disturbance
# multipliers keep the supply-rate check inside its tolerance, the weights
# keep all three objective terms numerically resolvable
SYNTH_GRIDS = {
    "kappa_y": (1e6, 1e7),
    "tau": (1e-6,),
    "tau_h": (1.0,),
    "tau_g": (2e-7,),
    "tau_v": (0.5,),
}
SYNTH_WEIGHTS = (1.0, 1e-8, 1e7)
SYNTH_Y_FLOOR = 0.5


def default_ders():
    return [DerParams(m=M_GAINS[i], n=N_GAINS[i], q_star=Q_STAR, s_bar=S_BAR)
            for i in range(5)]


def default_coupling(a=1.0, b=1.0):
    return make_coupling(5, LINKS, a=a, b=b)


def default_grid():
    lines = [(i, j, LINE_B) for i, j in LINKS]
    bq = np.zeros((5, 5))
    for i, j in LINKS:
        bq[i, j] = bq[j, i] = LINE_B_Q
    return make_grid(5, lines, loads=[dict(ld) for ld in LOADS],
                     q_star=np.full(5, Q_STAR), s_bar=np.full(5, S_BAR),
                     susceptance_q=bq)


def scenario_events(name, dt=1e-3):
    if name == "init":
        return []
    if name == "scenario1":
        return [ScenarioEvent(10.0, "attack",
                              attack=AttackEvent(10.0, "confidentiality_island",
                                                 frozenset(MG_SETS[1])))]
    if name == "scenario2":
        # physical cut of {3,4}; the unchanged comm links then carry stale
        # couplings, modelled as an FDI doubling on the cross-island links
        return [
            ScenarioEvent(10.0, "physical_island", members=frozenset({3, 4})),
            ScenarioEvent(10.0 + dt, "attack",
                          attack=AttackEvent(10.0 + dt, "fdi",
                                             frozenset({(2, 3), (4, 0)}))),
        ]
    if name == "scenario3":
        all_links = frozenset(LINKS)
        return [
            ScenarioEvent(10.0, "attack",
                          attack=AttackEvent(10.0, "dos", all_links, zero_b=False)),
            ScenarioEvent(10.0 + dt, "attack",
                          attack=AttackEvent(10.0 + dt, "dos", frozenset({(0, 1)}),
                                             zero_b=True)),
            ScenarioEvent(12.0, "attack",
                          attack=AttackEvent(12.0, "confidentiality_island",
                                             frozenset(MG_SETS[0]))),
        ]
    raise ValueError(f"unknown scenario {name!r}")


def build_scenario(name, scheme="base_dapi", gain=None, proposed_coupling=None,
                   dt=1e-3, horizon=20.0, seed=0) -> Scenario:
    return Scenario(default_ders(), default_coupling(), default_grid(),
                    scenario_events(name, dt), horizon, dt, scheme, gain,
                    proposed_coupling, dapi_on=True, seed=seed, name=name)


def default_synthesis(sys=None):
    """Run the tuned hyperparameter search on the reference system."""
    from .model import aggregate
    from .synthesis import search_hyperparameters

    if sys is None:
        sys = aggregate(default_ders(), default_coupling())
    return search_hyperparameters(sys, grids=SYNTH_GRIDS, weights=SYNTH_WEIGHTS,
                                  alpha_bar=1.0, beta_bar=1.0,
                                  y_floor=SYNTH_Y_FLOOR)
