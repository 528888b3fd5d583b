"""Runtime control laws and cyberattack transformations.

The vector field here is the closed consensus-controlled model: droop/LPF
deviation dynamics, distributed-averaging integrators, and the optional
structured state feedback.  Attacks act on snapshots of the coupling spec
and grid topology owned by the scenario runner; all functions here are pure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (
    NSTATE,
    CouplingSpec,
    GainMatrix,
    ModelError,
    SystemMatrices,
)
from .network import GridTopology, apply_physical_island, island_of

log = logging.getLogger(__name__)

ATTACK_KINDS = ("confidentiality_island", "fdi", "dos")


@dataclass(frozen=True)
class ControlInput:
    """Secondary control terms of one DER: u = consensus + feedback."""

    u_omega: float
    u_v: float
    du_omega: float
    du_v: float

    @classmethod
    def compose(cls, omega_c, e_c, du_omega, du_v):
        return cls(omega_c + du_omega, e_c + du_v, du_omega, du_v)


@dataclass(frozen=True)
class AttackEvent:
    """One scheduled cyberattack.

    targets holds DER indices for confidentiality_island and (i, j) link
    pairs for fdi/dos.  fdi_offsets optionally maps links to (da, db)
    additive coupling corruptions; by default an FDI adds the current live
    coupling, i.e. doubles it.  zero_b controls whether a DoS also clears
    the voltage couplings on the targeted links.
    """

    t_start: float
    kind: str
    targets: frozenset
    fdi_offsets: dict = None
    zero_b: bool = True

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ModelError(f"unknown attack kind {self.kind!r}")


def feedback(x, gain: GainMatrix):
    """Stacked feedback du = K_D x (2 entries per DER)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (NSTATE * gain.n_ders,):
        raise ModelError("feedback: state dimension mismatch")
    return gain.full() @ x


def state_derivative(x, d, du, sys: SystemMatrices):
    """Closed-model state derivative for the stacked 4N state.

    Computes (A_D + dA_D) x + B_D du + (E_D + dE_D) d, which expands to the
    compact channel form: tau_c dw' = -dw + Om + du_w - M_d dp;
    k Om' = -dw - L_a Om; tau_c dv' = -dv + e + du_v - N_d dq;
    kappa e' = -xi dv - Q*^-1 L_b dq.  The auxiliary angle dynamics
    delta' = dw are returned separately by delta_derivative.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    du = np.asarray(du, dtype=float)
    n = sys.n_ders
    if x.shape != (NSTATE * n,) or d.shape != (2 * n,) or du.shape != (2 * n,):
        raise ModelError("state_derivative: dimension mismatch")
    return (sys.a_d + sys.delta_a) @ x + sys.b_d @ du + (sys.e_d + sys.delta_e) @ d


def delta_derivative(x):
    """Angle dynamics: delta_i' = dw_i."""
    return np.asarray(x, dtype=float)[0::NSTATE]


def dapi_consensus_terms(states, disturbances, coupling: CouplingSpec, ders):
    """Per-DER consensus integrator rates (Om', e').

    k_i Om_i' = -dw_i - sum_j a_ij (Om_i - Om_j);
    kappa_i e_i' = -xi_i dv_i - sum_j b_ij (dq_i/Q*_i - dq_j/Q*_j).
    """
    n = coupling.n_ders
    om = np.array([s.omega_c for s in states])
    dw = np.array([s.d_omega for s in states])
    dv = np.array([s.d_v for s in states])
    dq = np.array([dst.d_q for dst in disturbances])
    om_dot = np.zeros(n)
    e_dot = np.zeros(n)
    for i in range(n):
        p = ders[i]
        acc = -dw[i]
        for j in range(n):
            if j != i and coupling.a_live[i, j] != 0.0:
                acc -= coupling.a_live[i, j] * (om[i] - om[j])
        om_dot[i] = acc / p.k
        vacc = -p.xi * dv[i]
        for j in range(n):
            if j != i and coupling.b_live[i, j] != 0.0:
                if p.q_star == 0.0 or ders[j].q_star == 0.0:
                    raise ModelError(
                        f"b coupling ({i},{j}) active with zero Q*")
                vacc -= coupling.b_live[i, j] * (dq[i] / p.q_star - dq[j] / ders[j].q_star)
        e_dot[i] = vacc / p.kappa
    return om_dot, e_dot


def _link_pairs(targets):
    pairs = set()
    for t in targets:
        i, j = t
        pairs.add((min(i, j), max(i, j)))
    return pairs


def apply_attack(coupling: CouplingSpec, grid: GridTopology, event: AttackEvent,
                 t: float):
    """Return (coupling, grid) snapshots with the attack applied.

    confidentiality_island cuts every coupling and electrical line between
    the target DER set and the rest (internal links survive); fdi inflates
    live couplings on targeted links leaving the electrical topology alone;
    dos zeroes live couplings on targeted links.  Attacks never create
    links absent from the fundamental interconnection matrix.
    """
    if t < event.t_start:
        raise ModelError("apply_attack called before the event start time")
    cp = coupling.copy()
    gd = grid
    n = coupling.n_ders

    if event.kind == "confidentiality_island":
        members = set(event.targets)
        if not members or any(not (0 <= i < n) for i in members):
            raise ModelError(f"bad island target set {event.targets!r}")
        for i in range(n):
            for j in range(n):
                if (i in members) != (j in members):
                    cp.a_live[i, j] = cp.b_live[i, j] = 0.0
                    cp.strengths[i, j] = 0.0
        gd = apply_physical_island(grid, island_of(grid, members))
        log.info("t=%.3f confidentiality island: %s cut from the rest", t, sorted(members))
        return cp, gd

    pairs = _link_pairs(event.targets)
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < n) or coupling.e_fund[i, j] == 0.0:
            raise ModelError(f"attack targets unknown link ({i},{j})")

    if event.kind == "dos":
        for i, j in pairs:
            cp.a_live[i, j] = cp.a_live[j, i] = 0.0
            if event.zero_b:
                cp.b_live[i, j] = cp.b_live[j, i] = 0.0
            cp.strengths[i, j] = cp.strengths[j, i] = 0.0
        log.info("t=%.3f DoS on links %s (zero_b=%s)", t, sorted(pairs), event.zero_b)
    else:  # fdi
        for i, j in pairs:
            if event.fdi_offsets and (i, j) in event.fdi_offsets:
                da, db = event.fdi_offsets[(i, j)]
            else:
                # default corruption equals the nominal coupling (doubling)
                da, db = cp.a_live[i, j], cp.b_live[i, j]
            cp.a_live[i, j] = cp.a_live[j, i] = cp.a_live[i, j] + da
            cp.b_live[i, j] = cp.b_live[j, i] = cp.b_live[i, j] + db
            if cp.a_max[i, j] > 0.0:
                cp.strengths[i, j] = cp.strengths[j, i] = cp.a_live[i, j] / cp.a_max[i, j]
        log.info("t=%.3f FDI on links %s", t, sorted(pairs))
    cp.validate()
    return cp, gd
