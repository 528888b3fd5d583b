"""Quasi-static linearized electrical coupling between inverters.

Replaces a full electromagnetic network with a DC-like surrogate: active
power exchanged over a line is proportional to the angle difference and
reactive power to the voltage difference.  Loads attach to named buses and
are split among electrically adjacent DERs so that power balances exactly
within each island; no AC iteration, line losses or frequency-dependent
loads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Disturbance, ModelError

log = logging.getLogger(__name__)


@dataclass
class LoadProfile:
    """Piecewise-constant load attached to one bus.

    ders/weights describe how the bus load splits among adjacent DERs
    (weights default to the attaching line susceptances, i.e. equal when
    unspecified).  steps is a time-ordered list of (t, p, q): the load level
    from t onward.
    """

    name: str
    ders: list
    weights: np.ndarray
    steps: list  # [(t_s, p_w, q_var), ...] sorted by t

    def level(self, t: float):
        p = q = 0.0
        for ts, pv, qv in self.steps:
            if t >= ts:
                p, q = pv, qv
            else:
                break
        return p, q


@dataclass
class GridTopology:
    """Line susceptances, per-bus loads and the physical-connectivity mask."""

    n_ders: int
    susceptance: np.ndarray        # N x N, active-power channel (W per rad)
    susceptance_q: np.ndarray      # N x N, reactive channel (var per V at v_scale 1)
    loads: list = field(default_factory=list)
    v_scale: float = 1.0
    island_mask: np.ndarray = None
    p_star: np.ndarray = None      # per-DER active power references (W)
    q_star: np.ndarray = None      # per-DER reactive power references (var)
    s_bar: np.ndarray = None       # per-DER disturbance ball radii (VA)
    clamp_count: int = 0

    def __post_init__(self):
        n = self.n_ders
        self.susceptance = np.asarray(self.susceptance, dtype=float)
        self.susceptance_q = np.asarray(self.susceptance_q, dtype=float)
        for name in ("susceptance", "susceptance_q"):
            b = getattr(self, name)
            if b.shape != (n, n):
                raise ModelError(f"{name} must be {n}x{n}")
            if not np.array_equal(b, b.T):
                raise ModelError(f"{name} must be symmetric")
            if np.any(np.diag(b) != 0.0):
                raise ModelError(f"{name} must have zero diagonal")
            if np.any(b < 0.0):
                raise ModelError(f"{name} entries must be non-negative")
        if self.island_mask is None:
            self.island_mask = (self.susceptance > 0.0).astype(float)
        else:
            self.island_mask = np.asarray(self.island_mask, dtype=float)
            if not np.array_equal(self.island_mask, self.island_mask.T):
                raise ModelError("island_mask must be symmetric")
        if self.p_star is None:
            self.p_star = np.zeros(n)
        if self.q_star is None:
            self.q_star = np.zeros(n)
        if self.s_bar is None:
            self.s_bar = np.full(n, np.inf)
        self.p_star = np.asarray(self.p_star, dtype=float)
        self.q_star = np.asarray(self.q_star, dtype=float)
        self.s_bar = np.asarray(self.s_bar, dtype=float)

    def copy(self) -> "GridTopology":
        g = GridTopology(self.n_ders, self.susceptance.copy(),
                         self.susceptance_q.copy(), list(self.loads),
                         self.v_scale, self.island_mask.copy(),
                         self.p_star.copy(), self.q_star.copy(),
                         self.s_bar.copy())
        g.clamp_count = self.clamp_count
        return g

    def islands(self):
        """Connected components of the physical graph, as lists of DER indices."""
        return connected_components(self.island_mask)

    def share_table(self):
        """Cached per-segment load share vectors.

        Returns (times, p_shares, q_shares): load allocations are piecewise
        constant, so they are computed once per topology snapshot for every
        interval between load step times.  The cache is invalidated by copy()
        (event handling always works on fresh copies).
        """
        cached = getattr(self, "_share_cache", None)
        if cached is not None:
            return cached
        times = sorted({0.0} | {t for ld in self.loads for t, _, _ in ld.steps})
        times = np.asarray(times)
        p_tab = np.zeros((len(times), self.n_ders))
        q_tab = np.zeros((len(times), self.n_ders))
        for si, ts in enumerate(times):
            p_tab[si], q_tab[si] = _load_shares(self, ts)
        self._share_cache = (times, p_tab, q_tab)
        return self._share_cache


def connected_components(adj: np.ndarray):
    """Connected components of a symmetric adjacency matrix (graph search)."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in range(n):
                if not seen[v] and adj[u, v] > 0.0:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def make_grid(n_ders, lines, loads=None, v_scale=1.0, p_star=None,
              q_star=None, s_bar=None, susceptance_q=None) -> GridTopology:
    """GridTopology from a line list [(i, j, b), ...] and load definitions.

    loads entries are dicts with keys name, ders, steps and optional weights.
    susceptance_q defaults to the active-power susceptance matrix.
    """
    b = np.zeros((n_ders, n_ders))
    for i, j, bij in lines:
        if i == j:
            raise ModelError("self-line not allowed")
        if bij < 0.0:
            raise ModelError("line susceptance must be non-negative")
        b[i, j] = b[j, i] = float(bij)
    bq = b.copy() if susceptance_q is None else np.asarray(susceptance_q, float)
    load_objs = []
    for ld in loads or []:
        ders = list(ld["ders"])
        w = np.asarray(ld.get("weights", np.ones(len(ders))), dtype=float)
        if len(w) != len(ders) or np.any(w < 0.0) or w.sum() <= 0.0:
            raise ModelError(f"bad weights for load {ld.get('name')!r}")
        steps = sorted((float(t), float(p), float(q)) for t, p, q in ld["steps"])
        load_objs.append(LoadProfile(str(ld.get("name", f"load{len(load_objs)}")),
                                     ders, w, steps))
    return GridTopology(n_ders, b, bq, load_objs, v_scale,
                        p_star=p_star, q_star=q_star, s_bar=s_bar)


def _load_shares(grid: GridTopology, t: float):
    """Per-DER (p, q) load allocation at time t, island-consistent.

    A load belongs to the island of its largest-weight attached DER (ties to
    the lowest index); its level is split among attached DERs inside that
    island proportionally to the weights.
    """
    n = grid.n_ders
    p_share = np.zeros(n)
    q_share = np.zeros(n)
    comps = grid.islands()
    comp_of = np.empty(n, dtype=int)
    for ci, comp in enumerate(comps):
        for i in comp:
            comp_of[i] = ci
    for load in grid.loads:
        p, q = load.level(t)
        if p == 0.0 and q == 0.0:
            continue
        order = np.argsort(-load.weights, kind="stable")
        anchor = load.ders[order[0]]
        home = comp_of[anchor]
        idx = [k for k, d in enumerate(load.ders) if comp_of[d] == home]
        wsum = sum(load.weights[k] for k in idx)
        if wsum <= 0.0:
            log.warning("load %s has no reachable DER; shed", load.name)
            continue
        for k in idx:
            frac = load.weights[k] / wsum
            p_share[load.ders[k]] += frac * p
            q_share[load.ders[k]] += frac * q
    return p_share, q_share


def electrical_powers(delta, d_v, grid: GridTopology, t: float,
                      clamp: bool = True):
    """Instantaneous power deviations (dp, dq) for every DER.

    dp_i = sum_j B_ij (delta_i - delta_j) + share_i(load_p) - P*_i, and the
    reactive analogue over voltage differences.  When clamp is set, each
    DER's (dp, dq) is radially clamped to its apparent-power ball so the
    disturbance stays admissible; clamp events increment grid.clamp_count.
    """
    delta = np.asarray(delta, dtype=float)
    d_v = np.asarray(d_v, dtype=float)
    n = grid.n_ders
    if delta.shape != (n,) or d_v.shape != (n,):
        raise ModelError("electrical_powers: dimension mismatch")
    b = grid.susceptance * grid.island_mask
    bq = grid.susceptance_q * grid.island_mask
    flow_p = b.sum(axis=1) * delta - b @ delta
    flow_q = (bq.sum(axis=1) * d_v - bq @ d_v) * grid.v_scale
    times, p_tab, q_tab = grid.share_table()
    seg = int(np.searchsorted(times, t, side="right")) - 1
    seg = max(seg, 0)
    p_share, q_share = p_tab[seg], q_tab[seg]
    dp = flow_p + p_share - grid.p_star
    dq = flow_q + q_share - grid.q_star
    if clamp:
        mag = np.hypot(dp, dq)
        over = mag > grid.s_bar
        if np.any(over):
            grid.clamp_count += int(np.sum(over))
            log.warning("clamping %d DER disturbance(s) to the capacity ball at t=%.4f",
                        int(np.sum(over)), t)
            scale = np.where(over, grid.s_bar / np.where(mag > 0, mag, 1.0), 1.0)
            dp = dp * scale
            dq = dq * scale
    return dp, dq


def disturbances(delta, d_v, grid, t) -> list:
    dp, dq = electrical_powers(delta, d_v, grid, t)
    return [Disturbance(dp[i], dq[i]) for i in range(grid.n_ders)]


def apply_physical_island(grid: GridTopology, cut) -> GridTopology:
    """Topology with the given lines removed (set of (i, j) pairs).

    Cutting zeroes both susceptance channels and the island mask entry, so
    load allocation and power balance are enforced per resulting island.
    """
    out = grid.copy()
    for i, j in cut:
        if grid.susceptance[i, j] == 0.0 and grid.island_mask[i, j] == 0.0:
            raise ModelError(f"cut ({i},{j}) is not an existing line")
        out.susceptance[i, j] = out.susceptance[j, i] = 0.0
        out.susceptance_q[i, j] = out.susceptance_q[j, i] = 0.0
        out.island_mask[i, j] = out.island_mask[j, i] = 0.0
    return out


def island_of(grid: GridTopology, members) -> set:
    """Cut every line between members and the rest; returns the cut set."""
    members = set(members)
    cut = set()
    n = grid.n_ders
    for i in range(n):
        for j in range(i + 1, n):
            if (i in members) != (j in members) and grid.island_mask[i, j] > 0.0:
                cut.add((i, j))
    return cut
