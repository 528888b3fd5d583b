"""Domain types and state-space assembly for DAPI-controlled droop inverters.

Each DER carries four controllable states x_i = [dw, Om, dv, e] (frequency
deviation, frequency consensus, voltage deviation, voltage consensus); the
inverter angle delta is an auxiliary network-coupling state handled by the
simulator.  This module builds the per-DER matrices (A_i, B_i, E_i), the
consensus-coupling uncertainty blocks, and the aggregated block matrices of
the full network model, together with the disturbance/uncertainty bound
matrices used by the synthesis and analysis layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# per-DER state layout inside the stacked 4N vector
IDX_DW, IDX_OM, IDX_DV, IDX_E = 0, 1, 2, 3
NSTATE = 4  # controllable states per DER
NINPUT = 2  # [du_omega, du_v]
NDIST = 2   # [dp, dq]


class ModelError(ValueError):
    """Invalid parameters or inconsistent model assembly inputs."""


@dataclass(frozen=True)
class DerParams:
    """Per-inverter droop/DAPI parameters and capacity bound.

    Units follow the field names: droop gains couple power deviations into
    frequency (rad/s per W) and voltage (V per var); k and kappa are the
    inverse integral gains of the two consensus channels (s); s_bar is the
    maximum apparent-power deviation (VA) that defines the disturbance ball.
    """

    m: float            # frequency droop gain (rad/s per W)
    n: float            # voltage droop gain (V per var)
    tau_c: float = 1.0 / (2.0 * np.pi * 5.0)  # LPF cutoff time constant (s)
    k: float = 1.0      # inverse DAPI frequency integral gain (s)
    kappa: float = 1.0  # inverse DAPI voltage integral gain (s)
    xi: float = 1.0     # voltage-deviation term gain
    p_star: float = 0.0     # active power reference (W)
    q_star: float = 0.0     # reactive power reference (var)
    omega_star: float = 2.0 * np.pi * 60.0  # frequency setpoint (rad/s)
    v_star: float = 120.0 * np.sqrt(2.0)    # voltage setpoint (V)
    s_bar: float = 1.0      # max apparent power deviation (VA)

    def __post_init__(self):
        for name in ("m", "n", "tau_c", "k", "kappa", "s_bar"):
            if getattr(self, name) <= 0.0:
                raise ModelError(f"DerParams.{name} must be positive, got {getattr(self, name)!r}")
        if self.xi < 0.0:
            raise ModelError(f"DerParams.xi must be non-negative, got {self.xi!r}")


@dataclass(frozen=True)
class DerState:
    """Instantaneous state of one DER; delta is the network-coupling angle."""

    delta: float = 0.0    # inverter angle (rad)
    d_omega: float = 0.0  # frequency deviation (rad/s)
    omega_c: float = 0.0  # frequency consensus variable (rad/s)
    d_v: float = 0.0      # voltage deviation (V)
    e_c: float = 0.0      # voltage consensus variable (V)

    def x(self) -> np.ndarray:
        return np.array([self.d_omega, self.omega_c, self.d_v, self.e_c])


@dataclass(frozen=True)
class Disturbance:
    """Active/reactive power deviation at one DER's PCC."""

    d_p: float = 0.0  # W
    d_q: float = 0.0  # var

    def vec(self) -> np.ndarray:
        return np.array([self.d_p, self.d_q])

    def within_ball(self, s_bar: float) -> bool:
        return self.d_p ** 2 + self.d_q ** 2 <= s_bar ** 2


def _as_square(mat, n, name):
    a = np.asarray(mat, dtype=float)
    if a.shape != (n, n):
        raise ModelError(f"{name} must be {n}x{n}, got {a.shape}")
    return a


@dataclass
class CouplingSpec:
    """Communication-coupling description of the DER network.

    e_fund is the binary fundamental interconnection matrix fixed at design
    time; a link can only ever carry coupling if its e_fund entry is 1.
    a_max/b_max are the design-phase maximal couplings, a_live/b_live the
    values active right now, and strengths the per-link connective strengths
    in [0, 1] (values above 1 only arise inside attack events).
    """

    n_ders: int
    e_fund: np.ndarray
    a_max: np.ndarray
    b_max: np.ndarray
    a_live: np.ndarray
    b_live: np.ndarray
    strengths: np.ndarray

    def __post_init__(self):
        n = self.n_ders
        self.e_fund = _as_square(self.e_fund, n, "e_fund")
        self.a_max = _as_square(self.a_max, n, "a_max")
        self.b_max = _as_square(self.b_max, n, "b_max")
        self.a_live = _as_square(self.a_live, n, "a_live")
        self.b_live = _as_square(self.b_live, n, "b_live")
        self.strengths = _as_square(self.strengths, n, "strengths")
        self.validate()

    def validate(self):
        ef = self.e_fund
        if not np.array_equal(ef, ef.T):
            raise ModelError("e_fund must be symmetric")
        if np.any(np.diag(ef) != 0.0):
            raise ModelError("e_fund must have zero diagonal")
        if not np.all(np.isin(ef, (0.0, 1.0))):
            raise ModelError("e_fund entries must be 0 or 1")
        for name in ("a_max", "b_max", "a_live", "b_live", "strengths"):
            arr = getattr(self, name)
            if np.any(arr < 0.0):
                raise ModelError(f"{name} entries must be non-negative")
        off = ef == 0.0
        for name in ("a_live", "b_live"):
            if np.any(getattr(self, name)[off] != 0.0):
                raise ModelError(f"{name} has coupling on a link absent from e_fund")

    def copy(self) -> "CouplingSpec":
        return CouplingSpec(self.n_ders, self.e_fund.copy(), self.a_max.copy(),
                            self.b_max.copy(), self.a_live.copy(),
                            self.b_live.copy(), self.strengths.copy())


def make_coupling(n_ders, links, a=1.0, b=1.0, strength=1.0) -> CouplingSpec:
    """CouplingSpec with uniform max couplings a, b on the given links.

    Live couplings are initialised to strength * max on every fundamental
    link, which is the connective-strength parameterisation with the
    normalisers taken to be the maximal couplings themselves.
    """
    ef = np.zeros((n_ders, n_ders))
    for i, j in links:
        if i == j:
            raise ModelError(f"self-link ({i},{i}) not allowed")
        ef[i, j] = ef[j, i] = 1.0
    a_max = float(a) * ef
    b_max = float(b) * ef
    st = float(strength) * ef
    return CouplingSpec(n_ders, ef, a_max, b_max, float(strength) * a_max,
                        float(strength) * b_max, st)


@dataclass(frozen=True)
class GainMatrix:
    """Structured state-feedback gain, identical for every inverter.

    Each per-DER block has the sparsity [[k_omega, k_Omega, 0, 0],
    [0, 0, k_v, k_e]] so the frequency and voltage channels stay decoupled
    and consensus/power sharing are preserved.  All four scalars are
    expected to be negative; pass allow_nonnegative=True to bypass the check
    (recover_gain does, with a warning).
    """

    k_omega: float
    k_Omega: float
    k_v: float
    k_e: float
    n_ders: int
    allow_nonnegative: bool = False

    def __post_init__(self):
        if self.n_ders < 1:
            raise ModelError("GainMatrix.n_ders must be >= 1")
        if not self.allow_nonnegative:
            for name in ("k_omega", "k_Omega", "k_v", "k_e"):
                if getattr(self, name) >= 0.0:
                    raise ModelError(
                        f"gain {name}={getattr(self, name)!r} is non-negative; "
                        "set allow_nonnegative=True to override")

    def block(self) -> np.ndarray:
        return np.array([[self.k_omega, self.k_Omega, 0.0, 0.0],
                         [0.0, 0.0, self.k_v, self.k_e]])

    def full(self) -> np.ndarray:
        """Block-diagonal 2N x 4N feedback matrix."""
        n = self.n_ders
        kd = np.zeros((NINPUT * n, NSTATE * n))
        blk = self.block()
        for i in range(n):
            kd[NINPUT * i:NINPUT * (i + 1), NSTATE * i:NSTATE * (i + 1)] = blk
        return kd

    @classmethod
    def zero(cls, n_ders) -> "GainMatrix":
        return cls(0.0, 0.0, 0.0, 0.0, n_ders, allow_nonnegative=True)


def build_der_matrices(params: DerParams):
    """Per-DER state-space matrices (A_i 4x4, B_i 4x2, E_i 4x2).

    Row layout matches the state order [dw, Om, dv, e]; the only nonzero
    entries are the droop/LPF terms in the deviation rows and the integral
    terms in the consensus rows.
    """
    tc, k, kp, xi = params.tau_c, params.k, params.kappa, params.xi
    a = np.array([
        [-1.0 / tc, 1.0 / tc, 0.0, 0.0],
        [-1.0 / k, 0.0, 0.0, 0.0],
        [0.0, 0.0, -1.0 / tc, 1.0 / tc],
        [0.0, 0.0, -xi / kp, 0.0],
    ])
    b = np.array([
        [1.0 / tc, 0.0],
        [0.0, 0.0],
        [0.0, 1.0 / tc],
        [0.0, 0.0],
    ])
    e = np.array([
        [-params.m / tc, 0.0],
        [0.0, 0.0],
        [0.0, -params.n / tc],
        [0.0, 0.0],
    ])
    return a, b, e


def build_uncertainty_blocks(params: DerParams, coupling: CouplingSpec, i: int,
                             ders=None, a_mat=None, b_mat=None):
    """Consensus-coupling blocks of DER i against its neighbours.

    Returns (dA_ii, [(j, dA_ij)], dE_ii, [(j, dE_ij)]).  The frequency
    couplings enter the Om row (scaled by 1/k_i) and the voltage couplings
    the e row (scaled by 1/(kappa_i * Q*)); a nonzero b-coupling with a zero
    reactive reference is rejected, following the consensus-normalisation
    rule.

    a_mat/b_mat default to the live couplings; pass coupling.a_max etc. to
    build maximal blocks.  ders supplies neighbour q_star values (defaults
    to params for all).
    """
    n = coupling.n_ders
    amat = coupling.a_live if a_mat is None else a_mat
    bmat = coupling.b_live if b_mat is None else b_mat
    q_star = [params.q_star] * n if ders is None else [d.q_star for d in ders]

    da_ii = np.zeros((NSTATE, NSTATE))
    de_ii = np.zeros((NSTATE, NDIST))
    da_off, de_off = [], []
    for j in range(n):
        if j == i:
            continue
        aij = amat[i, j]
        bij = bmat[i, j]
        if aij != 0.0:
            da_ii[IDX_OM, IDX_OM] -= aij / params.k
            da_ij = np.zeros((NSTATE, NSTATE))
            da_ij[IDX_OM, IDX_OM] = aij / params.k
            da_off.append((j, da_ij))
        if bij != 0.0:
            if q_star[i] == 0.0 or q_star[j] == 0.0:
                raise ModelError(
                    f"b coupling ({i},{j}) nonzero but Q* is zero; such links "
                    "must carry b_ij = 0")
            de_ii[IDX_E, 1] -= bij / (params.kappa * q_star[i])
            de_ij = np.zeros((NSTATE, NDIST))
            de_ij[IDX_E, 1] = bij / (params.kappa * q_star[j])
            de_off.append((j, de_ij))
    return da_ii, da_off, de_ii, de_off


@dataclass
class SystemMatrices:
    """Aggregated block matrices of the closed network model."""

    n_ders: int
    a_d: np.ndarray        # 4N x 4N block diagonal
    b_d: np.ndarray        # 4N x 2N
    e_d: np.ndarray        # 4N x 2N
    delta_a: np.ndarray    # 4N x 4N consensus-state uncertainty
    delta_e: np.ndarray    # 4N x 2N consensus-disturbance uncertainty
    h_mat: np.ndarray      # uncertainty shape: delta_a at unit couplings
    g_mat: np.ndarray      # uncertainty shape: delta_e at unit couplings
    lap_a: np.ndarray      # N x N Laplacian of live frequency couplings
    lap_b: np.ndarray      # N x N Laplacian of live voltage couplings
    m_diag: np.ndarray     # N x N diag of frequency droop gains
    n_diag: np.ndarray     # N x N diag of voltage droop gains
    q_star_inv: np.ndarray  # N x N diag of 1/Q* (0 where Q* = 0)
    s_bar_d: np.ndarray    # 2N x 2N block-diagonal disturbance bound
    ders: list = field(default_factory=list)
    coupling: CouplingSpec = None


def _laplacian(weights: np.ndarray) -> np.ndarray:
    lap = -np.asarray(weights, dtype=float).copy()
    np.fill_diagonal(lap, 0.0)
    np.fill_diagonal(lap, -lap.sum(axis=1))
    return lap


def _assemble_delta(ders, coupling, a_mat, b_mat):
    n = coupling.n_ders
    da = np.zeros((NSTATE * n, NSTATE * n))
    de = np.zeros((NSTATE * n, NDIST * n))
    for i, p in enumerate(ders):
        da_ii, da_off, de_ii, de_off = build_uncertainty_blocks(
            p, coupling, i, ders=ders, a_mat=a_mat, b_mat=b_mat)
        ri = slice(NSTATE * i, NSTATE * (i + 1))
        da[ri, ri] += da_ii
        de[ri, NDIST * i:NDIST * (i + 1)] += de_ii
        for j, blk in da_off:
            da[ri, NSTATE * j:NSTATE * (j + 1)] += blk
        for j, blk in de_off:
            de[ri, NDIST * j:NDIST * (j + 1)] += blk
    return da, de


def aggregate(ders, coupling: CouplingSpec) -> SystemMatrices:
    """Assemble the aggregated network model from per-DER params and couplings.

    The uncertainty shape matrices are built from the fundamental links at
    unit coupling (strengths = 1), so the connective-strength bounds alpha
    and beta scale them directly to the maximal uncertainties.
    """
    n = len(ders)
    if coupling.n_ders != n:
        raise ModelError(f"coupling is for {coupling.n_ders} DERs, got {n} params")
    coupling.validate()

    a_d = np.zeros((NSTATE * n, NSTATE * n))
    b_d = np.zeros((NSTATE * n, NINPUT * n))
    e_d = np.zeros((NSTATE * n, NDIST * n))
    s_bar_d = np.zeros((NDIST * n, NDIST * n))
    for i, p in enumerate(ders):
        ai, bi, ei = build_der_matrices(p)
        ri = slice(NSTATE * i, NSTATE * (i + 1))
        a_d[ri, ri] = ai
        b_d[ri, NINPUT * i:NINPUT * (i + 1)] = bi
        e_d[ri, NDIST * i:NDIST * (i + 1)] = ei
        s_bar_d[NDIST * i:NDIST * (i + 1), NDIST * i:NDIST * (i + 1)] = \
            np.eye(NDIST) / p.s_bar ** 2

    delta_a, delta_e = _assemble_delta(ders, coupling, coupling.a_live, coupling.b_live)
    # unit-coupling shapes (only links with a maximal b-coupling carry a
    # voltage entry, so DERs with q_star = 0 stay legal if b_max is 0 there)
    h_mat, g_mat = _assemble_delta(ders, coupling, coupling.e_fund,
                                   np.where(coupling.b_max > 0.0, coupling.e_fund, 0.0))

    q_inv = np.diag([1.0 / p.q_star if p.q_star != 0.0 else 0.0 for p in ders])
    return SystemMatrices(
        n_ders=n, a_d=a_d, b_d=b_d, e_d=e_d, delta_a=delta_a, delta_e=delta_e,
        h_mat=h_mat, g_mat=g_mat,
        lap_a=_laplacian(coupling.a_live), lap_b=_laplacian(coupling.b_live),
        m_diag=np.diag([p.m for p in ders]), n_diag=np.diag([p.n for p in ders]),
        q_star_inv=q_inv, s_bar_d=s_bar_d, ders=list(ders), coupling=coupling.copy())


def check_bounds(x, d, sys: SystemMatrices, alpha, beta):
    """Evaluate the disturbance and uncertainty bound inequalities at (x, d).

    Returns a dict with the left/right-hand values, booleans, and residual
    margins (rhs - lhs) for: d'Sd <= 1, |dA x|^2 <= alpha^2 |H x|^2 and
    |dE d|^2 <= beta^2 |G d|^2.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape != (NSTATE * sys.n_ders,) or d.shape != (NDIST * sys.n_ders,):
        raise ModelError("check_bounds: dimension mismatch")
    s_val = float(d @ sys.s_bar_d @ d)
    ax = sys.delta_a @ x
    hx = sys.h_mat @ x
    ed = sys.delta_e @ d
    gd = sys.g_mat @ d
    a_lhs, a_rhs = float(ax @ ax), float(alpha ** 2) * float(hx @ hx)
    e_lhs, e_rhs = float(ed @ ed), float(beta ** 2) * float(gd @ gd)
    return {
        "disturbance_value": s_val,
        "disturbance_ok": s_val <= 1.0 + 1e-12,
        "disturbance_margin": 1.0 - s_val,
        "state_lhs": a_lhs, "state_rhs": a_rhs,
        "state_ok": a_lhs <= a_rhs + 1e-12 * max(1.0, a_rhs),
        "state_margin": a_rhs - a_lhs,
        "dist_unc_lhs": e_lhs, "dist_unc_rhs": e_rhs,
        "dist_unc_ok": e_lhs <= e_rhs + 1e-12 * max(1.0, e_rhs),
        "dist_unc_margin": e_rhs - e_lhs,
    }


def with_couplings(coupling: CouplingSpec, alpha, beta) -> CouplingSpec:
    """Live couplings set to the connective-strength parameterisation.

    a_live = alpha * strengths, b_live = beta * strengths on fundamental
    links; also updates a_max/b_max to alpha/beta at full strength so the
    maximal-coupling bookkeeping matches the synthesised bounds.
    """
    out = coupling.copy()
    ef = out.e_fund
    out.a_max = float(alpha) * ef
    out.b_max = float(beta) * ef
    out.a_live = float(alpha) * out.strengths * ef
    out.b_live = float(beta) * out.strengths * ef
    out.validate()
    return out
