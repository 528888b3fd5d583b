"""Structured gain and connective-bound synthesis via LMI optimization.

Decision variables are a shared symmetric 2x2+2x2 block Y0 repeated over all
DERs, a matching structured block L0, and the scalars gamma_alpha (=1/alpha^2),
gamma_beta (=1/beta^2) and kappa_l (gain bound).  Sharing one block across
DERs makes the recovered feedback identical for every inverter by
construction, which the consensus scheme requires.

The matrix inequality is assembled in the linear substituted form (L = K Y),
with the S-procedure multipliers fixed per solve; the bilinear multiplier
products are handled by grid search in search_hyperparameters.  Assembled
blocks are symmetrically equilibrated and scalar-normalized (an exact
congruence, so the constraint set is unchanged); the residual verification
applies to these canonical blocks.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import NSTATE, GainMatrix, ModelError, SystemMatrices
from .sdp import LmiBlock, SdpError, solve_sdp

log = logging.getLogger(__name__)

VAR_NAMES = ("yf11", "yf12", "yf22", "yv11", "yv12", "yv22",
             "l1", "l2", "l3", "l4", "gamma_alpha", "gamma_beta", "kappa_l")
NVAR = len(VAR_NAMES)
IG_ALPHA, IG_BETA, IK_L = 10, 11, 12


class SynthesisError(RuntimeError):
    pass


def _y_basis():
    """Symmetric basis of the block-diagonal (2+2) Y structure."""
    basis = []
    for (i, j) in ((0, 0), (0, 1), (1, 1), (2, 2), (2, 3), (3, 3)):
        b = np.zeros((NSTATE, NSTATE))
        b[i, j] = b[j, i] = 1.0
        basis.append(b)
    return basis


def _l_basis():
    """Basis of the structured 2x4 feedback block."""
    basis = []
    for (r, c) in ((0, 0), (0, 1), (1, 2), (1, 3)):
        b = np.zeros((2, NSTATE))
        b[r, c] = 1.0
        basis.append(b)
    return basis


def _tile(block, n):
    """I_n \\otimes block."""
    br, bc = block.shape
    out = np.zeros((br * n, bc * n))
    for i in range(n):
        out[br * i:br * (i + 1), bc * i:bc * (i + 1)] = block
    return out


@dataclass
class SynthesisProblem:
    """One LMI instance: system data plus fixed multipliers and weights."""

    sys: SystemMatrices
    kappa_y: float = 1e6
    tau: float = 1e-6      # disturbance-ball multiplier (the tau S_bar block)
    tau_h: float = 1.0     # state-uncertainty multiplier
    tau_g: float = 2e-7    # disturbance-uncertainty multiplier
    tau_v: float = 1.0     # ellipsoid decay multiplier
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    alpha_bar: float = 1.0
    beta_bar: float = 1.0
    eps_pd: float = 1e-8   # strictness margin for Y > 0
    slack: float = 1e-10   # strictness margin for the scalar bounds
    y_floor: float = 0.05  # geometric floor on Y; with |L|^2 <= kappa_l this
                           # caps the recovered gain at sqrt(kappa_l)/y_floor

    def __post_init__(self):
        for name in ("kappa_y", "tau", "tau_h", "tau_g", "tau_v",
                     "c1", "c2", "c3", "alpha_bar", "beta_bar"):
            if getattr(self, name) <= 0.0:
                raise SynthesisError(f"SynthesisProblem.{name} must be positive")


@dataclass
class SynthesisResult:
    """Feasible point of the synthesis LMI with recovered gain and bounds."""

    problem: SynthesisProblem
    x: np.ndarray            # raw decision vector (VAR_NAMES order)
    y_block: np.ndarray      # 4x4 shared Y block
    l_block: np.ndarray      # 2x4 shared L block
    y: np.ndarray            # 4N x 4N block-diagonal Y
    l: np.ndarray            # 2N x 4N block-diagonal L
    gamma_alpha: float
    gamma_beta: float
    kappa_l: float
    alpha: float
    beta: float
    k_gain: GainMatrix
    p_lyap: np.ndarray       # (kappa_y * Y)^{-1}
    residuals: dict          # block name -> max eigenvalue after substitution
    objective: float
    sdp_iterations: int = 0
    sdp_gap: float = 0.0

    @property
    def p_norm(self):
        return float(np.linalg.norm(self.p_lyap, 2))

    def summary(self):
        lines = [
            "synthesis result",
            f"  alpha = {self.alpha:.6g}  (cap {self.problem.alpha_bar:.6g})",
            f"  beta  = {self.beta:.6g}  (cap {self.problem.beta_bar:.6g})",
            f"  kappa_l = {self.kappa_l:.6g}",
            f"  gains: k_omega={self.k_gain.k_omega:.6g} k_Omega={self.k_gain.k_Omega:.6g}"
            f" k_v={self.k_gain.k_v:.6g} k_e={self.k_gain.k_e:.6g}",
            f"  |P|_2 = {self.p_norm:.6g}",
            f"  hyper: kappa_y={self.problem.kappa_y:.3g} tau={self.problem.tau:.3g}"
            f" tau_h={self.problem.tau_h:.3g} tau_g={self.problem.tau_g:.3g}"
            f" tau_v={self.problem.tau_v:.3g}",
            f"  objective = {self.objective:.6g}",
            "  residual eigenvalues:",
        ]
        for name, val in self.residuals.items():
            lines.append(f"    {name}: {val:.3e}")
        return "\n".join(lines)


def _equilibrate(f0, fis, partition, xhat, sweeps=3):
    """Symmetric diagonal scaling balancing the block rows (exact congruence).

    xhat carries anticipated variable magnitudes so rows dominated by large
    scalar variables (the connective bounds) end up O(1) at the solution,
    keeping the residual eigenvalue checks meaningful in float64.
    """
    edges = np.cumsum([0] + partition)
    d = np.ones(f0.shape[0])
    base = np.abs(f0)
    for xk, f in zip(xhat, fis):
        base = np.maximum(base, abs(xk) * np.abs(f))
    for _ in range(sweeps):
        mag = base * d[:, None] * d[None, :]
        for r in range(len(partition)):
            rows = slice(edges[r], edges[r + 1])
            peak = mag[rows, :].max()
            if peak > 0.0:
                d[rows] /= np.sqrt(peak)
    return d


def _anticipated_magnitudes(problem: SynthesisProblem):
    """Rough solution-scale estimates for the decision variables.

    Only used for numerical balancing; Y/L/kappa_l live near unity while the
    inverse-square connective bounds are pinned far above it by the Schur
    couplings of the main inequality.
    """
    sys = problem.sys
    xhat = np.ones(NVAR)
    g2 = float(np.linalg.norm(sys.g_mat, 2)) ** 2
    s_min = float(np.linalg.eigvalsh(sys.s_bar_d)[0])
    if g2 > 0.0 and s_min > 0.0:
        xhat[IG_BETA] = max(1.0 / problem.beta_bar ** 2,
                            4.0 * g2 / (problem.tau * s_min * problem.tau_g))
    h2 = float(np.linalg.norm(sys.h_mat, 2)) ** 2
    if h2 > 0.0:
        xhat[IG_ALPHA] = max(1.0 / problem.alpha_bar ** 2,
                             4.0 * problem.kappa_y * h2 / problem.tau_h)
    return xhat


def assemble_lmi(problem: SynthesisProblem):
    """Affine constraint blocks of the synthesis program.

    Returns (blocks, objective): the main matrix inequality (6x6 block rows
    [state, state-unc, disturbance, dist-unc, consensus-x, consensus-d]),
    the Schur-form gain bound, strict positivity of Y, and the two scalar
    connective-bound constraints, all affine in the NVAR decision variables
    and canonically equilibrated/normalized.
    """
    sys = problem.sys
    n = sys.n_ders
    ns, nd = NSTATE * n, 2 * n
    ky, tau, tau_h, tau_g, tau_v = (problem.kappa_y, problem.tau, problem.tau_h,
                                    problem.tau_g, problem.tau_v)
    a_mat, b_mat, e_mat = sys.a_d, sys.b_d, sys.e_d
    h_mat, g_mat, s_bar = sys.h_mat, sys.g_mat, sys.s_bar_d

    dim = 5 * ns + nd
    o1, o2, o3, o4, o5, o6 = 0, ns, 2 * ns, 2 * ns + nd, 3 * ns + nd, 4 * ns + nd
    partition = [ns, ns, nd, ns, ns, ns]

    f0 = np.zeros((dim, dim))
    fis = np.zeros((NVAR, dim, dim))

    def put(mat, f, ro, co):
        f[ro:ro + mat.shape[0], co:co + mat.shape[1]] += mat
        if ro != co:
            f[co:co + mat.shape[1], ro:ro + mat.shape[0]] += mat.T

    # constants
    put(np.eye(ns), f0, o1, o5)
    put(np.eye(ns), f0, o1, o6)
    put(-tau * s_bar, f0, o3, o3)
    put(g_mat.T, f0, o3, o4)
    put(-tau_h * np.eye(ns), f0, o5, o5)
    put(-tau_g * np.eye(ns), f0, o6, o6)

    # Y variables
    for k, bk in enumerate(_y_basis()):
        bk_d = _tile(bk, n)
        nblk = ky * (bk_d @ a_mat.T + a_mat @ bk_d + tau_v * bk_d)
        put(0.5 * (nblk + nblk.T), fis[k], o1, o1)
        put(ky * bk_d @ h_mat.T, fis[k], o1, o2)
        put(bk_d @ e_mat, fis[k], o1, o3)

    # L variables
    for k, lk in enumerate(_l_basis()):
        lk_d = _tile(lk, n)
        nblk = ky * (lk_d.T @ b_mat.T + b_mat @ lk_d)
        put(0.5 * (nblk + nblk.T), fis[6 + k], o1, o1)

    # scalar variables
    put(-tau_h * np.eye(ns), fis[IG_ALPHA], o2, o2)
    put(-tau_g * np.eye(ns), fis[IG_BETA], o4, o4)

    xhat = _anticipated_magnitudes(problem)
    d = _equilibrate(f0, fis, partition, xhat)
    f0 = f0 * d[:, None] * d[None, :]
    fis = fis * d[None, :, None] * d[None, None, :]
    blocks = [LmiBlock(f0, fis, "main")]

    # gain bound: [[-kappa_l I, L'], [L, -I]] <= 0
    gb_dim = ns + nd
    g0 = np.zeros((gb_dim, gb_dim))
    g0[ns:, ns:] = -np.eye(nd)
    gfis = np.zeros((NVAR, gb_dim, gb_dim))
    for k, lk in enumerate(_l_basis()):
        lk_d = _tile(lk, n)
        gfis[6 + k, ns:, :ns] = lk_d
        gfis[6 + k, :ns, ns:] = lk_d.T
    gfis[IK_L, :ns, :ns] = -np.eye(ns)
    blocks.append(LmiBlock(g0, gfis, "gain_bound"))

    # Y >= max(eps, y_floor) I
    y0 = max(problem.eps_pd, problem.y_floor) * np.eye(ns)
    yfis = np.zeros((NVAR, ns, ns))
    for k, bk in enumerate(_y_basis()):
        yfis[k] = -_tile(bk, n)
    blocks.append(LmiBlock(y0, yfis, "y_pos"))

    # scalar connective-bound constraints
    for name, idx, cap in (("alpha_cap", IG_ALPHA, problem.alpha_bar),
                           ("beta_cap", IG_BETA, problem.beta_bar)):
        s0 = np.array([[1.0 / cap ** 2 + problem.slack]])
        sfis = np.zeros((NVAR, 1, 1))
        sfis[idx, 0, 0] = -1.0
        blocks.append(LmiBlock(s0, sfis, name))

    # kappa_l >= 0 keeps the Schur block meaningful
    k0 = np.zeros((1, 1))
    kfis = np.zeros((NVAR, 1, 1))
    kfis[IK_L, 0, 0] = -1.0
    blocks.append(LmiBlock(k0, kfis, "kappa_l_pos"))

    # scalar normalization per block at the anticipated solution scale
    # (same constraint set, entries O(1) where it matters)
    for blk in blocks:
        mag = np.abs(blk.f0).max(initial=0.0)
        for xk, f in zip(xhat, blk.fis):
            mag = max(mag, abs(xk) * np.abs(f).max(initial=0.0))
        if mag > 0.0:
            blk.f0 /= mag
            blk.fis /= mag

    objective = np.zeros(NVAR)
    objective[IG_ALPHA] = problem.c1
    objective[IG_BETA] = problem.c2
    objective[IK_L] = problem.c3
    return blocks, objective


def verify_result(blocks, x):
    """Independent residual pass: substitute x and take max eigenvalues."""
    return {blk.name: blk.residual_eig(x) for blk in blocks}


def recover_gain(y_block, l_block, n_ders, cond_limit=1e12):
    """K = L Y^{-1} for the shared blocks; structure survives by construction.

    Raises on ill-conditioned Y; warns (does not fail) when a recovered gain
    is non-negative.
    """
    cond = np.linalg.cond(y_block)
    if cond > cond_limit:
        raise SynthesisError(f"Y block condition number {cond:.3e} exceeds {cond_limit:.0e}")
    k_blk = l_block @ np.linalg.inv(y_block)
    off = max(abs(k_blk[0, 2]), abs(k_blk[0, 3]), abs(k_blk[1, 0]), abs(k_blk[1, 1]))
    scale = max(1.0, np.abs(k_blk).max())
    if off > 1e-10 * scale:
        raise SynthesisError(f"recovered gain violates the feedback sparsity (off={off:.3e})")
    gains = (k_blk[0, 0], k_blk[0, 1], k_blk[1, 2], k_blk[1, 3])
    if any(gv >= 0.0 for gv in gains):
        log.warning("recovered gain has non-negative entries: %s", gains)
    return GainMatrix(*gains, n_ders=n_ders, allow_nonnegative=True)


def _lyap2(a, q):
    kr = np.kron(np.eye(2), a) + np.kron(a, np.eye(2))
    y = np.linalg.solve(kr, -q.reshape(-1))
    y = y.reshape(2, 2)
    return 0.5 * (y + y.T)


def _initial_point(problem: SynthesisProblem, blocks):
    """Crude strictly feasible point, if one is easy to construct.

    Builds per-channel Lyapunov Y blocks for a few moderate negative gain
    candidates, picks the connective-bound scalars by escalation, and keeps
    the first candidate that is strictly interior for every block.  Returns
    None when nothing sticks (the solver then cold-starts).
    """
    p0 = problem.sys.ders[0]
    tc, kk, kp, xi = p0.tau_c, p0.k, p0.kappa, p0.xi
    # strict margin over the tau_v/2 decay the N block demands
    shift = 0.501 * problem.tau_v + 1e-4
    for gains in ((-0.1, -0.05, -0.1, -0.05), (-0.3, -0.1, -0.3, -0.1),
                  (-0.02, -0.01, -0.02, -0.01), (-0.6, -0.3, -0.6, -0.3)):
        kw, ko, kv, ke = gains
        af = np.array([[(kw - 1.0) / tc, (1.0 + ko) / tc], [-1.0 / kk, 0.0]])
        av = np.array([[(kv - 1.0) / tc, (1.0 + ke) / tc], [-xi / kp, 0.0]])
        af_s = af + shift * np.eye(2)
        av_s = av + shift * np.eye(2)
        if max(np.real(np.linalg.eigvals(af_s)).max(),
               np.real(np.linalg.eigvals(av_s)).max()) >= 0.0:
            continue
        try:
            yf = _lyap2(af_s, np.eye(2))
            yv = _lyap2(av_s, np.eye(2))
        except np.linalg.LinAlgError:
            continue
        if min(np.linalg.eigvalsh(yf)[0], np.linalg.eigvalsh(yv)[0]) <= 0.0:
            continue
        y0 = np.zeros((NSTATE, NSTATE))
        y0[:2, :2], y0[2:, 2:] = yf, yv
        k0 = np.array([[kw, ko, 0.0, 0.0], [0.0, 0.0, kv, ke]])
        xhat = _anticipated_magnitudes(problem)
        for y_scale in (1.0, 10.0, 0.1, 100.0):
            yb = y_scale * y0
            lb = k0 @ yb
            x = np.zeros(NVAR)
            x[0], x[1], x[2] = yb[0, 0], yb[0, 1], yb[1, 1]
            x[3], x[4], x[5] = yb[2, 2], yb[2, 3], yb[3, 3]
            x[6], x[7], x[8], x[9] = lb[0, 0], lb[0, 1], lb[1, 2], lb[1, 3]
            x[IK_L] = 4.0 * np.linalg.norm(lb, 2) ** 2 + 1.0
            for boost in (1.0, 10.0, 100.0):
                x[IG_ALPHA] = max(boost * xhat[IG_ALPHA], 2.0 / problem.alpha_bar ** 2)
                x[IG_BETA] = max(boost * xhat[IG_BETA], 2.0 / problem.beta_bar ** 2)
                if all(blk.residual_eig(x) < -1e-9 for blk in blocks):
                    return x
    return None


def solve_problem(problem: SynthesisProblem, tol_gap=1e-8, max_iter=200):
    """Solve one fixed-multiplier instance.

    Returns a SynthesisResult or raises SynthesisError with the SDP status
    if the instance is infeasible / numerically unsolvable.
    """
    blocks, objective = assemble_lmi(problem)
    # internal variable scaling so the solver sees O(1) coefficients
    scale = np.ones(NVAR)
    for k in range(NVAR):
        peak = max(np.abs(blk.fis[k]).max(initial=0.0) for blk in blocks)
        if peak > 0.0:
            scale[k] = 1.0 / peak
    scaled = [LmiBlock(blk.f0.copy(), blk.fis * scale[:, None, None], blk.name)
              for blk in blocks]
    c_int = objective * scale
    c_int /= max(1.0, np.abs(c_int).max())  # one scalar: argmin unchanged
    x_init = _initial_point(problem, blocks)
    res = solve_sdp(scaled, c_int, tol_gap=tol_gap, max_iter=max_iter,
                    x0=None if x_init is None else x_init / scale)
    if not res.ok:
        raise SynthesisError(f"SDP {res.status}: {res.message or 'no feasible point found'}")
    x = scale * res.x

    residuals = verify_result(blocks, x)
    worst = max(residuals.values())
    if worst > 1e-7:
        raise SynthesisError(f"verification failed: max residual eigenvalue {worst:.3e}")

    y_blk = np.zeros((NSTATE, NSTATE))
    for k, bk in enumerate(_y_basis()):
        y_blk += x[k] * bk
    l_blk = np.zeros((2, NSTATE))
    for k, lk in enumerate(_l_basis()):
        l_blk += x[6 + k] * lk
    n = problem.sys.n_ders
    gain = recover_gain(y_blk, l_blk, n)
    y_full = _tile(y_blk, n)
    p_lyap = np.linalg.inv(problem.kappa_y * y_full)
    p_lyap = 0.5 * (p_lyap + p_lyap.T)
    g_a, g_b, k_l = x[IG_ALPHA], x[IG_BETA], x[IK_L]
    return SynthesisResult(
        problem=problem, x=x, y_block=y_blk, l_block=l_blk,
        y=y_full, l=_tile(l_blk, n),
        gamma_alpha=float(g_a), gamma_beta=float(g_b), kappa_l=float(k_l),
        alpha=float(1.0 / np.sqrt(g_a)), beta=float(1.0 / np.sqrt(g_b)),
        k_gain=gain, p_lyap=p_lyap, residuals=residuals,
        objective=float(objective @ x),
        sdp_iterations=res.iterations, sdp_gap=res.gap)


DEFAULT_GRIDS = {
    "kappa_y": (1e5, 1e6, 1e7),
    "tau": (1e-6,),
    "tau_h": (1.0,),
    "tau_g": (2e-7,),
    "tau_v": (0.5, 2.0),
}


@dataclass
class SearchReport:
    best: SynthesisResult
    attempts: list = field(default_factory=list)  # (params dict, status string)

    def diagnostics(self):
        out = []
        for params, status in self.attempts:
            tag = " ".join(f"{k}={v:.3g}" for k, v in params.items())
            out.append(f"{tag}: {status}")
        return "\n".join(out)


def search_hyperparameters(sys, grids=None, weights=(1.0, 1.0, 1.0),
                           alpha_bar=1.0, beta_bar=1.0, **problem_kwargs):
    """Grid search over the fixed multipliers and the ellipsoid scaling.

    Solves the inner SDP at every grid point (lexicographic order over
    kappa_y, tau, tau_h, tau_g, tau_v) and returns the feasible result with
    the smallest spectral norm of the Lyapunov matrix, breaking ties by the
    smaller weighted objective and then by grid order.  Raises
    SynthesisError with per-point diagnostics when every point fails.
    """
    gr = dict(DEFAULT_GRIDS)
    gr.update(grids or {})
    for key, vals in gr.items():
        if len(tuple(vals)) == 0:
            raise SynthesisError(f"empty grid for {key}")
    c1, c2, c3 = weights
    attempts = []
    best = None
    best_key = None
    for ky, tau, th, tg, tv in itertools.product(
            gr["kappa_y"], gr["tau"], gr["tau_h"], gr["tau_g"], gr["tau_v"]):
        params = {"kappa_y": ky, "tau": tau, "tau_h": th, "tau_g": tg, "tau_v": tv}
        try:
            prob = SynthesisProblem(sys, kappa_y=ky, tau=tau, tau_h=th,
                                    tau_g=tg, tau_v=tv, c1=c1, c2=c2, c3=c3,
                                    alpha_bar=alpha_bar, beta_bar=beta_bar,
                                    **problem_kwargs)
            result = solve_problem(prob)
        except (SynthesisError, SdpError) as exc:
            attempts.append((params, f"infeasible ({exc})"))
            continue
        key = (result.p_norm, result.objective)
        attempts.append((params, f"feasible |P|={result.p_norm:.4g} "
                                 f"obj={result.objective:.4g} alpha={result.alpha:.4g}"))
        if best is None or key < best_key:
            best, best_key = result, key
    if best is None:
        detail = "\n".join(f"  {p}: {s}" for p, s in attempts)
        raise SynthesisError(f"all {len(attempts)} grid points infeasible:\n{detail}")
    return SearchReport(best, attempts)
