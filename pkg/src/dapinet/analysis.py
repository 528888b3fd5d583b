"""Stability, containment and performance verification.

Four independent checks certify a synthesised controller:

* connective stability over every interconnection corner the fundamental
  matrix can generate (exhaustive up to a link budget, seeded sampling past
  it), with structurally predicted consensus zero modes excluded;
* invariant-ellipsoid containment by seeded Monte-Carlo runs from the unit
  shell under capacity-ball disturbances;
* the equilibrium-referenced dissipation inequality along logged
  trajectories, evaluated by finite differences;
* robustness (supremum) and resilience (time-averaged) loss metrics plus
  power-sharing residuals, mirroring the comparison-table layout.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import NSTATE, GainMatrix, SystemMatrices, aggregate
from .network import connected_components
from .sim import TrajectoryLog, _Runtime

log = logging.getLogger(__name__)


class AnalysisError(RuntimeError):
    pass


@dataclass
class SupplyRate:
    """Weighting matrices of the dissipation inequality.

    Built from the Lyapunov matrix, feedback gain, multipliers and live
    uncertainty blocks; the disturbance-uncertainty weight on the d side is
    identically zero by convention.
    """

    q_mat: np.ndarray   # 2N x 2N
    s_mat: np.ndarray   # 4N x 4N (symmetrised)
    r_mat: np.ndarray   # 2N x 4N
    dr_mat: np.ndarray  # 2N x 4N
    ds_mat: np.ndarray  # 4N x 4N
    dq_mat: np.ndarray  # 2N x 2N, zero

    @classmethod
    def build(cls, sys: SystemMatrices, gain: GainMatrix, p_lyap, alpha, beta,
              tau, tau_h, tau_g, tau_v):
        p = np.asarray(p_lyap, dtype=float)
        a, b, e = sys.a_d, sys.b_d, sys.e_d
        kd = gain.full()
        ns = a.shape[0]
        s_mat = (-a.T @ p - kd.T @ b.T @ p - p @ a - p @ b @ kd
                 - tau_v * p + tau_h * np.eye(ns)
                 - tau_h * alpha ** 2 * sys.h_mat.T @ sys.h_mat)
        s_mat = 0.5 * (s_mat + s_mat.T)
        nd = e.shape[1]
        q_mat = (-tau * sys.s_bar_d - tau_g * np.eye(nd)
                 + tau_g * beta ** 2 * sys.g_mat.T @ sys.g_mat)
        q_mat = 0.5 * (q_mat + q_mat.T)
        return cls(q_mat=q_mat, s_mat=s_mat, r_mat=e.T @ p,
                   dr_mat=sys.delta_e.T @ p, ds_mat=2.0 * sys.delta_a.T @ p,
                   dq_mat=np.zeros((nd, nd)))

    def rhs(self, x_til, d_til):
        """Right side of the dissipation inequality at one (x~, d~) sample."""
        xs = x_til @ self.s_mat @ x_til
        return (-xs + d_til @ self.q_mat @ d_til + x_til @ self.ds_mat @ x_til
                + 2.0 * d_til @ (self.r_mat + self.dr_mat) @ x_til)


def structural_zero_modes(live_a, ders, gain: GainMatrix, tol=1e-12):
    """Structurally predicted nullity of the closed-loop state matrix.

    Frequency channel: one zero mode per connected component of the live
    frequency-coupling graph when the consensus feed-through 1 + k_Omega
    vanishes, none otherwise.  Voltage channel: one mode per DER whose
    voltage-deviation gain is zero or whose 1 + k_e vanishes (voltage
    consensus nullspace).  Computed from graph structure and gains only.
    """
    n = len(ders)
    freq = 0
    if abs(1.0 + gain.k_Omega) <= tol:
        adj = (np.asarray(live_a) > 0.0).astype(float)
        freq = len(connected_components(adj))
    volt = sum(1 for p in ders
               if p.xi == 0.0 or abs(1.0 + gain.k_e) <= tol)
    return freq + volt


@dataclass
class CornerReport:
    stable: bool
    worst_real: float
    worst_corner: tuple
    corners_checked: int
    exhaustive: bool
    zero_mode_mismatches: int


def connective_stability_check(sys: SystemMatrices, gain: GainMatrix,
                               alpha, beta, max_links=20, n_samples=512,
                               seed=0, zero_tol=1e-9) -> CornerReport:
    """Eigenvalue check of the closed loop over generated interconnections.

    Every corner matrix E in {0,1}^links generated by the fundamental
    interconnection matrix yields couplings alpha * e_ij on its active
    links; the corner passes when all eigenvalues of A_D + dA_D(E) + B_D K_D
    have real part below +1e-9, excluding the structurally predicted
    consensus zero modes.  beta is carried for reporting only: voltage
    couplings enter the disturbance path, not the state matrix.
    """
    coupling = sys.coupling
    ef = coupling.e_fund
    n = sys.n_ders
    links = [(i, j) for i in range(n) for j in range(i + 1, n) if ef[i, j] > 0.0]
    exhaustive = len(links) <= max_links
    if exhaustive:
        corner_iter = itertools.product((0.0, 1.0), repeat=len(links))
        total = 2 ** len(links)
    else:
        rng = np.random.default_rng(seed)
        corner_iter = (tuple(rng.integers(0, 2, len(links)).astype(float))
                       for _ in range(n_samples))
        total = n_samples
        log.warning("corner budget exceeded (%d links): sampled %d corners, "
                    "not exhaustive", len(links), n_samples)

    kd = gain.full()
    worst = -np.inf
    worst_corner = None
    mismatches = 0
    for corner in corner_iter:
        live = np.zeros((n, n))
        for (i, j), on in zip(links, corner):
            live[i, j] = live[j, i] = alpha * on
        cp = coupling.copy()
        cp.a_live = live
        cp.b_live = np.zeros((n, n))
        corner_sys = aggregate(sys.ders, cp)
        a_cl = corner_sys.a_d + corner_sys.delta_a + corner_sys.b_d @ kd
        eigs = np.linalg.eigvals(a_cl)
        predicted = structural_zero_modes(live, sys.ders, gain)
        near_zero = int(np.sum(np.abs(eigs) < zero_tol))
        if near_zero != predicted:
            mismatches += 1
        keep = np.abs(eigs) >= zero_tol
        w = float(np.max(np.real(eigs[keep]))) if np.any(keep) else -np.inf
        if w > worst:
            worst, worst_corner = w, corner
    return CornerReport(stable=(worst < 1e-9) and mismatches == 0,
                        worst_real=worst, worst_corner=worst_corner,
                        corners_checked=total, exhaustive=exhaustive,
                        zero_mode_mismatches=mismatches)


@dataclass
class EllipsoidReport:
    sup_v: float
    passed: bool
    n_trials: int
    horizon: float


def ellipsoid_containment(p_lyap, sys: SystemMatrices, gain: GainMatrix,
                          n_trials=200, horizon=4.0, dt=1e-3, seed=0,
                          tol=1e-3) -> EllipsoidReport:
    """Monte-Carlo invariance check of {x : x'Px <= 1}.

    Trials start on the unit shell and run the closed loop (live couplings
    of sys) under worst-case constant disturbances saturating the aggregate
    capacity ball; passes when sup_t V never exceeds 1 + tol.  All trials
    integrate simultaneously (one matrix RK4 per step) and the sampler is
    a fixed-seed generator, so the check is reproducible.
    """
    p = np.asarray(p_lyap, dtype=float)
    ns = p.shape[0]
    chol = np.linalg.cholesky(0.5 * (p + p.T))
    a_cl = sys.a_d + sys.delta_a + sys.b_d @ gain.full()
    e_cl = sys.e_d + sys.delta_e
    s_bar = sys.s_bar_d

    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((ns, n_trials))
    v0 = np.einsum("in,in->n", xs, p @ xs)
    xs /= np.sqrt(v0)[None, :]
    ds = rng.standard_normal((s_bar.shape[0], n_trials))
    dnorm = np.einsum("in,in->n", ds, s_bar @ ds)
    ds /= np.sqrt(dnorm)[None, :]

    forcing = e_cl @ ds
    sup_v = 1.0
    steps = int(round(horizon / dt))
    x = xs.copy()
    for _ in range(steps):
        k1 = a_cl @ x + forcing
        k2 = a_cl @ (x + 0.5 * dt * k1) + forcing
        k3 = a_cl @ (x + 0.5 * dt * k2) + forcing
        k4 = a_cl @ (x + dt * k3) + forcing
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        v = np.sum((chol.T @ x) ** 2, axis=0)
        vmax = float(v.max())
        if vmax > sup_v:
            sup_v = vmax
    return EllipsoidReport(sup_v=sup_v, passed=sup_v <= 1.0 + tol,
                           n_trials=n_trials, horizon=horizon)


@dataclass
class DissipativityReport:
    max_violation: float        # max over samples of (vdot - rhs)
    max_relative: float         # max of (vdot - rhs)/max(1, |rhs|)
    passed: bool
    n_samples: int
    fd_disagreement: float


def dissipativity_check(times, x_traj, d_traj, supply: SupplyRate, p_lyap,
                        x_star, d_star, rel_tol=1e-6) -> DissipativityReport:
    """Dissipation inequality along one sampled trajectory window.

    V-dot is taken by central finite differences of V(x - x*); a coarse
    sampling is detected by comparing single- and double-stride differences.
    The inequality passes when every interior sample satisfies
    vdot <= rhs + rel_tol * max(1, |rhs|).
    """
    times = np.asarray(times, dtype=float)
    x_til = np.asarray(x_traj, dtype=float) - np.asarray(x_star)[None, :]
    d_til = np.asarray(d_traj, dtype=float) - np.asarray(d_star)[None, :]
    if len(times) < 5:
        raise AnalysisError("dissipativity check needs at least 5 samples")
    p = np.asarray(p_lyap, dtype=float)
    v = np.einsum("si,ij,sj->s", x_til, p, x_til)
    dt = times[1] - times[0]
    vdot = (v[2:] - v[:-2]) / (2.0 * dt)          # interior samples 1..S-2
    vdot2 = (v[4:] - v[:-4]) / (4.0 * dt)         # interior samples 2..S-3
    scale = max(1.0, float(np.max(np.abs(vdot))))
    fd_err = float(np.max(np.abs(vdot[1:-1] - vdot2))) / scale
    if fd_err > 1e-4:
        raise AnalysisError(
            f"trajectory too coarse for finite differences (disagreement {fd_err:.2e})")

    xs = x_til[1:-1]
    dsm = d_til[1:-1]
    rhs = (-np.einsum("si,ij,sj->s", xs, supply.s_mat, xs)
           + np.einsum("si,ij,sj->s", dsm, supply.q_mat, dsm)
           + np.einsum("si,ij,sj->s", xs, 0.5 * (supply.ds_mat + supply.ds_mat.T), xs)
           + 2.0 * np.einsum("si,ij,sj->s", dsm, supply.r_mat + supply.dr_mat, xs))
    violation = vdot - rhs
    denom = np.maximum(1.0, np.abs(rhs))
    rel = violation / denom
    max_rel = float(np.max(rel))
    return DissipativityReport(max_violation=float(np.max(violation)),
                               max_relative=max_rel,
                               passed=max_rel <= rel_tol,
                               n_samples=len(vdot), fd_disagreement=fd_err)


def terminal_equilibrium(ders, coupling, grid, gain: GainMatrix, dapi_on,
                         log_or_state, t_ref):
    """Closed-loop equilibrium of the active configuration.

    Seeds from the trajectory's terminal state and refines with one linear
    solve of the full steady-state system (states plus angles, least-squares
    to fix the angle-reference gauge).  Returns (x_star (4N), delta_star,
    d_star (2N)).
    """
    rt = _Runtime(ders, coupling, grid, gain, dapi_on)
    n = len(ders)
    if isinstance(log_or_state, TrajectoryLog):
        lg = log_or_state
        delta_t = lg.series("delta")[-1]
        x_t = np.zeros(NSTATE * n)
        x_t[0::NSTATE] = lg.series("domega")[-1]
        x_t[1::NSTATE] = lg.series("Omega")[-1]
        x_t[2::NSTATE] = lg.series("dv")[-1]
        x_t[3::NSTATE] = lg.series("e")[-1]
    else:
        delta_t, x_t = log_or_state
    z_t = np.concatenate([delta_t, x_t])

    # rhs is affine in z at fixed t: one least-squares Newton step is exact
    f0 = rt.rhs(t_ref, z_t)
    m = z_t.size
    jac = np.zeros((m, m))
    h = 1e-6
    for k in range(m):
        dz = np.zeros(m)
        dz[k] = h
        jac[:, k] = (rt.rhs(t_ref, z_t + dz) - rt.rhs(t_ref, z_t - dz)) / (2.0 * h)
    step, *_ = np.linalg.lstsq(jac, -f0, rcond=None)
    z_star = z_t + step
    resid = float(np.max(np.abs(rt.rhs(t_ref, z_star))))
    if resid > 1e-8:
        log.warning("equilibrium refinement residual %.2e", resid)
    delta_star, x_star = z_star[:n], z_star[n:]
    d_star = rt.disturbance(delta_star, x_star, t_ref)
    return x_star, delta_star, d_star


@dataclass
class MetricsReport:
    windows: list                    # [(label, t0, t1), ...]
    loss_ro_freq: dict               # label -> value (max over DERs)
    loss_re_freq: dict
    loss_ro_volt: dict
    loss_re_volt: dict
    sharing_err_p: dict = field(default_factory=dict)
    sharing_err_q: dict = field(default_factory=dict)

    AVG = "Average"

    def rows(self):
        labels = [w[0] for w in self.windows] + [self.AVG]
        for lab in labels:
            yield (lab, self.loss_ro_freq[lab], self.loss_re_freq[lab],
                   self.loss_ro_volt[lab], self.loss_re_volt[lab])

    def to_csv(self, path, scheme=""):
        with open(path, "w") as fh:
            fh.write("window,signal,scheme,loss_ro,loss_re\n")
            for lab, ro_f, re_f, ro_v, re_v in self.rows():
                fh.write(f"{lab},frequency,{scheme},{ro_f:.17g},{re_f:.17g}\n")
                fh.write(f"{lab},voltage,{scheme},{ro_v:.17g},{re_v:.17g}\n")


def loss_metrics(logs, windows, omega_star, v_star) -> MetricsReport:
    """Supremum and time-averaged loss metrics per window.

    logs maps window label -> TrajectoryLog (one run may serve several
    windows).  Metrics are |x* - x| / |x| with x the actual frequency or
    voltage; each window reports the max over DERs, and the Average row is
    the arithmetic mean over the listed windows.
    """
    ro_f, re_f, ro_v, re_v = {}, {}, {}, {}
    for label, t0, t1 in windows:
        lg = logs[label]
        w = lg.window(t0, t1)
        t = lg.times[w]
        if len(t) < 2:
            raise AnalysisError(f"empty metrics window {label!r}")
        span = t[-1] - t[0]
        for tag, dev, ref, ro, re in (
                ("f", lg.series("domega")[w], omega_star, ro_f, re_f),
                ("v", lg.series("dv")[w], v_star, ro_v, re_v)):
            rel = np.abs(dev / (ref + dev))
            ro[label] = float(rel.max())
            re[label] = float(np.max(np.trapezoid(rel, t, axis=0) / span))
    for d in (ro_f, re_f, ro_v, re_v):
        d[MetricsReport.AVG] = float(np.mean([d[w[0]] for w in windows]))
    return MetricsReport(list(windows), ro_f, re_f, ro_v, re_v)


def sharing_residuals(lg: TrajectoryLog, t0, t1, ders, components):
    """Steady-state power-sharing residuals over the last 10% of a window.

    Within each connected component, the droop-weighted outputs m_i P_i
    should agree; the residual is the max pairwise gap normalised by the
    largest member.  The reactive analogue uses n_i Q_i.
    """
    w = lg.window(t0 + 0.9 * (t1 - t0), t1)
    p = lg.series("dp")[w] + np.array([d.p_star for d in ders])[None, :]
    q = lg.series("dq")[w] + np.array([d.q_star for d in ders])[None, :]
    m = np.array([d.m for d in ders])
    nn = np.array([d.n for d in ders])

    def residual(weighted):
        worst = 0.0
        for comp in components:
            if len(comp) < 2:
                continue
            vals = weighted[:, comp]
            spread = vals.max(axis=1) - vals.min(axis=1)
            denom = np.maximum(np.abs(vals).max(axis=1), 1e-300)
            worst = max(worst, float((spread / denom).max()))
        return worst

    return residual(m[None, :] * p), residual(nn[None, :] * q)
