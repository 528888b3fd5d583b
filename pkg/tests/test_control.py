import numpy as np
import pytest

from dapinet.control import (
    AttackEvent,
    apply_attack,
    dapi_consensus_terms,
    delta_derivative,
    feedback,
    state_derivative,
)
from dapinet.model import (
    NSTATE,
    DerParams,
    DerState,
    Disturbance,
    GainMatrix,
    ModelError,
    aggregate,
    make_coupling,
)
from dapinet.network import make_grid

from conftest import der_params_5, LINKS5


def eq22_oracle(x, d, du, ders, lap_a, lap_b):
    """Direct channel-form evaluation of the compact dynamics (independent
    of the aggregated-matrix path)."""
    n = len(ders)
    dw, om = x[0::NSTATE], x[1::NSTATE]
    dv, ec = x[2::NSTATE], x[3::NSTATE]
    dp, dq = d[0::2], d[1::2]
    duw, duv = du[0::2], du[1::2]
    m = np.array([p.m for p in ders])
    nn = np.array([p.n for p in ders])
    tc = np.array([p.tau_c for p in ders])
    k = np.array([p.k for p in ders])
    kp = np.array([p.kappa for p in ders])
    xi = np.array([p.xi for p in ders])
    qinv = np.array([1.0 / p.q_star for p in ders])
    out = np.zeros_like(x)
    out[0::NSTATE] = (-dw + om + duw - m * dp) / tc
    out[1::NSTATE] = (-dw - lap_a @ om) / k
    out[2::NSTATE] = (-dv + ec + duv - nn * dq) / tc
    out[3::NSTATE] = (-xi * dv - qinv * (lap_b @ dq)) / kp
    return out


def grid5():
    lines = [(0, 1, 200.0), (2, 3, 200.0), (1, 2, 150.0), (3, 4, 150.0), (4, 0, 150.0)]
    return make_grid(5, lines, s_bar=np.full(5, 10.0))


class TestStateDerivative:
    def test_unforced_equilibrium(self, sys5):
        xdot = state_derivative(np.zeros(20), np.zeros(10), np.zeros(10), sys5)
        assert np.all(xdot == 0.0)

    def test_matches_channel_form(self, ders5, sys5, rng):
        for _ in range(5):
            x = rng.standard_normal(20)
            d = rng.standard_normal(10)
            du = rng.standard_normal(10)
            got = state_derivative(x, d, du, sys5)
            want = eq22_oracle(x, d, du, ders5, sys5.lap_a, sys5.lap_b)
            assert np.max(np.abs(got - want)) < 1e-10

    def test_droop_only_equilibrium_point(self, ders5, sys5):
        # with Om, e, du frozen at zero, dw = -m dp makes the dw rows vanish
        dp = np.full(5, 0.3)
        x = np.zeros(20)
        x[0::NSTATE] = -np.array([p.m for p in ders5]) * dp
        d = np.zeros(10)
        d[0::2] = dp
        xdot = state_derivative(x, d, np.zeros(10), sys5)
        assert np.max(np.abs(xdot[0::NSTATE])) < 1e-15

    def test_dapi_equilibrium_zero_frequency(self):
        # solve the closed linear equilibrium 0 = A_cl x* + E_cl d for a
        # constant uniform dp with a dense linear-solver oracle; dw* vanishes
        # and the consensus variables agree (droop errors fully absorbed)
        ders = [DerParams(m=1e-4, n=2e-4, q_star=1.0) for _ in range(5)]
        cp = make_coupling(5, LINKS5)
        sys = aggregate(ders, cp)
        a_cl = sys.a_d + sys.delta_a
        e_cl = sys.e_d + sys.delta_e
        d = np.zeros(10)
        d[0::2] = 0.25
        x_star = np.linalg.solve(a_cl, -e_cl @ d)
        assert np.max(np.abs(x_star[0::NSTATE])) < 1e-12
        om = x_star[1::NSTATE]
        assert np.max(np.abs(om - om[0])) < 1e-12

    def test_dapi_equilibrium_frequency_sum_zero(self, ders5, sys5):
        # heterogeneous droop gains: individual dw* need the network loop to
        # vanish, but the consensus rows force their sum to zero exactly
        a_cl = sys5.a_d + sys5.delta_a
        e_cl = sys5.e_d + sys5.delta_e
        d = np.zeros(10)
        d[0::2] = np.array([0.2, 0.3, 0.1, 0.25, 0.15])
        x_star = np.linalg.solve(a_cl, -e_cl @ d)
        assert abs(np.sum(x_star[0::NSTATE])) < 1e-12

    def test_delta_derivative(self, rng):
        x = rng.standard_normal(20)
        assert np.array_equal(delta_derivative(x), x[0::NSTATE])


class TestConsensusTerms:
    def test_consensus_fixed_point(self):
        ders = [DerParams(m=1e-4, n=2e-4, q_star=1.0) for _ in range(3)]
        cp = make_coupling(3, [(0, 1), (1, 2)])
        states = [DerState(omega_c=0.5) for _ in range(3)]
        dists = [Disturbance() for _ in range(3)]
        om_dot, _ = dapi_consensus_terms(states, dists, cp, ders)
        assert np.allclose(om_dot, 0.0)

    def test_two_der_hand_value(self):
        ders = [DerParams(m=1e-4, n=2e-4, k=1.0, q_star=1.0) for _ in range(2)]
        cp = make_coupling(2, [(0, 1)], a=1.0, b=0.0)
        states = [DerState(omega_c=1.0), DerState(omega_c=0.0)]
        dists = [Disturbance(), Disturbance()]
        om_dot, _ = dapi_consensus_terms(states, dists, cp, ders)
        assert np.allclose(om_dot, [-1.0, 1.0])

    def test_pure_voltage_integrator(self):
        ders = [DerParams(m=1e-4, n=2e-4, xi=2.0, kappa=4.0, q_star=1.0)
                for _ in range(2)]
        cp = make_coupling(2, [(0, 1)], a=1.0, b=0.0)
        states = [DerState(d_v=0.6), DerState(d_v=-0.2)]
        dists = [Disturbance(d_q=5.0), Disturbance(d_q=-3.0)]
        _, e_dot = dapi_consensus_terms(states, dists, cp, ders)
        assert np.allclose(e_dot, [-2.0 * 0.6 / 4.0, 2.0 * 0.2 / 4.0])


class TestFeedback:
    def test_zero_gain(self, rng):
        g = GainMatrix.zero(4)
        assert np.all(feedback(rng.standard_normal(16), g) == 0.0)

    def test_unit_probe_sparsity(self):
        g = GainMatrix(-0.5, -0.3, -0.2, -0.1, n_ders=3)
        x = np.zeros(12)
        x[0] = 1.0  # dw of DER 0
        du = feedback(x, g)
        want = np.zeros(6)
        want[0] = -0.5
        assert np.allclose(du, want)

    def test_matches_dense_multiply(self, rng):
        g = GainMatrix(-0.5, -0.3, -0.2, -0.1, n_ders=5)
        kd = g.full()
        for _ in range(5):
            x = rng.standard_normal(20)
            assert np.max(np.abs(feedback(x, g) - kd @ x)) < 1e-12


class TestAttacks:
    def test_dos_all_links_kills_laplacians(self, ders5, coupling5):
        grid = grid5()
        ev = AttackEvent(10.0, "dos", frozenset((i, j) for i, j in LINKS5))
        cp, gd = apply_attack(coupling5, grid, ev, 10.0)
        assert np.all(cp.a_live == 0.0) and np.all(cp.b_live == 0.0)
        sys = aggregate(ders5, cp)
        assert np.all(sys.lap_a == 0.0) and np.all(sys.lap_b == 0.0)
        # cyber attack leaves the electrical side untouched
        assert np.array_equal(gd.susceptance, grid.susceptance)

    def test_dos_omega_only(self, coupling5):
        ev = AttackEvent(10.0, "dos", frozenset({(0, 1)}), zero_b=False)
        cp, _ = apply_attack(coupling5, grid5(), ev, 10.0)
        assert cp.a_live[0, 1] == 0.0
        assert cp.b_live[0, 1] == 1.0

    def test_fdi_default_doubles(self, coupling5):
        ev = AttackEvent(10.0, "fdi", frozenset({(1, 2)}))
        cp, gd = apply_attack(coupling5, grid5(), ev, 10.0)
        assert cp.a_live[1, 2] == pytest.approx(2.0)
        assert cp.b_live[2, 1] == pytest.approx(2.0)
        assert cp.e_fund[1, 2] == 1.0
        assert np.array_equal(gd.susceptance, grid5().susceptance)

    def test_fdi_explicit_offsets(self, coupling5):
        ev = AttackEvent(10.0, "fdi", frozenset({(1, 2)}),
                         fdi_offsets={(1, 2): (0.25, 0.0)})
        cp, _ = apply_attack(coupling5, grid5(), ev, 10.0)
        assert cp.a_live[1, 2] == pytest.approx(1.25)
        assert cp.b_live[1, 2] == pytest.approx(1.0)

    def test_confidentiality_island_cuts_both(self, coupling5):
        ev = AttackEvent(10.0, "confidentiality_island", frozenset({2, 3}))
        cp, gd = apply_attack(coupling5, grid5(), ev, 10.0)
        # links crossing the island boundary die, internal ones survive
        assert cp.a_live[1, 2] == 0.0 and cp.a_live[3, 4] == 0.0
        assert cp.a_live[2, 3] == 1.0 and cp.a_live[0, 1] == 1.0
        assert gd.susceptance[1, 2] == 0.0 and gd.susceptance[3, 4] == 0.0
        assert gd.susceptance[2, 3] > 0.0
        assert gd.islands() == [[0, 1, 4], [2, 3]]

    def test_attack_respects_fundamental_matrix(self, coupling5):
        with pytest.raises(ModelError):
            apply_attack(coupling5, grid5(),
                         AttackEvent(10.0, "fdi", frozenset({(0, 2)})), 10.0)
        ev = AttackEvent(10.0, "fdi", frozenset({(1, 2)}))
        cp, _ = apply_attack(coupling5, grid5(), ev, 10.0)
        assert np.all(cp.a_live[cp.e_fund == 0.0] == 0.0)
        assert np.all(cp.b_live[cp.e_fund == 0.0] == 0.0)

    def test_before_start_time_rejected(self, coupling5):
        ev = AttackEvent(10.0, "dos", frozenset({(0, 1)}))
        with pytest.raises(ModelError):
            apply_attack(coupling5, grid5(), ev, 9.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ModelError):
            AttackEvent(1.0, "spoof", frozenset())


class TestPermutationEquivariance:
    def test_relabeling_permutes_derivative(self, rng):
        ders = [DerParams(m=1e-4 * (1 + 0.2 * i), n=2e-4, q_star=1.0 + 0.1 * i)
                for i in range(3)]
        cp = make_coupling(3, [(0, 1), (1, 2)], a=0.8, b=0.6)
        sys = aggregate(ders, cp)
        perm = np.array([2, 0, 1])
        ders_p = [ders[perm[i]] for i in range(3)]
        ef = np.zeros((3, 3))
        inv = np.argsort(perm)
        for i, j in [(0, 1), (1, 2)]:
            ef[inv[i], inv[j]] = ef[inv[j], inv[i]] = 1.0
        links_p = [(int(inv[0]), int(inv[1])), (int(inv[1]), int(inv[2]))]
        cp_p = make_coupling(3, links_p, a=0.8, b=0.6)
        sys_p = aggregate(ders_p, cp_p)

        def perm_states(v, width):
            out = np.zeros_like(v)
            for new_i in range(3):
                old_i = perm[new_i]
                out[width * new_i:width * (new_i + 1)] = v[width * old_i:width * (old_i + 1)]
            return out

        for _ in range(3):
            x = rng.standard_normal(12)
            d = rng.standard_normal(6)
            du = rng.standard_normal(6)
            base = state_derivative(x, d, du, sys)
            permuted = state_derivative(perm_states(x, 4), perm_states(d, 2),
                                        perm_states(du, 2), sys_p)
            assert np.max(np.abs(permuted - perm_states(base, 4))) < 1e-10
