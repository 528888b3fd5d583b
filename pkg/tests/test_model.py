import numpy as np
import pytest

from dapinet.model import (
    NSTATE,
    CouplingSpec,
    DerParams,
    GainMatrix,
    ModelError,
    aggregate,
    build_der_matrices,
    build_uncertainty_blocks,
    check_bounds,
    make_coupling,
    with_couplings,
)

from conftest import der_params_5, LINKS5


def stack_omega(sys, omega):
    """Embed a per-DER Om vector into the stacked 4N state."""
    x = np.zeros(NSTATE * sys.n_ders)
    x[1::NSTATE] = omega
    return x


class TestDerMatrices:
    def test_eq15_values(self):
        p = DerParams(m=1e-4, n=2e-4, tau_c=0.0318, k=1.0, kappa=1.0, xi=1.0)
        a, b, e = build_der_matrices(p)
        assert a[0, 0] == pytest.approx(-31.4465, rel=1e-3)
        assert a[0, 0] == -1.0 / 0.0318
        assert e[0, 0] == pytest.approx(-3.1446e-3, rel=1e-3)
        assert e[0, 0] == -1e-4 / 0.0318
        assert a[1, 0] == -1.0 and a[3, 2] == -1.0
        assert b[0, 0] == 1.0 / 0.0318 and b[2, 1] == 1.0 / 0.0318

    def test_table_gains_enter_e(self):
        p = DerParams(m=1.0 / 10000.0, n=1.0 / 5000.0, tau_c=0.0318)
        _, _, e = build_der_matrices(p)
        assert e[0, 0] == -(1.0 / 10000.0) / 0.0318
        assert e[2, 1] == -(1.0 / 5000.0) / 0.0318

    def test_zero_xi_decouples_voltage_consensus(self):
        p = DerParams(m=1e-4, n=2e-4, xi=0.0)
        a, _, _ = build_der_matrices(p)
        assert np.all(a[3, :] == 0.0)

    def test_sparsity_pattern(self):
        p = DerParams(m=1e-4, n=2e-4)
        a, b, e = build_der_matrices(p)
        a_pattern = np.array([[1, 1, 0, 0], [1, 0, 0, 0],
                              [0, 0, 1, 1], [0, 0, 1, 0]], dtype=bool)
        b_pattern = np.array([[1, 0], [0, 0], [0, 1], [0, 0]], dtype=bool)
        assert np.all(a[~a_pattern] == 0.0)
        assert np.all(b[~b_pattern] == 0.0)
        assert np.all(e[~b_pattern] == 0.0)

    def test_scale_consistency_tau_c(self):
        p1 = DerParams(m=1e-4, n=2e-4, tau_c=0.02)
        p2 = DerParams(m=1e-4, n=2e-4, tau_c=0.04)
        a1, b1, e1 = build_der_matrices(p1)
        a2, b2, e2 = build_der_matrices(p2)
        assert a2[0, 0] == a1[0, 0] / 2.0
        assert b2[0, 0] == b1[0, 0] / 2.0
        assert e2[2, 1] == e1[2, 1] / 2.0
        # consensus rows do not involve tau_c
        assert a2[1, 0] == a1[1, 0]

    def test_rejects_bad_params(self):
        with pytest.raises(ModelError):
            DerParams(m=1e-4, n=2e-4, tau_c=0.0)
        with pytest.raises(ModelError):
            DerParams(m=1e-4, n=2e-4, k=-1.0)
        with pytest.raises(ModelError):
            DerParams(m=1e-4, n=2e-4, kappa=0.0)
        with pytest.raises(ModelError):
            DerParams(m=1e-4, n=2e-4, xi=-0.1)


class TestUncertaintyBlocks:
    def test_disconnected_der_all_zero(self):
        p = DerParams(m=1e-4, n=2e-4, q_star=100.0)
        cp = make_coupling(2, [(0, 1)], a=0.0, b=0.0)
        da_ii, da_off, de_ii, de_off = build_uncertainty_blocks(p, cp, 0)
        assert np.all(da_ii == 0.0) and np.all(de_ii == 0.0)
        assert da_off == [] and de_off == []

    def test_two_der_laplacian(self):
        ders = [DerParams(m=1e-4, n=2e-4, k=1.0, q_star=1.0) for _ in range(2)]
        cp = make_coupling(2, [(0, 1)], a=0.5, b=0.0)
        sys = aggregate(ders, cp)
        lap = np.array([[0.5, -0.5], [-0.5, 0.5]])
        assert np.allclose(sys.lap_a, lap)
        # Om rows of delta_a act as -L_a (k = 1)
        for om in (np.array([1.0, 0.0]), np.array([0.3, -0.7])):
            x = stack_omega(sys, om)
            got = (sys.delta_a @ x)[1::NSTATE]
            assert np.allclose(got, -lap @ om, atol=1e-15)

    def test_hand_values_de(self):
        ders = [DerParams(m=1e-4, n=2e-4, kappa=1.0, q_star=500.0),
                DerParams(m=1e-4, n=2e-4, kappa=1.0, q_star=1000.0)]
        cp = make_coupling(2, [(0, 1)], a=0.0, b=0.1)
        da_ii, _, de_ii, de_off = build_uncertainty_blocks(
            ders[0], cp, 0, ders=ders)
        assert de_ii[3, 1] == pytest.approx(-2e-4)
        (j, de_01), = de_off
        assert j == 1 and de_01[3, 1] == pytest.approx(1e-4)

    def test_zero_q_star_rejected(self):
        ders = [DerParams(m=1e-4, n=2e-4, q_star=0.0) for _ in range(2)]
        cp = make_coupling(2, [(0, 1)], a=1.0, b=0.5)
        with pytest.raises(ModelError):
            build_uncertainty_blocks(ders[0], cp, 0, ders=ders)


class TestAggregate:
    def test_single_der(self):
        p = DerParams(m=1e-4, n=2e-4, q_star=1.0)
        cp = make_coupling(1, [])
        sys = aggregate([p], cp)
        a, _, _ = build_der_matrices(p)
        assert np.allclose(sys.a_d, a)
        assert np.all(sys.delta_a == 0.0) and np.all(sys.delta_e == 0.0)

    def test_path3_laplacian_eigs(self):
        a_val = 0.7
        ders = [DerParams(m=1e-4, n=2e-4, q_star=1.0) for _ in range(3)]
        cp = make_coupling(3, [(0, 1), (1, 2)], a=a_val, b=0.0)
        sys = aggregate(ders, cp)
        eigs = np.sort(np.linalg.eigvalsh(sys.lap_a))
        # independent dense eigensolver oracle: path graph spectrum {0, 1, 3}
        assert np.allclose(eigs, np.array([0.0, 1.0, 3.0]) * a_val, atol=1e-12)

    def test_5der_connected_one_zero_eig(self, sys5):
        eigs = np.sort(np.linalg.eigvalsh(sys5.lap_a))
        assert np.sum(np.abs(eigs) < 1e-9) == 1
        assert eigs[1] > 1e-6

    def test_laplacian_row_sums(self, sys5):
        one = np.ones(5)
        assert np.max(np.abs(sys5.lap_a @ one)) < 1e-12
        assert np.max(np.abs(sys5.lap_b @ one)) < 1e-12

    def test_component_count_matches_zero_eigs(self):
        ders = [DerParams(m=1e-4, n=2e-4, q_star=1.0) for _ in range(4)]
        cp = make_coupling(4, [(0, 1), (2, 3)], a=1.0, b=1.0)
        sys = aggregate(ders, cp)
        eigs = np.linalg.eigvalsh(sys.lap_a)
        assert np.sum(np.abs(eigs) < 1e-9) == 2

    def test_delta_a_laplacian_consistency(self, sys5, rng):
        # Om rows of delta_a acting on stacked states reproduce -L_a Om / k
        for _ in range(10):
            x = rng.standard_normal(NSTATE * 5)
            om = x[1::NSTATE]
            got = (sys5.delta_a @ x)[1::NSTATE]
            want = -(sys5.lap_a @ om)  # k = 1 for all DERs here
            assert np.max(np.abs(got - want)) < 1e-12

    def test_delta_a_only_touches_omega_rows(self, sys5, rng):
        x = rng.standard_normal(NSTATE * 5)
        out = sys5.delta_a @ x
        mask = np.zeros(NSTATE * 5, dtype=bool)
        mask[1::NSTATE] = True
        assert np.all(out[~mask] == 0.0)

    def test_dimension_mismatch(self, coupling5):
        with pytest.raises(ModelError):
            aggregate(der_params_5()[:3], coupling5)

    def test_asymmetric_e_fund_rejected(self):
        ef = np.zeros((2, 2))
        ef[0, 1] = 1.0
        z = np.zeros((2, 2))
        with pytest.raises(ModelError):
            CouplingSpec(2, ef, z, z, z, z, z)


class TestCheckBounds:
    def test_zero_disturbance(self, sys5):
        rep = check_bounds(np.zeros(20), np.zeros(10), sys5, 1.0, 1.0)
        assert rep["disturbance_ok"] and rep["state_ok"] and rep["dist_unc_ok"]
        assert rep["disturbance_margin"] == pytest.approx(1.0)

    def test_boundary_disturbance(self, ders5, sys5):
        d = np.zeros(10)
        d[0] = ders5[0].s_bar  # dp at the capacity bound, dq = 0
        rep = check_bounds(np.zeros(20), d, sys5, 1.0, 1.0)
        assert rep["disturbance_value"] == pytest.approx(1.0, abs=1e-12)

    def test_full_strength_state_bound_equality(self, ders5, rng):
        alpha = 0.37
        cp = with_couplings(make_coupling(5, LINKS5), alpha, 0.9)
        sys = aggregate(ders5, cp)
        # live couplings alpha * strengths with strengths = 1: dA = alpha * H
        assert np.allclose(sys.delta_a, alpha * sys.h_mat, atol=1e-14)
        for _ in range(10):
            x = rng.standard_normal(20)
            rep = check_bounds(x, np.zeros(10), sys, alpha, 0.9)
            assert rep["state_lhs"] == pytest.approx(rep["state_rhs"], rel=1e-10)


class TestGainMatrix:
    def test_structure(self):
        g = GainMatrix(-0.5, -0.25, -0.4, -0.3, n_ders=2)
        kd = g.full()
        assert kd.shape == (4, 8)
        blk = np.array([[-0.5, -0.25, 0.0, 0.0], [0.0, 0.0, -0.4, -0.3]])
        assert np.allclose(kd[:2, :4], blk)
        assert np.allclose(kd[2:, 4:], blk)
        assert np.all(kd[:2, 4:] == 0.0) and np.all(kd[2:, :4] == 0.0)

    def test_rejects_nonnegative_without_override(self):
        with pytest.raises(ModelError):
            GainMatrix(0.1, -0.2, -0.3, -0.4, n_ders=1)
        g = GainMatrix(0.1, -0.2, -0.3, -0.4, n_ders=1, allow_nonnegative=True)
        assert g.k_omega == 0.1

    def test_zero_gain(self):
        g = GainMatrix.zero(3)
        assert np.all(g.full() == 0.0)
