import numpy as np
import pytest

from dapinet.sdp import LmiBlock, SdpError, solve_sdp


def vech_basis(n, sign=-1.0):
    """Coefficient matrices mapping vech(Y) entries into -Y (or +Y)."""
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    fis = np.zeros((len(pairs), n, n))
    for k, (i, j) in enumerate(pairs):
        fis[k, i, j] = fis[k, j, i] = sign
    trace_cost = np.array([1.0 if i == j else 0.0 for i, j in pairs])
    return fis, trace_cost


class TestAnalyticSdp:
    def test_2x2_eigenvalue_bound(self):
        # min t with [[t, 1], [1, t]] >= 0; optimum t = 1
        blk = LmiBlock(np.array([[0.0, -1.0], [-1.0, 0.0]]),
                       np.array([[[-1.0, 0.0], [0.0, -1.0]]]))
        res = solve_sdp([blk], np.array([1.0]))
        assert res.ok
        assert abs(res.x[0] - 1.0) < 1e-6
        assert max(res.block_residuals) <= 1e-7

    def test_trace_projection_onto_psd_cone(self):
        # min tr(Y) s.t. Y >= M, Y >= 0; optimum is the positive part of M
        rng = np.random.default_rng(3)
        mmat = rng.standard_normal((4, 4))
        mmat = 0.5 * (mmat + mmat.T)
        fis, cost = vech_basis(4)
        res = solve_sdp([LmiBlock(mmat.copy(), fis), LmiBlock(np.zeros((4, 4)), fis.copy())],
                        cost)
        want = float(np.sum(np.maximum(np.linalg.eigvalsh(mmat), 0.0)))
        assert res.ok
        assert abs(res.objective - want) < 1e-6 * max(1.0, want)

    def test_scalar_bound(self):
        blk = LmiBlock(np.array([[3.0]]), np.array([[[-1.0]]]))
        res = solve_sdp([blk], np.array([1.0]))
        assert res.ok and abs(res.x[0] - 3.0) < 1e-6

    def test_infeasible_detected(self):
        le = LmiBlock(np.array([[1.0]]), np.array([[[1.0]]]))
        ge = LmiBlock(np.array([[1.0]]), np.array([[[-1.0]]]))
        res = solve_sdp([le, ge], np.array([1.0]), max_iter=80)
        assert res.status == "infeasible"

    def test_lyapunov_feasibility(self):
        # find P > 0 with A'P + PA <= -I for a stable A; verify residuals
        rng = np.random.default_rng(11)
        a = rng.standard_normal((5, 5))
        a -= (np.max(np.real(np.linalg.eigvals(a))) + 0.8) * np.eye(5)
        fis, cost = vech_basis(5)
        lyap = np.stack([a.T @ (-f) + (-f) @ a for f in fis])  # A'P + PA from vech(P)
        blk_lyap = LmiBlock(np.eye(5), lyap)          # A'P + PA + I <= 0
        blk_pos = LmiBlock(0.01 * np.eye(5), fis)     # P >= 0.01 I
        res = solve_sdp([blk_lyap, blk_pos], cost)
        assert res.ok
        assert max(res.block_residuals) <= 1e-7
        # rebuild P and check with an independent eigensolver
        p = np.zeros((5, 5))
        k = 0
        for i in range(5):
            for j in range(i, 5):
                p[i, j] = p[j, i] = res.x[k]
                k += 1
        assert np.linalg.eigvalsh(p)[0] > 0.0
        assert np.linalg.eigvalsh(a.T @ p + p @ a)[-1] <= -1.0 + 1e-7

    def test_rejects_inconsistent_shapes(self):
        with pytest.raises(SdpError):
            LmiBlock(np.zeros((2, 3)), np.zeros((1, 2, 2)))
        blk = LmiBlock(np.zeros((2, 2)), np.zeros((2, 2, 2)))
        with pytest.raises(SdpError):
            solve_sdp([blk], np.array([1.0]))  # m mismatch

    def test_objective_monotone_in_bound(self):
        # relaxing a scalar lower bound never increases the optimum
        vals = []
        for lb in (3.0, 2.0, 1.0):
            blk = LmiBlock(np.array([[lb]]), np.array([[[-1.0]]]))
            vals.append(solve_sdp([blk], np.array([1.0])).objective)
        assert vals[0] >= vals[1] >= vals[2]
