import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tomoforge import qcore
from tomoforge.errors import SingularState, ZeroNorm

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_states.json").read_text())


def _cplx(d):
    return np.array(d["real"]) + 1j * np.array(d["imag"])


def _ket(a, b):
    return np.kron(qcore.KETS[a], qcore.KETS[b])


def _dm(psi):
    return np.outer(psi, psi.conj())


def _tau_oracle(rho):
    """Lower-triangular factor by Cholesky of the index-reversed matrix.

    If J reverses indices and J rho J = C C^dag, then T = (J C J)^dag is lower
    triangular with T^dag T = rho, which is what the tau map inverts.
    """
    J = np.eye(4)[::-1]
    C = np.linalg.cholesky(J @ rho @ J)
    return (J @ C @ J).conj().T


class TestProjectors:
    def test_layout_and_properties(self):
        ps = qcore.build_projector_set()
        assert ps.shape == (36, 4, 4)
        np.testing.assert_allclose(ps[0], np.diag([1, 0, 0, 0]), atol=1e-15)
        for p in ps:
            np.testing.assert_allclose(p, p.conj().T, atol=1e-15)
            np.testing.assert_allclose(p @ p, p, atol=1e-12)
            assert np.linalg.matrix_rank(p, tol=1e-9) == 1

    def test_index5_is_u_minus_w_minus(self):
        ps = qcore.build_projector_set()
        w_minus = np.array([1, -1j]) / np.sqrt(2)
        expect = _dm(np.kron([0, 1], w_minus))
        np.testing.assert_allclose(ps[5], expect, atol=1e-15)
        assert ps[5][2, 2] == pytest.approx(0.5)
        assert ps[5][2, 3] == pytest.approx(0.5j)

    def test_groups_complete(self):
        ps = qcore.build_projector_set()
        for g in qcore.GROUPS:
            np.testing.assert_allclose(ps[list(g)].sum(axis=0), np.eye(4), atol=1e-12)


class TestMeasure:
    def test_maximally_mixed(self):
        np.testing.assert_allclose(qcore.measure(np.eye(4) / 4), 0.25, atol=1e-15)

    def test_product_state(self):
        m = qcore.measure(_dm(_ket("u+", "u+")))
        assert m[0] == pytest.approx(1.0)
        assert m[1] == pytest.approx(0.0)
        for k, (a, b) in enumerate(qcore.LAYOUT):
            if a == "u+" and b[0] in "vw":
                assert m[k] == pytest.approx(0.5)

    def test_bell_state(self):
        psi = (_ket("u+", "u+") + _ket("u-", "u-")) / np.sqrt(2)
        m = qcore.measure(_dm(psi))
        assert m[0] == pytest.approx(0.5)
        assert m[1] == pytest.approx(0.0, abs=1e-15)

    def test_batched_matches_single(self):
        rho = qcore.random_mixed_batch(5, seed=1)
        m = qcore.measure(rho)
        for i in range(5):
            np.testing.assert_allclose(m[i], qcore.measure(rho[i]), atol=1e-15)

    def test_groups_sum_to_one(self):
        m = qcore.measure(qcore.random_mixed_batch(200, seed=2))
        for g in qcore.GROUPS:
            np.testing.assert_allclose(m[:, list(g)].sum(axis=1), 1.0, atol=1e-10)

    def test_non_hermitian_rejected(self):
        bad = np.eye(4) / 4 + 0.1j * np.eye(4)
        with pytest.raises(RuntimeError):
            qcore.measure(bad)


class TestTau:
    def test_unit_first_entry(self):
        t = np.zeros(16)
        t[0] = 1
        np.testing.assert_allclose(qcore.tau_to_rho(t), np.diag([1, 0, 0, 0]), atol=1e-15)

    def test_identity(self):
        t = np.zeros(16)
        t[:4] = 1
        np.testing.assert_allclose(qcore.tau_to_rho(t), np.eye(4) / 4, atol=1e-15)

    def test_all_ones_against_dense_oracle(self):
        t = np.ones(16)
        T = np.array([[1, 0, 0, 0],
                      [1 + 1j, 1, 0, 0],
                      [1 + 1j, 1 + 1j, 1, 0],
                      [1 + 1j, 1 + 1j, 1 + 1j, 1]])
        g = T.conj().T @ T
        np.testing.assert_allclose(qcore.tau_to_rho(t), g / np.trace(g).real, atol=1e-14)
        assert qcore.is_density_matrix(qcore.tau_to_rho(t))

    def test_zero_norm(self):
        with pytest.raises(ZeroNorm):
            qcore.tau_to_rho(np.zeros(16))

    def test_vector_matrix_inverse(self):
        t = np.random.default_rng(0).standard_normal(16)
        np.testing.assert_array_equal(qcore.tau_vector(qcore.tau_matrix(t)), t)

    def test_rho_to_tau_identity(self):
        np.testing.assert_allclose(qcore.rho_to_tau(np.eye(4) / 4),
                                   [0.5] * 4 + [0.0] * 12, atol=1e-14)

    def test_rho_to_tau_matches_cholesky_oracle(self):
        rho = qcore.random_mixed_batch(50, seed=3)
        for r in rho:
            np.testing.assert_allclose(qcore.tau_matrix(qcore.rho_to_tau(r)), _tau_oracle(r),
                                       atol=1e-10)

    def test_perturbed_pure_dominant_entry(self):
        eps = qcore.PURE_EPS
        rho = (1 - eps) * _dm(_ket("u+", "u+")) + eps / 4 * np.eye(4)
        t = qcore.rho_to_tau(rho)
        assert abs(t[0]) > 0.99
        assert np.all(np.abs(t[1:]) < 1e-3)
        np.testing.assert_allclose(qcore.tau_to_rho(t), rho, atol=1e-12)

    def test_round_trip_ginibre(self):
        rho = qcore.random_mixed_batch(2000, seed=4)
        back = qcore.tau_to_rho(qcore.rho_to_tau(rho))
        assert np.abs(back - rho).max() < 1e-8

    def test_round_trip_pure(self):
        rho = qcore.random_pure_batch(500, seed=5)
        back = qcore.tau_to_rho(qcore.rho_to_tau(rho))
        assert np.abs(back - rho).max() < 1e-8

    def test_singular_state(self):
        with pytest.raises(SingularState):
            qcore.rho_to_tau(_dm(_ket("u+", "u+")))


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_tau_to_rho_always_physical(t):
    if np.sum(t ** 2) < 1e-200:
        return
    rho = qcore.tau_to_rho(t)
    assert qcore.is_density_matrix(rho, atol=1e-10)


class TestFidelity:
    def test_self(self):
        rho = qcore.random_mixed(0)
        assert qcore.fidelity(rho, rho) == pytest.approx(1.0, abs=1e-10)

    def test_orthogonal(self):
        a = _dm(_ket("u+", "u+"))
        b = _dm(_ket("u-", "u-"))
        assert qcore.fidelity(a, b) == pytest.approx(0.0, abs=1e-10)

    def test_maximally_mixed_vs_pure(self):
        pure = qcore.random_pure(3, eps=0.0)
        assert qcore.fidelity(np.eye(4) / 4, pure) == pytest.approx(0.25, abs=1e-9)
        assert qcore.fidelity(pure, np.eye(4) / 4) == pytest.approx(0.25, abs=1e-9)

    def test_symmetric_and_bounded(self):
        a = qcore.random_mixed_batch(100, seed=6)
        b = qcore.random_mixed_batch(100, seed=7)
        fab = qcore.fidelity(a, b)
        np.testing.assert_allclose(fab, qcore.fidelity(b, a), atol=1e-9)
        assert np.all((fab >= 0) & (fab <= 1))

    def test_pure_overlap(self):
        # for pure states fidelity is |<a|b>|^2
        rng = np.random.default_rng(8)
        a = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        b = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        assert qcore.fidelity(_dm(a), _dm(b)) == pytest.approx(abs(np.vdot(a, b)) ** 2, abs=1e-9)


class TestRandomStates:
    def test_haar_unitary(self):
        for seed in range(20):
            u = qcore.haar_unitary(4, seed)
            assert np.abs(u.conj().T @ u - np.eye(4)).max() < 1e-10

    def test_haar_dim1(self):
        u = qcore.haar_unitary(1, 0)
        assert u.shape == (1, 1)
        assert abs(abs(u[0, 0]) - 1) < 1e-12

    def test_haar_first_entry_distribution(self):
        u = qcore.haar_unitaries(100_000, 4, seed=9)
        # |U00|^2 ~ Beta(1, 3) for Haar measure on U(4)
        assert abs(np.mean(np.abs(u[:, 0, 0]) ** 2) - 0.25) < 0.005
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-10)

    def test_pure_purity_and_trace(self):
        rho = qcore.random_pure_batch(100, seed=10)
        p = qcore.purity(rho)
        assert np.all((p >= 1 - 3e-7) & (p <= 1 + 1e-12))
        np.testing.assert_allclose(np.trace(rho, axis1=1, axis2=2).real, 1.0, atol=1e-12)

    def test_mixed_valid(self):
        for r in qcore.random_mixed_batch(100, seed=11):
            assert qcore.is_density_matrix(r)

    def test_mixed_ensemble_mean(self):
        mean = qcore.random_mixed_batch(10_000, seed=12).mean(axis=0)
        assert np.abs(mean - np.eye(4) / 4).max() < 0.01

    def test_golden_states(self):
        np.testing.assert_allclose(qcore.haar_unitary(4, 123),
                                   _cplx(GOLDEN["haar_unitary_dim4_seed123"]), atol=1e-13)
        np.testing.assert_allclose(qcore.random_pure(7), _cplx(GOLDEN["random_pure_seed7"]), atol=1e-13)
        np.testing.assert_allclose(qcore.random_mixed(7), _cplx(GOLDEN["random_mixed_seed7"]), atol=1e-13)
