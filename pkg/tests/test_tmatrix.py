"""Normal forms of anti-commuting pairs, centralizers, reversible kernels."""

import itertools

import numpy as np
import pytest

from revkam.homological import ModifyingTerms, ad_D_action
from revkam.reversing import InvolutionSpec, ad_G
from revkam.tmatrix import (
    TMatrixSpec,
    classify_anticommuting_pair,
    commutant_basis,
    kernel_basis_minus,
    kernel_basis_plus,
    tmatrix_dense,
    tmatrix_spectrum,
)
from revkam.reversing import standard_K


def all_tilings(p):
    out = []
    for d3 in range(p // 2 + 1):
        for d1 in range(p - 2 * d3 + 1):
            out.append((d1, p - 2 * d3 - d1, d3))
    return out


def random_tspec(rng, d1, d2, d3):
    # distinct positive parameters keep the spectrum simple
    nq, nr = d1 + d3, d2 + d3
    alpha = np.sort(rng.uniform(0.5, 3.0, size=nq)) + 0.3 * np.arange(nq)
    beta = np.sort(rng.uniform(0.5, 3.0, size=nr)) + 0.3 * np.arange(nr) + 0.11
    return TMatrixSpec(d1, d2, d3, tuple(alpha), tuple(beta))


class TestDense:
    def test_alpha_block(self):
        t = TMatrixSpec(1, 0, 0, (2.0,), ())
        assert np.array_equal(tmatrix_dense(t), [[0.0, 2.0], [2.0, 0.0]])

    def test_beta_block(self):
        t = TMatrixSpec(0, 1, 0, (), (3.0,))
        assert np.array_equal(tmatrix_dense(t), [[0.0, 3.0], [-3.0, 0.0]])

    def test_anticommutes_with_K_exactly(self):
        rng = np.random.default_rng(0)
        for d1, d2, d3 in all_tilings(3):
            t = random_tspec(rng, d1, d2, d3)
            D = tmatrix_dense(t)
            K = standard_K(t.p)
            assert np.array_equal(D @ K + K @ D, np.zeros_like(D))


class TestSpectrum:
    def test_real_and_imaginary_pairs(self):
        t = TMatrixSpec(1, 1, 0, (2.0,), (3.0,))
        spec = set(np.round(tmatrix_spectrum(t), 12))
        assert spec == {2.0, -2.0, 3.0j, -3.0j}

    def test_quadruplet(self):
        t = TMatrixSpec(0, 0, 1, (1.0,), (2.0,))
        spec = set(np.round(tmatrix_spectrum(t), 12))
        assert spec == {1 + 2j, 1 - 2j, -1 + 2j, -1 - 2j}

    def test_against_dense_eigensolver(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            p = int(rng.integers(1, 4))
            d1, d2, d3 = all_tilings(p)[rng.integers(len(all_tilings(p)))]
            t = random_tspec(rng, d1, d2, d3)
            spec = np.sort_complex(tmatrix_spectrum(t))
            dense = np.sort_complex(np.linalg.eigvals(tmatrix_dense(t)))
            # greedy pairing tolerant of conjugate ordering
            used = np.zeros(len(dense), bool)
            worst = 0.0
            for lam in spec:
                dists = np.where(used, np.inf, np.abs(dense - lam))
                k = int(np.argmin(dists))
                worst = max(worst, dists[k])
                used[k] = True
            assert worst <= 1e-10


class TestClassify:
    def test_already_normal_form(self):
        K = np.diag([1.0, -1.0])
        Lam = np.array([[0.0, 2.0], [2.0, 0.0]])
        cls = classify_anticommuting_pair(K, Lam)
        assert (cls.d1, cls.d2, cls.d3) == (1, 0, 0)
        assert np.allclose(cls.alpha, [2.0])
        assert np.allclose(cls.basis, np.eye(2))

    def test_conjugation_round_trip(self):
        rng = np.random.default_rng(2)
        t = TMatrixSpec(1, 0, 0, (2.0,), ())
        K0, L0 = standard_K(1), tmatrix_dense(t)
        Q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        K, Lam = Q.T @ K0 @ Q, Q.T @ L0 @ Q
        cls = classify_anticommuting_pair(K, Lam)
        assert (cls.d1, cls.d2, cls.d3) == (1, 0, 0)
        assert np.max(np.abs(cls.alpha - [2.0])) <= 1e-9
        rl, rk = cls.residuals(K, Lam)
        assert max(rl, rk) <= 1e-9

    def test_quadruplet_detected(self):
        t = TMatrixSpec(0, 0, 1, (1.0,), (2.0,))
        cls = classify_anticommuting_pair(standard_K(2), tmatrix_dense(t))
        assert (cls.d1, cls.d2, cls.d3) == (0, 0, 1)
        assert np.allclose(cls.alpha, [1.0])
        assert np.allclose(cls.beta, [2.0])

    def test_non_simple_rejected(self):
        t = TMatrixSpec(2, 0, 0, (1.5, 1.5), ())
        with pytest.raises(ValueError, match="not simple"):
            classify_anticommuting_pair(standard_K(2), tmatrix_dense(t))

    def test_not_anticommuting_rejected(self):
        with pytest.raises(ValueError, match="anti-commuting"):
            classify_anticommuting_pair(standard_K(1), np.eye(2))

    def test_round_trip_identity_classification(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            p = int(rng.integers(1, 4))
            tilings = all_tilings(p)
            d1, d2, d3 = tilings[rng.integers(len(tilings))]
            t = random_tspec(rng, d1, d2, d3)
            cls = classify_anticommuting_pair(standard_K(p), tmatrix_dense(t))
            assert (cls.d1, cls.d2, cls.d3) == (d1, d2, d3)
            if cls.alpha.size:
                assert np.max(np.abs(cls.alpha - np.array(t.alpha))) <= 1e-10
            if cls.beta.size:
                assert np.max(np.abs(cls.beta - np.array(t.beta))) <= 1e-10


class TestCommutant:
    def test_single_elliptic_block(self):
        Omega = tmatrix_dense(TMatrixSpec(0, 1, 0, (), (1.3,)))
        basis = commutant_basis(Omega, m=0)
        assert len(basis) == 2
        span = np.array([b.ravel() for b in basis])
        tgt1 = np.eye(2).ravel()
        tgt2 = np.array([[0.0, 1.0], [-1.0, 0.0]]).ravel()
        for tgt in (tgt1, tgt2):
            coef, res, *_ = np.linalg.lstsq(span.T, tgt, rcond=None)
            assert np.max(np.abs(span.T @ coef - tgt)) < 1e-12

    def test_m1_d1_dimension(self):
        Omega = np.zeros((3, 3))
        Omega[1:, 1:] = tmatrix_dense(TMatrixSpec(1, 0, 0, (0.8,), ()))
        assert len(commutant_basis(Omega, m=1)) == 3

    def test_sylvester_nullspace_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(12):
            p = int(rng.integers(1, 4))
            m = int(rng.integers(0, 3))
            tilings = all_tilings(p)
            d1, d2, d3 = tilings[rng.integers(len(tilings))]
            t = random_tspec(rng, d1, d2, d3)
            N = m + 2 * p
            Omega = np.zeros((N, N))
            Omega[m:, m:] = tmatrix_dense(t)
            basis = commutant_basis(Omega, m)
            assert len(basis) == m * m + 2 * (d1 + d2 + 2 * d3)
            for b in basis:
                assert np.max(np.abs(Omega @ b - b @ Omega)) <= 1e-12
            # brute-force nullspace of the Sylvester operator
            S = np.kron(np.eye(N), Omega) - np.kron(Omega.T, np.eye(N))
            sv = np.linalg.svd(S, compute_uv=False)
            nullity = int(np.sum(sv < 1e-9 * max(sv[0], 1.0)))
            assert nullity == len(basis)


class TestKernelMinus:
    def test_paper_dimension_delta_minus(self):
        G = InvolutionSpec(n=1, m=1, p=1, delta=-1)
        Omega = np.zeros((3, 3))
        Omega[1:, 1:] = tmatrix_dense(TMatrixSpec(0, 1, 0, (), (1.1,)))
        kb = kernel_basis_minus(Omega, G)
        assert kb.dim == 1 + 1 + 0 + 1

    def test_paper_dimension_delta_plus(self):
        G = InvolutionSpec(n=1, m=1, p=1, delta=1)
        Omega = np.zeros((3, 3))
        Omega[1:, 1:] = tmatrix_dense(TMatrixSpec(0, 1, 0, (), (1.1,)))
        kb = kernel_basis_minus(Omega, G)
        assert kb.dim == 1 + 0 + 0 + 1

    def test_generators_in_kernel_and_reversible(self):
        rng = np.random.default_rng(5)
        for delta in (-1, 1):
            G = InvolutionSpec(n=2, m=2, p=2, delta=delta)
            t = random_tspec(rng, 1, 1, 0)
            Omega = np.zeros((G.N, G.N))
            Omega[2:, 2:] = tmatrix_dense(t)
            kb = kernel_basis_minus(Omega, G)
            omega = np.array([1.0, np.sqrt(3.0)])
            for V in kb.fields(jmax=2):
                img = ad_D_action(V, omega, Omega)
                assert img.norm() <= 1e-12
                assert (ad_G(V, G) + V).norm() <= 1e-12

    def test_plus_generators_in_kernel_and_equivariant(self):
        G = InvolutionSpec(n=1, m=1, p=1, delta=-1)
        Omega = np.zeros((3, 3))
        Omega[1:, 1:] = tmatrix_dense(TMatrixSpec(0, 1, 0, (), (0.9,)))
        kb = kernel_basis_plus(Omega, G)
        omega = np.array([1.0])
        for V in kb.fields(jmax=2):
            assert ad_D_action(V, omega, Omega).norm() <= 1e-12
            assert (ad_G(V, G) - V).norm() <= 1e-12

    def test_modifying_terms_assembly_round_trip(self):
        G = InvolutionSpec(n=1, m=1, p=2, delta=-1)
        rng = np.random.default_rng(6)
        t = random_tspec(rng, 1, 1, 0)
        Omega = np.zeros((G.N, G.N))
        Omega[1:, 1:] = tmatrix_dense(t)
        kb = kernel_basis_minus(Omega, G)
        coords = rng.standard_normal(kb.dim)
        R = ModifyingTerms.from_coords(coords, kb)
        back, resid = kb.project_constants(*R.constants())
        assert resid <= 1e-12
        assert np.max(np.abs(back - coords)) <= 1e-12
        lam, mu, q, r = kb.split_coords(coords)
        assert len(lam) == 1 and len(mu) == 1 and len(q) == 1 and len(r) == 1
