"""Diophantine certification and the small-divisor solver."""

import numpy as np
import pytest

from conftest import random_affine_field, standard_omega_block
from revkam.fourier import FourierSeries
from revkam.homological import (
    ModifyingTerms,
    OmegaEigen,
    ResonanceError,
    ad_D_action,
    diophantine_check,
    homological_solve,
)
from revkam.reversing import AffineTorusField, InvolutionSpec, ad_G, split_pm
from revkam.tmatrix import TMatrixSpec, kernel_basis_minus, tmatrix_dense

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class TestDiophantine:
    def test_unit_frequency(self):
        cert = diophantine_check([1.0], tau=1.2, jmax_checked=50)
        assert cert.gamma == 1.0
        assert tuple(np.abs(cert.min_j)) == (1,)

    def test_golden_pair_frozen_value(self):
        cert = diophantine_check([1.0, GOLDEN], tau=1.2, jmax_checked=50)
        # frozen output of the exhaustive enumeration oracle: the minimum of
        # |<j, (1, g)>| |j|^1.2 over the checked range sits at j = (0, 1)
        assert abs(cert.gamma - 0.6180339887498949) < 1e-12
        assert cert.min_j == (0, 1)

    def test_exact_resonance_refused(self):
        with pytest.raises(ResonanceError) as err:
            diophantine_check([1.0, 0.5], tau=1.2, jmax_checked=50)
        assert err.value.j == (1, -2)

    def test_beta_combinations_checked(self):
        # resonance only through <J, beta> with |J| = 2
        with pytest.raises(ResonanceError) as err:
            diophantine_check([1.0], beta=[0.5], tau=1.2, jmax_checked=10)
        assert err.value.j == (1,)
        assert tuple(err.value.J) in ((-2,), (2,))

    def test_tau_hypothesis(self):
        with pytest.raises(ValueError):
            diophantine_check([1.0, GOLDEN], tau=0.5)

    def test_bound_applies_in_range(self):
        cert = diophantine_check([1.0, GOLDEN], tau=1.4, jmax_checked=30)
        rng = np.random.default_rng(0)
        for _ in range(50):
            j = rng.integers(-5, 6, size=2)
            if not j.any():
                continue
            val = abs(j @ np.array([1.0, GOLDEN]))
            assert val >= cert.lower_bound(j) * (1 - 1e-12)


def _setup(n=1, m=1, jmax=5, d1=0, d2=1, d3=0):
    G = InvolutionSpec(n=n, m=m, p=d1 + d2 + 2 * d3, delta=-1)
    alpha = tuple(0.7 + 0.4 * k for k in range(d1 + d3))
    beta = tuple(np.sqrt(2.0) + 0.6 * k for k in range(d2 + d3))
    t = TMatrixSpec(d1, d2, d3, alpha, beta)
    Omega = np.zeros((G.N, G.N))
    Omega[m:, m:] = tmatrix_dense(t)
    omega = np.array([1.2247448713915890, 0.7548776662466927][:n])
    cert = diophantine_check(omega, beta, tau=n - 1 + 0.4, jmax_checked=max(30, 2 * jmax))
    return G, Omega, omega, cert, jmax


class TestAdDAction:
    def test_kernel_constants_annihilated(self):
        G, Omega, omega, cert, jmax = _setup()
        kb = kernel_basis_minus(Omega, G)
        for V in kb.fields(jmax):
            assert ad_D_action(V, omega, Omega).norm() <= 1e-13

    def test_D_on_itself(self):
        G, Omega, omega, cert, jmax = _setup()
        D = AffineTorusField(
            FourierSeries.constant(1, jmax, omega),
            FourierSeries.zeros(1, jmax, (G.N,)),
            FourierSeries.constant(1, jmax, Omega))
        assert ad_D_action(D, omega, Omega).norm() <= 1e-14

    def test_flow_conjugation_oracle(self):
        # [D, V](w) = d/dt|_0 of DPhi^{-t} V(Phi^t w) with the exact D-flow
        from scipy.linalg import expm
        G, Omega, omega, cert, jmax = _setup(jmax=3)
        rng = np.random.default_rng(1)
        V = random_affine_field(rng, 1, G.N, 3)
        img = ad_D_action(V, omega, Omega)
        h = 1e-6
        x = rng.uniform(0, 2 * np.pi, size=(1, 6))
        X = rng.uniform(-0.3, 0.3, size=(G.N, 6))

        def pushed(t):
            Et = expm(t * Omega)
            Emt = expm(-t * Omega)
            dx, dX = V.evaluate(x + t * omega[:, None], Et @ X)
            return dx, Emt @ dX

        dxp, dXp = pushed(h)
        dxm, dXm = pushed(-h)
        fd_x = (dxp - dxm) / (2 * h)
        fd_X = (dXp - dXm) / (2 * h)
        gx, gX = img.evaluate(x, X)
        assert np.max(np.abs(fd_x - gx)) <= 1e-7
        assert np.max(np.abs(fd_X - gX)) <= 1e-7


class TestHomologicalSolve:
    def test_zero_rhs(self):
        G, Omega, omega, cert, jmax = _setup()
        rhs = AffineTorusField.zeros(1, G.N, jmax)
        V, R = homological_solve(rhs, omega, Omega, G, cert)
        assert V.norm() == 0.0
        assert R.norm() == 0.0

    def test_kernel_rhs_goes_to_modifying_terms(self):
        G, Omega, omega, cert, jmax = _setup()
        kb = kernel_basis_minus(Omega, G)
        rng = np.random.default_rng(2)
        coords = rng.standard_normal(kb.dim)
        rhs = kb.as_field(coords, jmax)
        V, R = homological_solve(rhs, omega, Omega, G, cert)
        assert V.norm() <= 1e-13
        assert np.max(np.abs(R.coords - coords)) <= 1e-12

    def test_solves_equation_exactly_on_modes(self):
        G, Omega, omega, cert, jmax = _setup(jmax=4)
        rng = np.random.default_rng(3)
        rhs = split_pm(random_affine_field(rng, 1, G.N, 4), G)[1]
        V, R = homological_solve(rhs, omega, Omega, G, cert)
        resid = ad_D_action(V, omega, Omega) + R.as_field(4) - rhs
        assert resid.norm() <= 1e-11 * rhs.norm()
        assert (ad_G(V, G) - V).norm() <= 1e-12

    def test_exchange_property(self):
        G, Omega, omega, cert, jmax = _setup(jmax=4)
        rng = np.random.default_rng(4)
        V = random_affine_field(rng, 1, G.N, 4)
        plus, minus = split_pm(V, G)
        img_p = ad_D_action(plus, omega, Omega)
        img_m = ad_D_action(minus, omega, Omega)
        assert (ad_G(img_p, G) + img_p).norm() <= 1e-11 * max(1.0, V.norm())
        assert (ad_G(img_m, G) - img_m).norm() <= 1e-11 * max(1.0, V.norm())

    def test_four_way_decomposition_resums(self):
        G, Omega, omega, cert, jmax = _setup(jmax=4, d1=1, d2=1)
        rng = np.random.default_rng(5)
        V = random_affine_field(rng, 1, G.N, 4)
        plus, minus = split_pm(V, G)
        Vm, Rm = homological_solve(minus, omega, Omega, G, cert, sign=-1)
        Vp, Rp = homological_solve(plus, omega, Omega, G, cert, sign=+1)
        resum = (ad_D_action(Vm, omega, Omega) + Rm.as_field(4)
                 + ad_D_action(Vp, omega, Omega) + Rp.as_field(4)) - V
        assert resum.norm() <= 1e-12 * max(1.0, V.norm())

    def test_R_invariant_under_eigenbasis_order(self):
        G, Omega, omega, cert, jmax = _setup(jmax=4, d1=1, d2=1)
        rng = np.random.default_rng(6)
        rhs = split_pm(random_affine_field(rng, 1, G.N, 4), G)[1]
        e1 = OmegaEigen.build(Omega, G.m)
        perm = list(range(2 * G.p))[::-1]
        e2 = OmegaEigen.build(Omega, G.m, order=perm)
        _, R1 = homological_solve(rhs, omega, Omega, G, cert, eig=e1)
        V2, R2 = homological_solve(rhs, omega, Omega, G, cert, eig=e2)
        assert np.max(np.abs(R1.coords - R2.coords)) <= 1e-11

    def test_nonreversible_rhs_rejected(self):
        G, Omega, omega, cert, jmax = _setup()
        rng = np.random.default_rng(7)
        rhs = random_affine_field(rng, 1, G.N, jmax)  # generic: both parts
        with pytest.raises(ValueError, match="not reversible"):
            homological_solve(rhs, omega, Omega, G, cert)

    def test_certificate_must_cover_jmax(self):
        G, Omega, omega, cert, jmax = _setup()
        small_cert = diophantine_check(omega, cert.beta, tau=0.4, jmax_checked=3)
        rng = np.random.default_rng(8)
        rhs = split_pm(random_affine_field(rng, 1, G.N, jmax), G)[1]
        with pytest.raises(ValueError, match="certificate"):
            homological_solve(rhs, omega, Omega, G, small_cert)

    def test_dense_least_squares_oracle_small(self):
        # minimal-norm equivalence on a small instance; the n=2 version is
        # acceptance criterion 1
        G, Omega, omega, cert, jmax = _setup(jmax=3)
        rng = np.random.default_rng(9)
        rhs = split_pm(random_affine_field(rng, 1, G.N, jmax), G)[1]
        V, R = homological_solve(rhs, omega, Omega, G, cert)
        A, kdim, unpack = _dense_operator(G, Omega, omega, jmax)
        bvec = _field_to_real_vec(rhs)
        sol, *_ = np.linalg.lstsq(A, bvec, rcond=None)
        V_d, R_d = unpack(sol)
        assert (V - V_d).norm() <= 1e-9 * max(1.0, V.norm())
        assert np.max(np.abs(R.coords - R_d)) <= 1e-9


def _field_to_complex_vec(F):
    return np.concatenate([F.a.coeffs.ravel(), F.b.coeffs.ravel(),
                           F.c.coeffs.ravel()])


def _field_to_real_vec(F):
    v = _field_to_complex_vec(F)
    return np.concatenate([v.real, v.imag])


def _dense_operator(G, Omega, omega, jmax):
    """Real matrix of (V, R) -> ad_D V + assemble(R) over all retained modes."""
    n, N = G.n, G.N
    m = 2 * jmax + 1
    na, nb, nc = n * m ** n, N * m ** n, N * N * m ** n
    ntot = na + nb + nc

    def vec_to_field(u):
        a = u[:na].reshape((m,) * n + (n,))
        b = u[na:na + nb].reshape((m,) * n + (N,))
        c = u[na + nb:].reshape((m,) * n + (N, N))
        return AffineTorusField(FourierSeries(n, jmax, a),
                                FourierSeries(n, jmax, b),
                                FourierSeries(n, jmax, c))

    kb = kernel_basis_minus(Omega, G)
    cols = []
    for i in range(ntot):
        e = np.zeros(ntot, complex)
        e[i] = 1.0
        c_re = _field_to_complex_vec(ad_D_action(vec_to_field(e), omega, Omega))
        e[i] = 1j
        c_im = _field_to_complex_vec(ad_D_action(vec_to_field(e), omega, Omega))
        cols.append((c_re, c_im))
    kcols = [_field_to_complex_vec(kb.as_field(np.eye(kb.dim)[i], jmax))
             for i in range(kb.dim)]
    A = np.zeros((2 * ntot, 2 * ntot + kb.dim))
    for i, (c_re, c_im) in enumerate(cols):
        A[:ntot, i], A[ntot:, i] = c_re.real, c_re.imag
        A[:ntot, ntot + i], A[ntot:, ntot + i] = c_im.real, c_im.imag
    for i, kc in enumerate(kcols):
        A[:ntot, 2 * ntot + i] = kc.real
        A[ntot:, 2 * ntot + i] = kc.imag

    def unpack(sol):
        u = sol[:ntot] + 1j * sol[ntot:2 * ntot]
        return vec_to_field(u), sol[2 * ntot:]

    return A, kb.dim, unpack
