"""Involution action, splitting, context classification, symmetry checks."""

import numpy as np
import pytest

from conftest import random_affine_field, standard_omega_block
from revkam.fourier import FourierSeries
from revkam.reversing import (
    AffineTorusField,
    InvolutionSpec,
    ReversibleContext,
    ad_G,
    classify_context,
    fixed_points_on_torus,
    lie_bracket,
    normalize_torus_involution,
    reversibility_residual,
    split_pm,
)
from revkam.systems import Term, build_extreme_integrable, _normalize_nu_poly


G_STD = InvolutionSpec(n=1, m=1, p=1, delta=-1)


def D_field(G, omega, Omega, jmax=4):
    n, N = G.n, G.N
    return AffineTorusField(
        FourierSeries.constant(n, jmax, np.asarray(omega, float)),
        FourierSeries.constant(n, jmax, np.zeros(N)),
        FourierSeries.constant(n, jmax, np.asarray(Omega, float)),
    )


class TestAdG:
    def test_unperturbed_field_is_reversible(self):
        # Omega anti-commutes with L, so ad_G D = -D
        Omega, _ = standard_omega_block(1)
        D = D_field(G_STD, [1.3], Omega)
        img = ad_G(D, G_STD)
        assert (img + D).norm() < 1e-14

    def test_constant_torus_component_flips_sign(self):
        V = AffineTorusField(
            FourierSeries.constant(1, 3, np.array([0.7])),
            FourierSeries.zeros(1, 3, (3,)),
            FourierSeries.zeros(1, 3, (3, 3)),
        )
        img = ad_G(V, G_STD)
        assert np.allclose(img.a.mode((0,)), [-0.7])

    def test_involutive(self):
        rng = np.random.default_rng(0)
        V = random_affine_field(rng, 1, 3, 4)
        assert (ad_G(ad_G(V, G_STD), G_STD) - V).norm() <= 1e-13

    def test_automorphism_over_bracket(self):
        rng = np.random.default_rng(1)
        V = random_affine_field(rng, 1, 3, 3)
        U = random_affine_field(rng, 1, 3, 3)
        lhs = ad_G(lie_bracket(V, U), G_STD)
        rhs = lie_bracket(ad_G(V, G_STD), ad_G(U, G_STD))
        assert (lhs - rhs).norm() <= 1e-11 * max(1.0, V.norm() * U.norm())

    def test_anticommutation_transport(self):
        # for D with ad_G D = -D: ad_G [D, V] = -[D, ad_G V]
        rng = np.random.default_rng(2)
        Omega, _ = standard_omega_block(1)
        D = D_field(G_STD, [0.9], Omega, jmax=3)
        V = random_affine_field(rng, 1, 3, 3)
        lhs = ad_G(lie_bracket(D, V), G_STD)
        rhs = -1.0 * lie_bracket(D, ad_G(V, G_STD))
        assert (lhs - rhs).norm() <= 1e-11 * max(1.0, V.norm())


class TestSplit:
    def test_reversible_input(self):
        rng = np.random.default_rng(3)
        V = random_affine_field(rng, 1, 3, 3)
        Vm = split_pm(V, G_STD)[1]
        plus, minus = split_pm(Vm, G_STD)
        assert plus.norm() <= 1e-13
        assert (minus - Vm).norm() <= 1e-13

    def test_equivariant_input(self):
        rng = np.random.default_rng(4)
        V = random_affine_field(rng, 1, 3, 3)
        Vp = split_pm(V, G_STD)[0]
        plus, minus = split_pm(Vp, G_STD)
        assert minus.norm() <= 1e-13
        assert (plus - Vp).norm() <= 1e-13

    def test_recomposition_and_eigenrelations(self):
        rng = np.random.default_rng(5)
        V = random_affine_field(rng, 2, 3, 2)
        G = InvolutionSpec(n=2, m=1, p=1, delta=-1)
        plus, minus = split_pm(V, G)
        assert (plus + minus - V).norm() <= 1e-13
        assert (ad_G(plus, G) - plus).norm() <= 1e-13
        assert (ad_G(minus, G) + minus).norm() <= 1e-13


class TestClassifyContext:
    def test_paper_context1_case(self):
        G = InvolutionSpec(n=2, m=2, p=1, delta=1)   # dim Fix = 3, codim 4
        assert classify_context(G, 4) is ReversibleContext.CONTEXT1

    def test_paper_context2_case(self):
        G = InvolutionSpec(n=2, m=1, p=1, delta=-1)  # dim Fix = 1, codim 3
        assert classify_context(G, 3) is ReversibleContext.CONTEXT2

    def test_boundary_is_context1(self):
        G = InvolutionSpec(n=1, m=0, p=2, delta=-1)  # dim Fix = p = codim/2
        assert classify_context(G, 4) is ReversibleContext.CONTEXT1

    def test_extremes(self):
        G1 = InvolutionSpec(n=1, m=2, p=1, delta=1)  # dim Fix = 3
        assert classify_context(G1, 3) is ReversibleContext.EXTREME1
        G2 = InvolutionSpec(n=1, m=1, p=0, delta=-1)  # dim Fix = 0
        assert classify_context(G2, 1) is ReversibleContext.EXTREME2

    def test_codim_too_small_rejected(self):
        G = InvolutionSpec(n=1, m=2, p=1, delta=1)
        with pytest.raises(ValueError):
            classify_context(G, 2)


class TestNormalizeTorusInvolution:
    def test_zero_shift(self):
        shift = normalize_torus_involution(lambda phi: -phi, n=2)
        assert np.max(np.abs(shift)) < 1e-12

    def test_pi_shift(self):
        shift = normalize_torus_involution(lambda phi: np.pi - phi, n=1)
        assert abs(shift[0] - np.pi / 2) < 1e-12
        # after x = phi - Delta/2 the map is x -> -x
        for x in np.linspace(0, 2 * np.pi, 7):
            img = (np.pi - (shift[0] + x)) - shift[0]
            assert abs((img + x) % (2 * np.pi)) < 1e-12

    def test_random_shift_t2(self):
        rng = np.random.default_rng(6)
        delta = rng.uniform(0, 2 * np.pi, size=2)
        shift = normalize_torus_involution(lambda phi: delta - phi, n=2, samples=100)
        pts = rng.uniform(0, 2 * np.pi, size=(100, 2))
        for x in pts:
            img = (delta - (shift + x)) - shift
            assert np.max(np.abs(np.mod(img + x + np.pi, 2 * np.pi) - np.pi)) <= 1e-13

    def test_non_reverser_rejected(self):
        with pytest.raises(ValueError):
            normalize_torus_involution(lambda phi: 0.5 * phi, n=1)


class TestFixedPoints:
    def test_n1(self):
        pts = fixed_points_on_torus(1)
        assert sorted(pts[:, 0].tolist()) == [0.0, np.pi]

    def test_n2_count(self):
        assert fixed_points_on_torus(2).shape == (4, 2)

    def test_n3_fixed_by_negation(self):
        pts = fixed_points_on_torus(3)
        assert pts.shape == (8, 3)
        for x in pts:
            assert np.max(np.abs(np.mod(2 * x + np.pi, 2 * np.pi) - np.pi)) < 1e-13


class TestReversibilityResidual:
    def test_integrable_model_symmetric(self):
        zeros = (0,)
        H = (Term(0, (0,), "cos", (0,), _normalize_nu_poly([1.0, 1.0], 1)),
             Term(0, (0,), "cos", (2,), _normalize_nu_poly(0.3, 1)))
        P = (Term(0, (0,), "cos", (2,), _normalize_nu_poly(0.2, 1)),
             Term(0, (0,), "cos", (0,), _normalize_nu_poly([0.0, -1.0], 1)))
        sysm = build_extreme_integrable(2, H, P, n=1, m=1, s=1)
        res = sysm.reversibility_check()
        assert res <= 1e-13

    def test_planted_defect_detected(self):
        tau = 0.37
        G = InvolutionSpec(n=1, m=1, p=1, delta=-1)

        def field(x, y, z, nu, eps):
            dz = np.zeros_like(z)
            # row with K = -1: a sin term there violates h(-x,-y,Kz) = -K h
            dz[1] = tau * np.sin(x[0])
            return np.zeros_like(x), np.zeros_like(y), dz

        res = reversibility_residual(field, G, samples=200)
        assert res >= tau / 2

    def test_zero_field(self):
        G = InvolutionSpec(n=1, m=1, p=1, delta=-1)

        def field(x, y, z, nu, eps):
            return np.zeros_like(x), np.zeros_like(y), np.zeros_like(z)

        assert reversibility_residual(field, G, samples=20) == 0.0


def test_bracket_matches_finite_difference_commutator():
    # [V,U] = DU.V - DV.U, with the directional derivatives approximated by
    # central differences along the other field
    rng = np.random.default_rng(7)

    def pad(F, jm):
        return AffineTorusField(F.a.truncated(jm), F.b.truncated(jm),
                                F.c.truncated(jm))

    # content has degree 3, so the bracket is exactly representable at 7
    V = pad(random_affine_field(rng, 1, 3, 3, scale=0.5), 7)
    U = pad(random_affine_field(rng, 1, 3, 3, scale=0.5), 7)
    B = lie_bracket(V, U)
    x = rng.uniform(0, 2 * np.pi, size=(1, 5))
    X = rng.uniform(-0.4, 0.4, size=(3, 5))
    h = 1e-6

    def directional(F, along_x, along_X):
        fp = F.evaluate(x + h * along_x, X + h * along_X)
        fm = F.evaluate(x - h * along_x, X - h * along_X)
        return (fp[0] - fm[0]) / (2 * h), (fp[1] - fm[1]) / (2 * h)

    vx, vX = V.evaluate(x, X)
    ux, uX = U.evaluate(x, X)
    dU_V = directional(U, vx, vX)
    dV_U = directional(V, ux, uX)
    fd_x = dU_V[0] - dV_U[0]
    fd_X = dU_V[1] - dV_U[1]
    bx, bX = B.evaluate(x, X)
    assert np.max(np.abs(fd_x - bx)) <= 1e-7
    assert np.max(np.abs(fd_X - bX)) <= 1e-7
