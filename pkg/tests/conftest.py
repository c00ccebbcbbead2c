import numpy as np
import pytest

from revkam.fourier import analyze_values
from revkam.reversing import AffineTorusField, InvolutionSpec
from revkam.systems import build_context2_example
from revkam.tmatrix import TMatrixSpec, tmatrix_dense


def random_affine_field(rng, n, N, jmax, scale=1.0):
    m = 2 * jmax + 1
    return AffineTorusField(
        analyze_values(scale * rng.standard_normal((m,) * n + (n,)), n, jmax),
        analyze_values(scale * rng.standard_normal((m,) * n + (N,)), n, jmax),
        analyze_values(scale * rng.standard_normal((m,) * n + (N, N)), n, jmax),
    )


def standard_omega_block(m, d1=0, d2=1, d3=0, alpha=(), beta=(np.sqrt(2.0),)):
    t = TMatrixSpec(d1, d2, d3, alpha, beta)
    N = m + 2 * t.p
    Omega = np.zeros((N, N))
    Omega[m:, m:] = tmatrix_dense(t)
    return Omega, t


@pytest.fixture(scope="session")
def desk_family_d2():
    """n=1, m=1, p=1 elliptic Floquet block, s=3: the bundled context-2 family."""
    return build_context2_example(seed=7)


@pytest.fixture(scope="session")
def desk_family_d1():
    """n=1, m=1, p=1 hyperbolic block (d1=1, d=0), s=3."""
    return build_context2_example(seed=13, d1=1, d2=0, d3=0)


@pytest.fixture(scope="session")
def desk_solution_d2(desk_family_d2):
    """The eps = 1e-3 solution of the bundled family, shared across tests."""
    from revkam.solver import SolverConfig, find_torus_context2
    cfg = SolverConfig(jmax=14)
    (sol,) = find_torus_context2(desk_family_d2, np.zeros(3), [1e-3], cfg=cfg)
    return sol
