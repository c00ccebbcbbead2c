"""Reversing involutions and the induced structure on affine torus fields.

The phase space is T^n x R^m x R^{2p} with coordinates (x, y, z) and the
reverser G(x, y, z) = (-x, delta*y, K z), where K = diag(1, -1, ..., 1, -1).
The fiber variable is X = (y, z) in R^N, N = m + 2p, and the fiber block of
the tangent involution is L = blockdiag(delta*I_m, K).

Affine torus fields a(x) d/dx + [b(x) + c(x) X] d/dX form a Lie algebra
closed under the push-forward action of G; this module implements that
action, the +/- eigenspace splitting, and context classification.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fourier import (
    FourierSeries,
    directional_derivative,
    pointwise_map,
    series_matmat,
    series_matvec,
    sup_norm,
)

__all__ = [
    "InvolutionSpec",
    "AffineTorusField",
    "ReversibleContext",
    "ad_G",
    "split_pm",
    "classify_context",
    "normalize_torus_involution",
    "fixed_points_on_torus",
    "reversibility_residual",
    "lie_bracket",
]


def standard_K(p: int) -> np.ndarray:
    return np.diag([1.0 if i % 2 == 0 else -1.0 for i in range(2 * p)])


@dataclass(frozen=True)
class InvolutionSpec:
    """The reverser G:(x,y,z) -> (-x, delta*y, Kz).

    ``p = 0`` is allowed so that the integrable models without a z-fiber can
    be expressed; the torus pipelines require p >= 1.
    """

    n: int
    m: int
    p: int
    delta: int

    def __post_init__(self):
        if self.n < 1 or self.m < 0 or self.p < 0:
            raise ValueError("need n >= 1, m >= 0, p >= 0")
        if self.delta not in (-1, 1):
            raise ValueError("delta must be +1 or -1")

    @property
    def N(self) -> int:
        return self.m + 2 * self.p

    def K_matrix(self) -> np.ndarray:
        return standard_K(self.p)

    def L_matrix(self) -> np.ndarray:
        """Fiber block of TG: blockdiag(delta*I_m, K)."""
        L = np.zeros((self.N, self.N))
        L[: self.m, : self.m] = self.delta * np.eye(self.m)
        L[self.m:, self.m:] = self.K_matrix()
        return L

    def tangent_matrix(self) -> np.ndarray:
        """Full linearization diag(-I_n, delta*I_m, K)."""
        T = np.zeros((self.n + self.N, self.n + self.N))
        T[: self.n, : self.n] = -np.eye(self.n)
        T[self.n:, self.n:] = self.L_matrix()
        return T

    def apply(self, x: np.ndarray, X: np.ndarray):
        """G acting on points; x shape (n, ...), X shape (N, ...)."""
        L = self.L_matrix()
        return -x, np.einsum("ij,j...->i...", L, X)

    def fix_dimension(self) -> int:
        """dim Fix G: m + p for delta = +1, p for delta = -1."""
        return self.m + self.p if self.delta == 1 else self.p


class ReversibleContext(Enum):
    CONTEXT1 = "context1"
    CONTEXT2 = "context2"
    EXTREME1 = "extreme1"
    EXTREME2 = "extreme2"


def classify_context(G: InvolutionSpec, torus_codim: int) -> ReversibleContext:
    """Classify dim Fix G against the torus codimension.

    Context 1 means codim/2 <= dimFix <= codim (extreme when dimFix = codim),
    context 2 means 0 <= dimFix < codim/2 (extreme when dimFix = 0).
    """
    d = G.fix_dimension()
    if torus_codim < d:
        raise ValueError(
            f"dim Fix G = {d} exceeds torus codimension {torus_codim}"
        )
    if d == torus_codim:
        return ReversibleContext.EXTREME1
    if d == 0:
        return ReversibleContext.EXTREME2
    if 2 * d >= torus_codim:
        return ReversibleContext.CONTEXT1
    return ReversibleContext.CONTEXT2


@dataclass
class AffineTorusField:
    """Vector field a(x) d/dx + [b(x) + c(x) X] d/dX on T^n x R^N."""

    a: FourierSeries  # R^n valued
    b: FourierSeries  # R^N valued
    c: FourierSeries  # N x N matrix valued

    def __post_init__(self):
        n = self.a.n
        if self.a.value_shape != (n,):
            raise ValueError("a must be R^n valued with n = torus dimension")
        (N,) = self.b.value_shape
        if self.c.value_shape != (N, N):
            raise ValueError("c must be N x N valued")

    @property
    def n(self) -> int:
        return self.a.n

    @property
    def N(self) -> int:
        return self.b.value_shape[0]

    @property
    def jmax(self) -> int:
        return self.a.jmax

    @classmethod
    def zeros(cls, n: int, N: int, jmax: int) -> "AffineTorusField":
        return cls(
            FourierSeries.zeros(n, jmax, (n,)),
            FourierSeries.zeros(n, jmax, (N,)),
            FourierSeries.zeros(n, jmax, (N, N)),
        )

    @classmethod
    def constant(cls, n: int, jmax: int, a0, b0, c0) -> "AffineTorusField":
        return cls(
            FourierSeries.constant(n, jmax, np.asarray(a0, float)),
            FourierSeries.constant(n, jmax, np.asarray(b0, float)),
            FourierSeries.constant(n, jmax, np.asarray(c0, float)),
        )

    def __add__(self, other: "AffineTorusField") -> "AffineTorusField":
        return AffineTorusField(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "AffineTorusField") -> "AffineTorusField":
        return AffineTorusField(self.a - other.a, self.b - other.b, self.c - other.c)

    def __mul__(self, s) -> "AffineTorusField":
        return AffineTorusField(self.a * s, self.b * s, self.c * s)

    __rmul__ = __mul__

    def __neg__(self) -> "AffineTorusField":
        return self * (-1.0)

    def norm(self, refine: int = 1) -> float:
        return max(sup_norm(self.a, refine), sup_norm(self.b, refine),
                   sup_norm(self.c, refine))

    def evaluate(self, x: np.ndarray, X: np.ndarray):
        """Field values at points; returns (dx, dX) with shapes of x, X."""
        pts = np.asarray(x, float)
        av = np.moveaxis(self.a.eval_at(pts), -1, 0)
        bv = np.moveaxis(self.b.eval_at(pts), -1, 0)
        cv = self.c.eval_at(pts)  # (..., N, N)
        cX = np.einsum("...ij,j...->i...", cv, np.asarray(X, float))
        return av, bv + cX

    def symmetrized_real(self) -> "AffineTorusField":
        return AffineTorusField(self.a.symmetrized_real(),
                                self.b.symmetrized_real(),
                                self.c.symmetrized_real())


def ad_G(V: AffineTorusField, G: InvolutionSpec) -> AffineTorusField:
    """Push-forward of an affine torus field by the reverser.

    Ad_G(a dx + (b + cX) dX) = -a(-x) dx + [L b(-x) + L c(-x) L X] dX.
    Exact on coefficients: reflection is an index permutation.
    """
    if V.N != G.N:
        raise ValueError("fiber dimension mismatch")
    L = G.L_matrix()
    ar = V.a.reflect()
    br = V.b.reflect()
    cr = V.c.reflect()
    a_new = FourierSeries(V.n, V.jmax, -ar.coeffs, copy=False)
    b_new = FourierSeries(V.n, V.jmax,
                          np.einsum("ij,...j->...i", L, br.coeffs), copy=False)
    c_new = FourierSeries(V.n, V.jmax,
                          np.einsum("ik,...kl,lj->...ij", L, cr.coeffs, L), copy=False)
    return AffineTorusField(a_new, b_new, c_new)


def split_pm(V: AffineTorusField, G: InvolutionSpec):
    """Eigenspace splitting V = V_plus + V_minus with ad_G V_pm = +/- V_pm."""
    AV = ad_G(V, G)
    plus = (V + AV) * 0.5
    minus = (V - AV) * 0.5
    return plus, minus


def _jacobian_times(vec: FourierSeries, direction: FourierSeries) -> FourierSeries:
    """(D vec) . direction for vector-valued vec; both R^k valued series."""
    parts = [vec.partial(ax) for ax in range(vec.n)]

    def contract(dvals, *dparts):
        out = np.zeros_like(dparts[0])
        for ax in range(vec.n):
            out += dvals[..., ax:ax + 1] * dparts[ax]
        return out

    return pointwise_map(contract, direction, *parts, jmax=vec.jmax)


def lie_bracket(V: AffineTorusField, U: AffineTorusField) -> AffineTorusField:
    """[V, U] = (V . grad) U - (U . grad) V, closed in the affine algebra.

    Componentwise:
      a'' = Da' a - Da a'
      b'' = Db' a - Db a' + c' b - c b'
      c'' = (a . grad) c' - (a' . grad) c + c' c - c c'
    where (a, b, c) belongs to V and (a', b', c') to U.
    """
    a, b, c = V.a, V.b, V.c
    a2, b2, c2 = U.a, U.b, U.c
    a_new = _jacobian_times(a2, a) - _jacobian_times(a, a2)
    b_new = (_jacobian_times(b2, a) - _jacobian_times(b, a2)
             + series_matvec(c2, b) - series_matvec(c, b2))
    c_new = (directional_derivative(c2, a) - directional_derivative(c, a2)
             + series_matmat(c2, c) - series_matmat(c, c2))
    return AffineTorusField(a_new, b_new, c_new)


def normalize_torus_involution(restriction, n: int, samples: int = 100,
                               rng=None, tol: float = 1e-10) -> np.ndarray:
    """Recover the shift putting an anti-rotation phi -> Delta - phi in standard form.

    After the coordinate change x = phi - Delta/2 the restriction becomes
    x -> -x.  Returns Delta/2.  Raises if the sampled map is not affine with
    linear part -I (mod 2 pi).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pts = rng.uniform(0.0, 2.0 * np.pi, size=(samples, n))
    imgs = np.array([np.asarray(restriction(p), float) for p in pts])
    if imgs.shape != (samples, n):
        raise ValueError("restriction must map T^n to T^n")
    deltas = np.mod(imgs + pts, 2.0 * np.pi)
    # constancy of Delta on the circle: compare against the first sample
    ref = deltas[0]
    dev = np.abs(np.mod(deltas - ref + np.pi, 2.0 * np.pi) - np.pi)
    if np.max(dev) > tol:
        raise ValueError("not a quasi-periodic reverser restriction")
    return np.mod(ref, 2.0 * np.pi) / 2.0


def fixed_points_on_torus(n: int) -> np.ndarray:
    """The 2^n fixed points {0; pi}^n of x -> -x on T^n, shape (2^n, n)."""
    return np.array(list(itertools.product((0.0, np.pi), repeat=n)))


def reversibility_residual(field, G: InvolutionSpec, samples: int = 64,
                           rng=None, nu_sampler=None, eps_sampler=None,
                           box: float = 0.5) -> float:
    """Max over random sample points of |TG . F(w) + F(G(w))|.

    ``field(x, y, z, nu, eps) -> (dx, dy, dz)``; the condition Ad_G F = -F
    evaluated pointwise.  nu / eps samplers default to zero-parameter draws.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    K = G.K_matrix()
    for _ in range(samples):
        x = rng.uniform(0.0, 2.0 * np.pi, size=G.n)
        y = rng.uniform(-box, box, size=G.m)
        z = rng.uniform(-box, box, size=2 * G.p)
        nu = np.zeros(0) if nu_sampler is None else np.asarray(nu_sampler(rng))
        eps = 0.0 if eps_sampler is None else float(eps_sampler(rng))
        fx, fy, fz = field(x, y, z, nu, eps)
        gx, gy, gz = field(-x, G.delta * y, K @ z if G.p else z, nu, eps)
        rx = -np.asarray(fx) + np.asarray(gx)
        ry = G.delta * np.asarray(fy) + np.asarray(gy)
        rz = (K @ np.asarray(fz) + np.asarray(gz)) if G.p else np.zeros(0)
        resid = max((np.max(np.abs(r)) if r.size else 0.0) for r in (rx, ry, rz))
        worst = max(worst, resid)
    return worst
