"""Block normal forms of matrices anti-commuting with an involution.

A matrix Lambda with Lambda K = -K Lambda and simple spectrum has eigenvalues
in real pairs (alpha, -alpha), imaginary pairs (i beta, -i beta) and complex
quadruplets +/- alpha +/- i beta.  In a suitable real basis, K becomes
diag(1, -1, ..., 1, -1) and Lambda the block-diagonal matrix
T(d1, d2, d3; alpha, beta) assembled from

    [[0, a], [a, 0]]      (d1 blocks, real pairs),
    [[0, b], [-b, 0]]     (d2 blocks, imaginary pairs),
    4x4 mixed blocks      (d3 blocks, quadruplets).

This module builds those normal forms, classifies general anti-commuting
pairs (K, Lambda), and produces the centralizer and reversible-kernel bases
used by the homological solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fourier import FourierSeries
from .reversing import AffineTorusField, InvolutionSpec, standard_K

__all__ = [
    "TMatrixSpec",
    "SpectrumClassification",
    "KernelBasis",
    "tmatrix_dense",
    "tmatrix_spectrum",
    "classify_anticommuting_pair",
    "commutant_basis",
    "kernel_basis_minus",
]


@dataclass(frozen=True)
class TMatrixSpec:
    """Parameters (d1, d2, d3; alpha, beta) of the block normal form."""

    d1: int
    d2: int
    d3: int
    alpha: tuple  # length d1 + d3
    beta: tuple   # length d2 + d3

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if min(self.d1, self.d2, self.d3) < 0:
            raise ValueError("block counts must be nonnegative")
        if len(self.alpha) != self.d1 + self.d3:
            raise ValueError("alpha must have length d1 + d3")
        if len(self.beta) != self.d2 + self.d3:
            raise ValueError("beta must have length d2 + d3")

    @property
    def p(self) -> int:
        return self.d1 + self.d2 + 2 * self.d3


def _quad_block(a: float, b: float) -> np.ndarray:
    return np.array([
        [0.0, a, 0.0, b],
        [a, 0.0, b, 0.0],
        [0.0, -b, 0.0, a],
        [-b, 0.0, a, 0.0],
    ])


def tmatrix_dense(t: TMatrixSpec) -> np.ndarray:
    """Assemble the dense 2p x 2p block-diagonal matrix."""
    blocks = []
    for k in range(t.d1):
        a = t.alpha[k]
        blocks.append(np.array([[0.0, a], [a, 0.0]]))
    for l in range(t.d2):
        b = t.beta[l]
        blocks.append(np.array([[0.0, b], [-b, 0.0]]))
    for i in range(t.d3):
        blocks.append(_quad_block(t.alpha[t.d1 + i], t.beta[t.d2 + i]))
    if not blocks:
        return np.zeros((0, 0))
    out = np.zeros((2 * t.p, 2 * t.p))
    pos = 0
    for blk in blocks:
        s = blk.shape[0]
        out[pos:pos + s, pos:pos + s] = blk
        pos += s
    return out


def tmatrix_spectrum(t: TMatrixSpec) -> np.ndarray:
    """Eigenvalues: {+-alpha_k} u {+-i beta_l} u {+-alpha +- i beta quadruplets}."""
    eig = []
    for k in range(t.d1):
        eig.extend([t.alpha[k], -t.alpha[k]])
    for l in range(t.d2):
        eig.extend([1j * t.beta[l], -1j * t.beta[l]])
    for i in range(t.d3):
        a, b = t.alpha[t.d1 + i], t.beta[t.d2 + i]
        eig.extend([a + 1j * b, a - 1j * b, -a + 1j * b, -a - 1j * b])
    return np.array(eig, dtype=complex)


@dataclass
class SpectrumClassification:
    """Normal-form data recovered from an anti-commuting pair (K, Lambda)."""

    tspec: TMatrixSpec
    basis: np.ndarray  # columns e_i: basis^-1 Lambda basis = T, basis^-1 K basis = K0

    @property
    def d1(self):
        return self.tspec.d1

    @property
    def d2(self):
        return self.tspec.d2

    @property
    def d3(self):
        return self.tspec.d3

    @property
    def alpha(self):
        return np.array(self.tspec.alpha)

    @property
    def beta(self):
        return np.array(self.tspec.beta)

    def residuals(self, K: np.ndarray, Lam: np.ndarray):
        Binv = np.linalg.inv(self.basis)
        rl = np.max(np.abs(Binv @ Lam @ self.basis - tmatrix_dense(self.tspec)))
        rk = np.max(np.abs(Binv @ K @ self.basis - standard_K(self.tspec.p)))
        return float(rl), float(rk)


def _norm_phase(v: np.ndarray) -> np.ndarray:
    """Scale/phase-normalize an eigenvector: largest |component| -> 1 (real positive)."""
    i = int(np.argmax(np.abs(v)))
    return v / v[i]


def classify_anticommuting_pair(K: np.ndarray, Lam: np.ndarray,
                                spectral_gap_tol: float | None = None,
                                pair_tol: float | None = None) -> SpectrumClassification:
    """Classify (K, Lambda) with K^2 = I, Lambda K = -K Lambda, simple spectrum.

    Returns block counts, positive alpha/beta parameters (sorted ascending
    within each class) and a real basis realizing both normal forms
    simultaneously.  Raises on non-anticommuting input, a non-simple
    spectrum, or a zero eigenvalue.
    """
    K = np.asarray(K, float)
    Lam = np.asarray(Lam, float)
    twop = K.shape[0]
    if twop % 2 or K.shape != Lam.shape or K.shape != (twop, twop):
        raise ValueError("K and Lambda must be equal-size even-dimensional matrices")
    scale = max(np.linalg.norm(Lam), 1e-30)
    if spectral_gap_tol is None:
        spectral_gap_tol = 1e-8 * scale
    if pair_tol is None:
        pair_tol = 1e-8 * scale
    if np.max(np.abs(K @ K - np.eye(twop))) > 1e-10:
        raise ValueError("K is not involutive")
    if np.max(np.abs(Lam @ K + K @ Lam)) > 1e-10 * scale:
        raise ValueError("not anti-commuting")

    w, V = np.linalg.eig(Lam)
    # simplicity: all pairwise gaps above tolerance
    gaps = np.abs(w[:, None] - w[None, :]) + np.eye(twop)
    if np.min(gaps) < spectral_gap_tol:
        raise ValueError("spectrum not simple")
    if np.min(np.abs(w)) < spectral_gap_tol:
        raise ValueError("zero eigenvalue: spectrum must avoid 0")

    # representatives: Re > 0, or Re ~ 0 and Im > 0
    real_reps, imag_reps, quad_reps = [], [], []
    for i, lam in enumerate(w):
        re, im = lam.real, lam.imag
        if abs(im) <= pair_tol and re > pair_tol:
            real_reps.append(i)
        elif abs(re) <= pair_tol and im > pair_tol:
            imag_reps.append(i)
        elif re > pair_tol and im > pair_tol:
            quad_reps.append(i)
    real_reps.sort(key=lambda i: w[i].real)
    imag_reps.sort(key=lambda i: w[i].imag)
    quad_reps.sort(key=lambda i: (w[i].real, w[i].imag))
    d1, d2, d3 = len(real_reps), len(imag_reps), len(quad_reps)
    if d1 + d2 + 2 * d3 != twop // 2:
        raise ValueError("eigenvalues do not form +/- pairs")

    cols = []
    alphas, betas = [], []
    alphas_q, betas_q = [], []
    for i in real_reps:
        a = w[i].real
        v = _norm_phase(V[:, i])
        v = np.real(v)
        v = v / max(np.abs(v).max(), 1e-300)
        e1 = v + K @ v
        e2 = v - K @ v
        s = 1.0 / np.linalg.norm(e1)
        cols.extend([s * e1, s * e2])
        alphas.append(a)
    for i in imag_reps:
        b = w[i].imag
        v = _norm_phase(V[:, i])
        # enforce K v = conj(v) by a half-phase rotation
        kv = K @ v
        j = int(np.argmax(np.abs(v)))
        cph = kv[j] / np.conj(v[j])
        v = v * np.exp(-0.5j * np.angle(cph))
        e1 = np.real(v)
        e2 = np.imag(v)
        s = 1.0 / np.linalg.norm(e1)
        cols.extend([s * e1, s * e2])
        betas.append(b)
    for i in quad_reps:
        a, b = w[i].real, w[i].imag
        v = _norm_phase(V[:, i])
        p1 = v + K @ v
        p2 = v - K @ v
        e1, e3 = np.real(p1), np.imag(p1)
        e2, e4 = np.real(p2), np.imag(p2)
        s = 1.0 / np.linalg.norm(e1)
        cols.extend([s * e1, s * e2, s * e3, s * e4])
        alphas_q.append(a)
        betas_q.append(b)

    # column order is d1-blocks, d2-blocks, d3-blocks but the quadruplet
    # columns were appended as (e1, e2, e3, e4) contiguously, matching the
    # 4x4 normal-form layout.
    basis = np.column_stack(cols)
    tspec = TMatrixSpec(d1, d2, d3, tuple(alphas) + tuple(alphas_q),
                        tuple(betas) + tuple(betas_q))
    cls = SpectrumClassification(tspec, basis)
    rl, rk = cls.residuals(K, Lam)
    tol = 1e-8 * max(1.0, scale) * max(np.linalg.cond(basis), 1.0)
    if rl > tol or rk > tol:
        raise ValueError(f"normal-form residual too large: {rl:.2e}, {rk:.2e}")
    return cls


# -- centralizer and reversible kernel --------------------------------------

def _read_tmatrix(M: np.ndarray, gap_tol: float = 1e-12) -> TMatrixSpec:
    """Recover the (d1, d2, d3; alpha, beta) parameters of an exact T-matrix."""
    twop = M.shape[0]
    p = twop // 2
    pos = 0
    d1 = d2 = d3 = 0
    alphas, betas, alphas_q, betas_q = [], [], [], []
    while pos < twop:
        if pos + 4 <= twop and (abs(M[pos, pos + 1]) > 0 or abs(M[pos + 1, pos]) > 0) \
                and pos + 3 < twop and (abs(M[pos, pos + 3]) > 0 or abs(M[pos + 2, pos + 1]) > 0):
            a = M[pos, pos + 1]
            b = M[pos, pos + 3]
            if np.max(np.abs(M[pos:pos + 4, pos:pos + 4] - _quad_block(a, b))) > gap_tol:
                raise ValueError("matrix is not in T normal form")
            alphas_q.append(a)
            betas_q.append(b)
            d3 += 1
            pos += 4
        else:
            blk = M[pos:pos + 2, pos:pos + 2]
            if abs(blk[0, 1] - blk[1, 0]) <= gap_tol:
                alphas.append(blk[0, 1])
                d1 += 1
            elif abs(blk[0, 1] + blk[1, 0]) <= gap_tol:
                betas.append(blk[0, 1])
                d2 += 1
            else:
                raise ValueError("matrix is not in T normal form")
            if abs(blk[0, 0]) > gap_tol or abs(blk[1, 1]) > gap_tol:
                raise ValueError("matrix is not in T normal form")
            pos += 2
    if d1 + d2 + 2 * d3 != p:
        raise ValueError("block counts inconsistent")
    t = TMatrixSpec(d1, d2, d3, tuple(alphas) + tuple(alphas_q),
                    tuple(betas) + tuple(betas_q))
    if np.max(np.abs(tmatrix_dense(t) - M)) > gap_tol:
        raise ValueError("matrix is not in canonical T block order")
    return t


def _block_offsets(t: TMatrixSpec):
    offs = []
    pos = 0
    for _ in range(t.d1):
        offs.append(("d1", pos))
        pos += 2
    for _ in range(t.d2):
        offs.append(("d2", pos))
        pos += 2
    for _ in range(t.d3):
        offs.append(("d3", pos))
        pos += 4
    return offs


def split_tmatrix_structure(Omega: np.ndarray, m: int):
    """Split Omega = blockdiag(0_m, T(...)) and validate the structure."""
    Omega = np.asarray(Omega, float)
    if m and (np.max(np.abs(Omega[:m, :])) > 0 or np.max(np.abs(Omega[:, :m])) > 0):
        raise ValueError("Omega must vanish on the m-block rows and columns")
    return _read_tmatrix(Omega[m:, m:])


def commutant_basis(Omega: np.ndarray, m: int) -> list[np.ndarray]:
    """Basis of the centralizer {c : Omega c = c Omega}.

    Requires Omega = blockdiag(0_m, T(d1,d2,d3;alpha,beta)) with simple
    T-block spectrum.  The basis is the m^2 matrix units of the free gl(m)
    block plus the per-block (w, q), (t, r), (w, q, t, r) families; total
    dimension m^2 + 2 (d1 + d2 + 2 d3).
    """
    Omega = np.asarray(Omega, float)
    N = Omega.shape[0]
    t = split_tmatrix_structure(Omega, m)
    spec = tmatrix_spectrum(t)
    if len(spec):
        gaps = np.abs(spec[:, None] - spec[None, :]) + np.eye(len(spec))
        if np.min(gaps) < 1e-8 * max(1.0, np.max(np.abs(spec))):
            raise ValueError("non-simple Lambda spectrum: centralizer would be larger")
    out = []
    for i in range(m):
        for j in range(m):
            E = np.zeros((N, N))
            E[i, j] = 1.0
            out.append(E)
    q2 = np.array([[0.0, 1.0], [1.0, 0.0]])
    r2 = np.array([[0.0, 1.0], [-1.0, 0.0]])
    for kind, off in _block_offsets(t):
        o = m + off
        if kind in ("d1", "d2"):
            W = np.zeros((N, N))
            W[o:o + 2, o:o + 2] = np.eye(2)
            Q = np.zeros((N, N))
            Q[o:o + 2, o:o + 2] = q2 if kind == "d1" else r2
            out.extend([W, Q])
        else:
            for gen in _quad_centralizer_generators():
                M = np.zeros((N, N))
                M[o:o + 4, o:o + 4] = gen
                out.append(M)
    return out


def _quad_centralizer_generators():
    w = np.eye(4)
    q = np.array([
        [0, 1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, 1],
        [0, 0, 1, 0],
    ], dtype=float)
    t = np.array([
        [0, 0, 1, 0],
        [0, 0, 0, 1],
        [-1, 0, 0, 0],
        [0, -1, 0, 0],
    ], dtype=float)
    r = np.array([
        [0, 0, 0, 1],
        [0, 0, 1, 0],
        [0, -1, 0, 0],
        [-1, 0, 0, 0],
    ], dtype=float)
    return [w, q, t, r]


@dataclass
class KernelBasis:
    """Generators of the constant kernel fields in one symmetry eigenspace.

    For kind "minus" (the reversible side) each generator triple (a0, b0, c0)
    satisfies Omega b0 = 0, L b0 = -b0, [Omega, c0] = 0, c0 L = -L c0,
    assembled in the fixed order a-generators, b-generators (delta = -1
    only), q-generators, r-generators.  For kind "plus" (the equivariant
    side) the sign conditions flip and there are no a-generators.
    """

    n: int
    N: int
    m: int
    tspec: TMatrixSpec
    delta: int
    a_gens: np.ndarray = field(repr=False)  # (na, n)
    b_gens: np.ndarray = field(repr=False)  # (nb, N)
    c_gens: np.ndarray = field(repr=False)  # (nc, N, N)
    kind: str = "minus"

    @property
    def dim(self) -> int:
        return len(self.a_gens) + len(self.b_gens) + len(self.c_gens)

    @property
    def n_q(self) -> int:
        return self.tspec.d1 + self.tspec.d3

    @property
    def n_r(self) -> int:
        return self.tspec.d2 + self.tspec.d3

    def assemble(self, coords: np.ndarray):
        """Map kernel coordinates to constants (a0, b0, c0)."""
        coords = np.asarray(coords, float)
        na, nb = len(self.a_gens), len(self.b_gens)
        a0 = np.tensordot(coords[:na], self.a_gens, axes=(0, 0)) \
            if na else np.zeros(self.n)
        b0 = np.tensordot(coords[na: na + nb], self.b_gens, axes=(0, 0)) \
            if nb else np.zeros(self.N)
        c0 = np.tensordot(coords[na + nb:], self.c_gens, axes=(0, 0)) \
            if len(self.c_gens) else np.zeros((self.N, self.N))
        return a0, b0, c0

    def as_field(self, coords: np.ndarray, jmax: int) -> AffineTorusField:
        a0, b0, c0 = self.assemble(coords)
        return AffineTorusField.constant(self.n, jmax, a0, b0, c0)

    def fields(self, jmax: int) -> list[AffineTorusField]:
        dim = self.dim
        return [self.as_field(np.eye(dim)[i], jmax) for i in range(dim)]

    def project_constants(self, a0, b0, c0):
        """Least-squares coordinates of (a0, b0, c0) and the off-span residual."""
        vec = np.concatenate([np.ravel(a0), np.ravel(b0), np.ravel(c0)])
        cols = []
        dim = self.dim
        for i in range(dim):
            ai, bi, ci = self.assemble(np.eye(dim)[i])
            cols.append(np.concatenate([ai, bi, ci.ravel()]))
        A = np.column_stack(cols)
        coords, *_ = np.linalg.lstsq(A, vec, rcond=None)
        resid = float(np.max(np.abs(A @ coords - vec))) if vec.size else 0.0
        return coords, resid

    def split_coords(self, coords: np.ndarray):
        """Slice coordinates into (lambda, mu, q, r); minus-kind layout only."""
        if self.kind != "minus":
            raise ValueError("coordinate split is defined for the reversible kernel")
        nb = len(self.b_gens)
        lam = coords[: self.n]
        mu = coords[self.n: self.n + nb]
        q = coords[self.n + nb: self.n + nb + self.n_q]
        r = coords[self.n + nb + self.n_q:]
        return lam, mu, q, r


def kernel_basis_minus(Omega: np.ndarray, G: InvolutionSpec) -> KernelBasis:
    """Generators of the reversible part of the ad_D kernel on constant fields.

    For Omega = blockdiag(0_m, T(d1,d2,d3;alpha,beta)) and the reverser with
    fiber involution L = blockdiag(delta I_m, K):

      * a0 in R^n arbitrary,
      * b0 supported on the m-block, present only for delta = -1,
      * c0 = blockdiag(0_m, T(d1,d2,d3;q,r)) with free q, r.

    Dimension n + m [delta=-1] + (d1+d3) + (d2+d3).
    """
    Omega = np.asarray(Omega, float)
    N = Omega.shape[0]
    m = G.m
    if N != G.N:
        raise ValueError("Omega size inconsistent with involution")
    t = split_tmatrix_structure(Omega, m)
    spec = tmatrix_spectrum(t)
    if len(spec):
        gaps = np.abs(spec[:, None] - spec[None, :]) + np.eye(len(spec))
        if np.min(gaps) < 1e-8 * max(1.0, np.max(np.abs(spec))):
            raise ValueError("non-simple Lambda spectrum: centralizer would be larger")

    a_gens = np.eye(G.n)
    if G.delta == -1 and m > 0:
        b_gens = np.zeros((m, N))
        b_gens[:, :m] = np.eye(m)
    else:
        b_gens = np.zeros((0, N))

    c_gens = []
    nq = t.d1 + t.d3
    for i in range(nq):
        qs = np.zeros(nq)
        qs[i] = 1.0
        c_gens.append(_embed_tblock(N, m, TMatrixSpec(t.d1, t.d2, t.d3, qs,
                                                      np.zeros(t.d2 + t.d3))))
    nr = t.d2 + t.d3
    for i in range(nr):
        rs = np.zeros(nr)
        rs[i] = 1.0
        c_gens.append(_embed_tblock(N, m, TMatrixSpec(t.d1, t.d2, t.d3,
                                                      np.zeros(nq), rs)))
    c_gens = np.array(c_gens) if c_gens else np.zeros((0, N, N))
    return KernelBasis(G.n, N, m, t, G.delta, a_gens, b_gens, c_gens)


def _embed_tblock(N: int, m: int, t: TMatrixSpec) -> np.ndarray:
    M = np.zeros((N, N))
    M[m:, m:] = tmatrix_dense(t)
    return M


def kernel_basis_plus(Omega: np.ndarray, G: InvolutionSpec) -> KernelBasis:
    """Generators of the equivariant part of the ad_D kernel on constant fields.

    Complementary to :func:`kernel_basis_minus`: a0 = 0, b0 supported on the
    m-block only for delta = +1, and c0 in the centralizer intersected with
    the commutant of L (the gl(m) block plus the diagonal-type w, t block
    families).  This is the gauge freedom of the conjugating chart.
    """
    Omega = np.asarray(Omega, float)
    N = Omega.shape[0]
    m = G.m
    if N != G.N:
        raise ValueError("Omega size inconsistent with involution")
    t = split_tmatrix_structure(Omega, m)

    a_gens = np.zeros((0, G.n))
    if G.delta == 1 and m > 0:
        b_gens = np.zeros((m, N))
        b_gens[:, :m] = np.eye(m)
    else:
        b_gens = np.zeros((0, N))

    c_list = []
    for i in range(m):
        for j in range(m):
            E = np.zeros((N, N))
            E[i, j] = 1.0
            c_list.append(E)
    for kind, off in _block_offsets(t):
        o = m + off
        if kind in ("d1", "d2"):
            W = np.zeros((N, N))
            W[o:o + 2, o:o + 2] = np.eye(2)
            c_list.append(W)
        else:
            gens = _quad_centralizer_generators()
            for gen in (gens[0], gens[2]):   # the w and t families commute with K
                M = np.zeros((N, N))
                M[o:o + 4, o:o + 4] = gen
                c_list.append(M)
    c_gens = np.array(c_list) if c_list else np.zeros((0, N, N))
    return KernelBasis(G.n, N, m, t, G.delta, a_gens, b_gens, c_gens, kind="plus")
