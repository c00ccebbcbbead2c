"""Diophantine certification and the homological equation solver.

The linear operator at the heart of the Newton scheme is ad_D for
D = omega d/dx + Omega X d/dX acting on affine torus fields:

    ad_D(a dx + (b + cX) dX)
        = a_x omega dx + [b_x omega - Omega b + (c_x omega + c Omega - Omega c) X] dX.

Mode by mode in an eigenbasis of Omega the equation ad_D V = rhs decouples
into scalar divisions by i<j,omega> - lambda_k (b-part) and
i<j,omega> - (lambda_k - lambda_l) (c-part).  Divisors with vanishing real
part are exactly the combinations |<j,omega> + <J,beta>| with |J| <= 2
controlled by the Diophantine certificate; resonances at j = 0 span the
finite-dimensional kernel and are diverted into modifying terms.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .fourier import FourierSeries, freq_axis, omega_derivative
from .reversing import AffineTorusField, InvolutionSpec, ad_G
from .tmatrix import KernelBasis, commutant_basis, kernel_basis_minus

__all__ = [
    "DiophantineCertificate",
    "ModifyingTerms",
    "ResonanceError",
    "SmallDivisorError",
    "diophantine_check",
    "ad_D_action",
    "homological_solve",
    "OmegaEigen",
]

log = logging.getLogger(__name__)

RESONANCE_FLOOR = 1e-14
DIVISOR_FLOOR = 1e-12


class ResonanceError(ValueError):
    """An exact (or numerically exact) resonance <j,omega> + <J,beta> = 0."""

    def __init__(self, j, J, value):
        self.j = tuple(int(v) for v in j)
        self.J = tuple(int(v) for v in J)
        self.value = float(value)
        super().__init__(
            f"resonance detected at j={self.j}, J={self.J}: |<j,w>+<J,b>|={value:.3e}"
        )


class SmallDivisorError(ValueError):
    pass


@dataclass(frozen=True)
class DiophantineCertificate:
    """Exhaustive lower bound |<j,omega> + <J,beta>| >= gamma |j|^-tau.

    The check ranges over all 0 < |j|_1 <= jmax_checked and |J|_1 <= 2;
    gamma is the enumerated minimum of |<j,omega> + <J,beta>| |j|_1^tau, so
    the certificate is tight on the checked range.
    """

    omega: tuple
    beta: tuple
    tau: float
    gamma: float
    jmax_checked: int
    min_j: tuple
    min_J: tuple

    @property
    def min_ratio(self) -> float:
        return self.gamma

    def lower_bound(self, j) -> float:
        """Certified bound for a multi-index within the checked range."""
        a = int(np.sum(np.abs(j)))
        if a == 0 or a > self.jmax_checked:
            raise ValueError("multi-index outside certified range")
        return self.gamma * a ** (-self.tau)

    def to_dict(self) -> dict:
        return {
            "omega": list(self.omega),
            "beta": list(self.beta),
            "tau": self.tau,
            "gamma": self.gamma,
            "jmax_checked": self.jmax_checked,
            "minimizer_j": list(self.min_j),
            "minimizer_J": list(self.min_J),
        }


def diophantine_check(omega, beta=(), tau: float = 1.2, jmax_checked: int = 50,
                      resonance_floor: float = RESONANCE_FLOOR) -> DiophantineCertificate:
    """Enumerate the Diophantine ratios and certify the minimum.

    Raises :class:`ResonanceError` when some combination falls below the
    resonance floor, naming the minimizing (j, J).
    """
    omega = np.asarray(omega, float).reshape(-1)
    beta = np.asarray(beta, float).reshape(-1)
    n = omega.shape[0]
    d = beta.shape[0]
    if tau <= n - 1:
        raise ValueError(f"need tau > n - 1 = {n - 1}")

    J_list = [J for J in itertools.product(range(-2, 3), repeat=d)
              if sum(abs(v) for v in J) <= 2] or [()]
    best = np.inf
    best_j, best_J = None, None
    rng_axis = range(-jmax_checked, jmax_checked + 1)
    # enumerate in order of increasing |j|_1 with a canonical sign so the
    # first resonance found (and the one reported) is the primitive smallest
    js = sorted((j for j in itertools.product(rng_axis, repeat=n)
                 if 0 < sum(abs(v) for v in j) <= jmax_checked
                 and next(v for v in j if v != 0) > 0),
                key=lambda j: (sum(abs(v) for v in j), j))
    for j in js:
        a = sum(abs(v) for v in j)
        jw = float(np.dot(j, omega))
        for J in J_list:
            val = abs(jw + (float(np.dot(J, beta)) if d else 0.0))
            if val <= resonance_floor:
                raise ResonanceError(j, J if d else (), val)
            ratio = val * a ** tau
            if ratio < best:
                best, best_j, best_J = ratio, j, (J if d else ())
    return DiophantineCertificate(
        omega=tuple(omega), beta=tuple(beta), tau=float(tau), gamma=float(best),
        jmax_checked=int(jmax_checked), min_j=tuple(best_j), min_J=tuple(best_J),
    )


@dataclass
class ModifyingTerms:
    """Constant counter-terms lambda dx + [mu-hat + M X] dX in a kernel basis.

    On the reversible ("minus") basis the coordinates split into lambda
    (in R^n), mu (the m-block of the fiber shift, present only for
    delta = -1 and padded by 2p zeros when assembled), and the q, r block
    parameters of M = blockdiag(0_m, T(d1,d2,d3;q,r)).
    """

    coords: np.ndarray
    basis: KernelBasis

    def __post_init__(self):
        self.coords = np.asarray(self.coords, float).reshape(self.basis.dim)

    @classmethod
    def zero(cls, basis: KernelBasis) -> "ModifyingTerms":
        return cls(np.zeros(basis.dim), basis)

    @classmethod
    def from_coords(cls, coords: np.ndarray, basis: KernelBasis) -> "ModifyingTerms":
        return cls(coords, basis)

    @property
    def lam(self) -> np.ndarray:
        return self.basis.split_coords(self.coords)[0]

    @property
    def mu(self) -> np.ndarray:
        return self.basis.split_coords(self.coords)[1]

    @property
    def q(self) -> np.ndarray:
        return self.basis.split_coords(self.coords)[2]

    @property
    def r(self) -> np.ndarray:
        return self.basis.split_coords(self.coords)[3]

    def __add__(self, other: "ModifyingTerms") -> "ModifyingTerms":
        return ModifyingTerms(self.coords + other.coords, self.basis)

    def __sub__(self, other: "ModifyingTerms") -> "ModifyingTerms":
        return ModifyingTerms(self.coords - other.coords, self.basis)

    def __mul__(self, s) -> "ModifyingTerms":
        return ModifyingTerms(self.coords * s, self.basis)

    __rmul__ = __mul__

    def constants(self):
        """(a0, b0, c0) of the assembled kernel field."""
        return self.basis.assemble(self.coords)

    def as_field(self, jmax: int) -> AffineTorusField:
        return self.basis.as_field(self.coords, jmax)

    def norm(self) -> float:
        return float(np.max(np.abs(self.coords))) if self.coords.size else 0.0


def ad_D_action(V: AffineTorusField, omega, Omega) -> AffineTorusField:
    """[D, V] for D = omega dx + Omega X dX, exact on retained modes."""
    omega = np.asarray(omega, float)
    Omega = np.asarray(Omega, float)
    a_new = omega_derivative(V.a, omega)
    b_new = omega_derivative(V.b, omega)
    b_new = FourierSeries(V.n, V.jmax,
                          b_new.coeffs - np.einsum("ij,...j->...i", Omega, V.b.coeffs),
                          copy=False)
    c_new = omega_derivative(V.c, omega)
    comm = (np.einsum("...ik,kj->...ij", V.c.coeffs, Omega)
            - np.einsum("ik,...kj->...ij", Omega, V.c.coeffs))
    c_new = FourierSeries(V.n, V.jmax, c_new.coeffs + comm, copy=False)
    return AffineTorusField(a_new, b_new, c_new)


@dataclass
class OmegaEigen:
    """Cached eigen-structure of Omega = blockdiag(0_m, Lambda).

    ``order`` optionally permutes the Lambda eigenpairs; the solved modifying
    terms are invariant under this choice (tested), only the internal gauge
    of intermediate quantities changes.
    """

    Omega: np.ndarray
    m: int
    lam: np.ndarray   # eigenvalues, zeros first (length N)
    S: np.ndarray     # eigenvector matrix, blockdiag(I_m, S_Lambda)
    Sinv: np.ndarray

    @classmethod
    def build(cls, Omega: np.ndarray, m: int, order=None) -> "OmegaEigen":
        Omega = np.asarray(Omega, float)
        N = Omega.shape[0]
        if m and (np.max(np.abs(Omega[:m, :])) > 0 or np.max(np.abs(Omega[:, :m])) > 0):
            raise ValueError("Omega must be blockdiag(0_m, Lambda)")
        Lam = Omega[m:, m:]
        if Lam.size:
            w, V = np.linalg.eig(Lam)
            if order is not None:
                w = w[list(order)]
                V = V[:, list(order)]
        else:
            w = np.zeros(0, complex)
            V = np.zeros((0, 0), complex)
        lam = np.concatenate([np.zeros(m, complex), w])
        S = np.zeros((N, N), complex)
        S[:m, :m] = np.eye(m)
        S[m:, m:] = V
        return cls(Omega, m, lam, S, np.linalg.inv(S))

    def resonant_pairs(self, gap_tol: float = 1e-9) -> np.ndarray:
        """Boolean (N, N) mask of index pairs with lambda_k = lambda_l."""
        N = len(self.lam)
        mask = np.abs(self.lam[:, None] - self.lam[None, :]) <= gap_tol * max(
            1.0, np.max(np.abs(self.lam)) if N else 1.0)
        return mask

    def zero_eigs(self, gap_tol: float = 1e-9) -> np.ndarray:
        return np.abs(self.lam) <= gap_tol * max(1.0, np.max(np.abs(self.lam)) if len(self.lam) else 1.0)


def _certify_divisors(divisors: np.ndarray, use_mask: np.ndarray, lam_diff: np.ndarray,
                      j1norm: np.ndarray, cert: DiophantineCertificate,
                      divisor_floor: float, what: str):
    """Assert every used divisor obeys the certificate / floor; log the worst."""
    used = np.abs(divisors[use_mask])
    if used.size == 0:
        return
    worst = float(np.min(used))
    if worst < divisor_floor:
        raise SmallDivisorError(
            f"small divisor below floor in {what}: {worst:.3e} < {divisor_floor:.1e}")
    # certified lower bound applies where Re(lambda-part) = 0 and j != 0
    re_zero = np.abs(np.real(lam_diff)) <= 1e-9 * max(1.0, float(np.max(np.abs(lam_diff))) if lam_diff.size else 1.0)
    jj = np.broadcast_to(
        j1norm.reshape(j1norm.shape + (1,) * (divisors.ndim - j1norm.ndim)),
        divisors.shape)
    sel = use_mask & np.broadcast_to(re_zero, divisors.shape) & (jj > 0)
    if np.any(sel):
        bound = cert.gamma * jj[sel].astype(float) ** (-cert.tau)
        vals = np.abs(divisors[sel])
        bad = vals < bound * (1.0 - 1e-9)
        if np.any(bad):
            raise SmallDivisorError(
                f"divisor in {what} violates certificate: "
                f"{float(np.min(vals[bad])):.3e}")
        log.debug("%s: %d certified divisors, min |d| = %.3e", what, vals.size,
                  float(np.min(vals)))


def homological_solve(rhs: AffineTorusField, omega, Omega, G: InvolutionSpec,
                      cert: DiophantineCertificate, eig: OmegaEigen | None = None,
                      kernel: KernelBasis | None = None, sign: int = -1,
                      divisor_floor: float = DIVISOR_FLOOR,
                      reversibility_tol: float = 1e-10):
    """Solve ad_D V + assemble(R) = rhs on the retained modes.

    With the default ``sign = -1``, rhs must lie in the reversible (-G) part;
    the returned V is the minimal-norm solution (zero component along
    ker ad_D, which makes it unique and automatically G-equivariant), and R
    collects the resonant part of rhs projected on the reversible kernel
    basis.  ``sign = +1`` solves the mirror branch: equivariant rhs,
    reversible V, R on the equivariant kernel.
    """
    omega = np.asarray(omega, float)
    Omega = np.asarray(Omega, float)
    n, N, jmax = rhs.n, rhs.N, rhs.jmax
    m = G.m
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    if eig is None:
        eig = OmegaEigen.build(Omega, m)
    if kernel is None:
        if sign == -1:
            kernel = kernel_basis_minus(Omega, G)
        else:
            from .tmatrix import kernel_basis_plus
            kernel = kernel_basis_plus(Omega, G)

    scale = max(rhs.norm(), 1e-300)
    sym = ad_G(rhs, G) - float(sign) * rhs
    if sym.norm() > reversibility_tol * max(1.0, scale):
        side = "reversible" if sign == -1 else "equivariant"
        raise ValueError(f"rhs not {side}: |ad_G rhs - ({sign}) rhs| = "
                         f"{sym.norm():.3e}")
    if cert.jmax_checked < jmax:
        raise ValueError("certificate does not cover the working truncation order")

    # mode data
    freqs = freq_axis(jmax)
    jgrids = np.meshgrid(*([freqs] * n), indexing="ij")
    jw = sum(w * jg for w, jg in zip(omega, jgrids))          # (M,)*n real
    j1 = sum(np.abs(jg) for jg in jgrids)                     # l1 norms
    zero_mode = j1 == 0
    lam = eig.lam
    S, Sinv = eig.S, eig.Sinv
    gap_scale = max(1.0, float(np.max(np.abs(lam))) if len(lam) else 1.0)

    # --- a-part: i<j,w> a_j = rhs_a_j, resonant only at j = 0 -------------
    div_a = 1j * jw
    use_a = ~zero_mode
    _certify_divisors(div_a[..., None], use_a[..., None], np.zeros(1, complex),
                      j1, cert, divisor_floor, "a-equation")
    a_coef = np.zeros_like(rhs.a.coeffs)
    a_coef[use_a] = rhs.a.coeffs[use_a] / div_a[use_a][..., None]
    lam_res = np.real(rhs.a.mode((0,) * n))

    # --- b-part: (i<j,w> - Omega) b_j = rhs_b_j ----------------------------
    bhat = np.einsum("kl,...l->...k", Sinv, rhs.b.coeffs)
    div_b = 1j * jw[..., None] - lam.reshape((1,) * n + (N,))
    res_b = zero_mode[..., None] & eig.zero_eigs().reshape((1,) * n + (N,))
    use_b = ~res_b
    _certify_divisors(div_b, use_b, -lam.reshape(1, N), j1, cert, divisor_floor,
                      "b-equation")
    bsol = np.zeros_like(bhat)
    bsol[use_b] = bhat[use_b] / div_b[use_b]
    b_coef = np.einsum("kl,...l->...k", S, bsol)
    # resonant content: the ker(Omega) block of b_0, read in plain coordinates
    b0_full = np.real(rhs.b.mode((0,) * n))
    mu_res = np.zeros_like(b0_full)
    mu_res[:m] = b0_full[:m]

    # --- c-part: (i<j,w> - (lam_k - lam_l)) chat_kl = rhat_kl --------------
    chat = np.einsum("ki,...ij->...kj", Sinv, np.einsum("...il,lj->...ij",
                                                        rhs.c.coeffs, S))
    lam_diff = lam[:, None] - lam[None, :]
    div_c = 1j * jw[..., None, None] - lam_diff.reshape((1,) * n + (N, N))
    res_c = zero_mode[..., None, None] & eig.resonant_pairs().reshape((1,) * n + (N, N))
    use_c = ~res_c
    _certify_divisors(div_c, use_c, -lam_diff.reshape(1, N, N), j1, cert,
                      divisor_floor, "c-equation")
    csol = np.zeros_like(chat)
    csol[use_c] = chat[use_c] / div_c[use_c]
    c_coef = np.einsum("ki,...ij->...kj", S, np.einsum("...il,lj->...ij", csol, Sinv))
    # resonant constant part of the c equation, mapped back to real coords
    chat0 = chat[(0,) * n]
    cres_hat = np.where(eig.resonant_pairs(), chat0, 0.0)
    M_res = np.real(S @ cres_hat @ Sinv)

    V = AffineTorusField(
        FourierSeries(n, jmax, a_coef, copy=False).symmetrized_real(),
        FourierSeries(n, jmax, b_coef, copy=False).symmetrized_real(),
        FourierSeries(n, jmax, c_coef, copy=False).symmetrized_real(),
    )
    V = _remove_kernel_component(V, Omega, m)
    # the minimal-norm solution lies in the mirror symmetry class of rhs;
    # project and flag any leftover asymmetry
    keep = 0.5 * (V + float(-sign) * ad_G(V, G))
    drop = 0.5 * (V - float(-sign) * ad_G(V, G))
    if drop.norm() > max(1e-10, 1e-8 * scale):
        raise ValueError("solution left its symmetry class: "
                         f"{drop.norm():.3e}")
    V = keep

    coords, resid = kernel.project_constants(lam_res, mu_res, M_res)
    if resid > max(1e-12, 1e-10 * scale):
        raise ValueError(
            f"rhs resonant part off the kernel span by {resid:.3e}")
    R = ModifyingTerms.from_coords(coords, kernel)
    return V, R


def _remove_kernel_component(V: AffineTorusField, Omega: np.ndarray, m: int) -> AffineTorusField:
    """Orthogonal projection of the j = 0 part onto the complement of ker ad_D.

    The kernel lives at j = 0: a0 free, b0 in ker Omega, c0 in the
    centralizer.  Removing it in the Euclidean coefficient inner product
    makes V the minimal-norm solution, matching a dense least-squares solve.
    """
    n = V.n
    idx0 = (0,) * n
    V.a.coeffs[idx0] = 0.0
    b0 = V.b.coeffs[idx0].copy()
    b0[:m] = 0.0  # ker Omega = m-block exactly
    V.b.coeffs[idx0] = b0
    c0 = V.c.coeffs[idx0]
    gens = commutant_basis(Omega, m)
    if gens:
        A = np.column_stack([g.ravel() for g in gens])
        # complex rhs, real generators: project real and imaginary parts
        coef, *_ = np.linalg.lstsq(A, c0.ravel(), rcond=None)
        c0 = c0 - (A @ coef).reshape(c0.shape)
    V.c.coeffs[idx0] = c0
    return V
