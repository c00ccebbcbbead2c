"""Truncated real Fourier series on the n-torus.

All torus-dependent objects in this package (embeddings, frames, coefficient
matrices) are represented as truncated Fourier series with vector- or
matrix-valued coefficients.  The grid/series pair is exactly invertible: a
series truncated at order ``jmax`` per axis is sampled on the uniform grid
with an odd number ``2*jmax + 1`` of points per axis, so every retained mode
is representable without Nyquist ambiguity.

Layout convention: coefficient and grid arrays carry the torus axes first,
then the value axes, e.g. a matrix-valued series on T^2 truncated at jmax=4
has ``coeffs.shape == (9, 9, N, N)``.  Coefficients are stored in numpy FFT
order (frequency 0, 1, ..., jmax, -jmax, ..., -1 along each torus axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FourierSeries",
    "GridFunction",
    "analyze",
    "synthesize",
    "grid_points",
    "omega_derivative",
    "average",
    "pointwise_map",
    "sup_norm",
    "series_matvec",
    "series_matmat",
    "directional_derivative",
]


def _grid_size(jmax: int) -> int:
    return 2 * jmax + 1


def freq_axis(jmax: int) -> np.ndarray:
    """Integer frequencies along one axis in FFT order."""
    return np.concatenate([np.arange(0, jmax + 1), np.arange(-jmax, 0)])


def grid_points(n: int, jmax: int) -> np.ndarray:
    """Uniform sample points, shape ``(n,) + (2*jmax+1,)*n``."""
    m = _grid_size(jmax)
    axes = [2.0 * np.pi * np.arange(m) / m for _ in range(n)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=0)


@dataclass
class GridFunction:
    """Real samples of a map on the uniform torus grid."""

    n: int
    jmax: int
    values: np.ndarray  # shape (m,)*n + value_shape, real

    def __post_init__(self):
        m = _grid_size(self.jmax)
        if self.values.shape[: self.n] != (m,) * self.n:
            raise ValueError(
                f"grid shape {self.values.shape[:self.n]} inconsistent with jmax={self.jmax}"
            )

    @property
    def value_shape(self):
        return self.values.shape[self.n:]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=tuple(range(self.n)))


class FourierSeries:
    """Truncated Fourier series sum_{|j_l|<=jmax} c_j exp(i<j,x>) on T^n.

    Represents a real-valued map; the reality constraint c_{-j} = conj(c_j)
    is maintained by all operations and can be measured with
    :meth:`reality_error`.
    """

    def __init__(self, n: int, jmax: int, coeffs: np.ndarray, copy: bool = True):
        m = _grid_size(jmax)
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[:n] != (m,) * n:
            raise ValueError(
                f"coefficient array shape {coeffs.shape} inconsistent with n={n}, jmax={jmax}"
            )
        self.n = n
        self.jmax = jmax
        self.coeffs = coeffs.copy() if copy else coeffs

    # -- constructors ------------------------------------------------------

    @classmethod
    def zeros(cls, n: int, jmax: int, value_shape=()) -> "FourierSeries":
        m = _grid_size(jmax)
        return cls(n, jmax, np.zeros((m,) * n + tuple(value_shape), complex), copy=False)

    @classmethod
    def constant(cls, n: int, jmax: int, value) -> "FourierSeries":
        value = np.asarray(value, dtype=float)
        s = cls.zeros(n, jmax, value.shape)
        s.coeffs[(0,) * n] = value
        return s

    # -- basic structure ---------------------------------------------------

    @property
    def value_shape(self):
        return self.coeffs.shape[self.n:]

    @property
    def grid_shape(self):
        return self.coeffs.shape[: self.n]

    def copy(self) -> "FourierSeries":
        return FourierSeries(self.n, self.jmax, self.coeffs, copy=True)

    def mode(self, j) -> np.ndarray:
        """Coefficient c_j for a multi-index j (tuple of ints, |j_l|<=jmax)."""
        m = _grid_size(self.jmax)
        idx = tuple(int(jl) % m for jl in j)
        return self.coeffs[idx]

    def set_mode(self, j, value) -> None:
        m = _grid_size(self.jmax)
        idx = tuple(int(jl) % m for jl in j)
        self.coeffs[idx] = value

    # -- algebra -----------------------------------------------------------

    def __add__(self, other: "FourierSeries") -> "FourierSeries":
        self._check_compatible(other)
        return FourierSeries(self.n, self.jmax, self.coeffs + other.coeffs, copy=False)

    def __sub__(self, other: "FourierSeries") -> "FourierSeries":
        self._check_compatible(other)
        return FourierSeries(self.n, self.jmax, self.coeffs - other.coeffs, copy=False)

    def __neg__(self) -> "FourierSeries":
        return FourierSeries(self.n, self.jmax, -self.coeffs, copy=False)

    def __mul__(self, scalar) -> "FourierSeries":
        return FourierSeries(self.n, self.jmax, self.coeffs * scalar, copy=False)

    __rmul__ = __mul__

    def _check_compatible(self, other: "FourierSeries"):
        if (self.n, self.jmax, self.value_shape) != (other.n, other.jmax, other.value_shape):
            raise ValueError("incompatible series")

    # -- transforms --------------------------------------------------------

    def to_grid(self, jmax_eval: int | None = None) -> np.ndarray:
        """Real grid values, optionally on a finer grid (jmax_eval >= jmax)."""
        jmax_eval = self.jmax if jmax_eval is None else jmax_eval
        c = self._resampled_coeffs(jmax_eval)
        m = _grid_size(jmax_eval)
        vals = np.fft.ifftn(c, axes=tuple(range(self.n))) * (m ** self.n)
        return np.ascontiguousarray(vals.real)

    def _resampled_coeffs(self, jmax2: int) -> np.ndarray:
        if jmax2 == self.jmax:
            return self.coeffs
        return self._padded_coeffs(_grid_size(jmax2), min(self.jmax, jmax2))

    def _padded_coeffs(self, msize: int, jkeep: int) -> np.ndarray:
        out = np.zeros((msize,) * self.n + self.value_shape, complex)
        j1 = freq_axis(jkeep)
        src = np.ix_(*[j1 % _grid_size(self.jmax)] * self.n)
        dst = np.ix_(*[j1 % msize] * self.n)
        # np.ix_ does not extend over value axes; index grid axes only
        out[dst] = self.coeffs[src]
        return out

    def values_on(self, msize: int) -> np.ndarray:
        """Real values on the uniform grid with msize >= 2 jmax + 1 points per axis."""
        if msize < _grid_size(self.jmax):
            raise ValueError("grid too coarse for the retained modes")
        c = self._padded_coeffs(msize, self.jmax)
        vals = np.fft.ifftn(c, axes=tuple(range(self.n))) * (msize ** self.n)
        return np.ascontiguousarray(vals.real)

    def truncated(self, jmax2: int) -> "FourierSeries":
        return FourierSeries(self.n, jmax2, self._resampled_coeffs(jmax2), copy=False)

    def eval_at(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at arbitrary points, shape (n, ...) -> (...,) + value_shape."""
        points = np.asarray(points, dtype=float)
        pshape = points.shape[1:]
        pts = points.reshape(self.n, -1)
        m = _grid_size(self.jmax)
        expo = np.zeros((m,) * self.n + (pts.shape[1],))
        freqs = freq_axis(self.jmax)
        for ax in range(self.n):
            shape = [1] * (self.n + 1)
            shape[ax] = m
            expo = expo + freqs.reshape(shape) * pts[ax]
        phase = np.exp(1j * expo)
        flat_c = self.coeffs.reshape((m ** self.n,) + self.value_shape)
        flat_p = phase.reshape(m ** self.n, -1)
        vals = np.tensordot(flat_p, flat_c, axes=(0, 0))  # (P,)+value_shape
        return vals.real.reshape(pshape + self.value_shape)

    # -- calculus ----------------------------------------------------------

    def _freq_grid(self) -> np.ndarray:
        m = _grid_size(self.jmax)
        freqs = freq_axis(self.jmax)
        return np.stack(np.meshgrid(*([freqs] * self.n), indexing="ij"), axis=0)

    def partial(self, axis: int) -> "FourierSeries":
        """d/dx_axis, coefficient-wise multiplication by i*j_axis."""
        jg = self._freq_grid()[axis]
        factor = (1j * jg).reshape(jg.shape + (1,) * len(self.value_shape))
        return FourierSeries(self.n, self.jmax, factor * self.coeffs, copy=False)

    def reflect(self) -> "FourierSeries":
        """The series of x -> s(-x): coefficient map c_j -> c_{-j}."""
        c = self.coeffs
        for ax in range(self.n):
            c = np.roll(np.flip(c, axis=ax), 1, axis=ax)
        return FourierSeries(self.n, self.jmax, c, copy=False)

    def reality_error(self) -> float:
        return float(np.max(np.abs(self.coeffs - np.conj(self.reflect().coeffs))))

    def symmetrized_real(self) -> "FourierSeries":
        """Project onto the reality-symmetric part (scrubs round-off drift)."""
        c = 0.5 * (self.coeffs + np.conj(self.reflect().coeffs))
        return FourierSeries(self.n, self.jmax, c, copy=False)


def analyze(grid: GridFunction) -> FourierSeries:
    """Exact discrete Fourier coefficients of a grid function."""
    m = _grid_size(grid.jmax)
    c = np.fft.fftn(np.asarray(grid.values, dtype=float), axes=tuple(range(grid.n)))
    return FourierSeries(grid.n, grid.jmax, c / (m ** grid.n), copy=False)


def analyze_values(values: np.ndarray, n: int, jmax: int) -> FourierSeries:
    return analyze(GridFunction(n, jmax, values))


def synthesize(s: FourierSeries) -> GridFunction:
    """Inverse of :func:`analyze` at matching jmax."""
    return GridFunction(s.n, s.jmax, s.to_grid())


def omega_derivative(s: FourierSeries, omega: np.ndarray) -> FourierSeries:
    """Derivative along the constant flow x -> x + t*omega: c_j -> i<j,omega> c_j."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (s.n,):
        raise ValueError("frequency vector length mismatch")
    jw = np.tensordot(omega, s._freq_grid(), axes=(0, 0))
    factor = (1j * jw).reshape(jw.shape + (1,) * len(s.value_shape))
    return FourierSeries(s.n, s.jmax, factor * s.coeffs, copy=False)


def average(s: FourierSeries, reality_tol: float = 1e-13) -> np.ndarray:
    """The torus average c_0.  A non-real mean signals a broken reality invariant."""
    c0 = s.mode((0,) * s.n)
    scale = max(1.0, float(np.max(np.abs(c0))) if c0.size else 1.0)
    if np.max(np.abs(np.imag(c0))) > reality_tol * scale:
        raise ValueError("non-real torus average: reality invariant broken")
    return np.real(c0)


def pointwise_map(f, *series: FourierSeries, jmax: int | None = None,
                  oversample: int = 2) -> FourierSeries:
    """analyze(f(synthesize(s1), synthesize(s2), ...)) with anti-alias oversampling.

    The map is evaluated on a grid refined by ``oversample`` and the result
    truncated back.  With the default 2x oversampling, products of two series
    and cubic monomials are alias-free in the retained modes; truncation
    error for higher-order maps is the caller's responsibility.
    """
    if not series:
        raise ValueError("need at least one input series")
    n = series[0].n
    jm = series[0].jmax if jmax is None else jmax
    jbig = max(oversample * jm, max(s.jmax for s in series))
    grids = [s.to_grid(jbig) for s in series]
    vals = f(*grids)
    return analyze_values(np.asarray(vals, dtype=float), n, jbig).truncated(jm)


def sup_norm(s: FourierSeries, refine: int = 1) -> float:
    """Max over the grid of the absolute synthesized values (all components).

    ``refine`` evaluates on a nested grid with refine-times as many points
    per axis (the coarse grid is a subset, so the value is monotone in it).
    """
    if refine <= 1:
        return float(np.max(np.abs(s.to_grid())))
    m = _grid_size(s.jmax)
    return float(np.max(np.abs(s.values_on(refine * m))))


# -- pointwise linear algebra on series -------------------------------------

def series_matvec(a: FourierSeries, b: FourierSeries, oversample: int = 2) -> FourierSeries:
    """Truncated product A(x) b(x) of a matrix series and a vector series."""
    return pointwise_map(lambda A, v: np.einsum("...ij,...j->...i", A, v),
                         a, b, jmax=a.jmax, oversample=oversample)


def series_matmat(a: FourierSeries, b: FourierSeries, oversample: int = 2) -> FourierSeries:
    """Truncated product A(x) B(x) of two matrix series."""
    return pointwise_map(lambda A, B: np.einsum("...ik,...kj->...ij", A, B),
                         a, b, jmax=a.jmax, oversample=oversample)


def series_product(a: FourierSeries, b: FourierSeries, oversample: int = 2) -> FourierSeries:
    """Truncated pointwise (componentwise-broadcast) product."""
    return pointwise_map(lambda u, v: u * v, a, b, jmax=a.jmax, oversample=oversample)


def directional_derivative(c: FourierSeries, a: FourierSeries,
                           oversample: int = 2) -> FourierSeries:
    """sum_l a_l(x) d c / d x_l for a vector series a with len == n."""
    if a.value_shape != (c.n,):
        raise ValueError("direction must be an R^n-valued series")
    parts = [c.partial(ax) for ax in range(c.n)]

    def contract(avals, *dparts):
        out = np.zeros_like(dparts[0])
        for ax in range(c.n):
            out += avals[..., ax].reshape(avals.shape[:-1] + (1,) * len(c.value_shape)) * dparts[ax]
        return out

    return pointwise_map(contract, a, *parts, jmax=c.jmax, oversample=oversample)
