"""Closed-form reversible systems and brute-force dynamical verification.

Systems are term lists, not callables, so that reversibility can be audited
structurally (term-by-term parity) as well as statistically, and so the
anti-action scaling y -> sqrt(eps) Y is exact.  A term contributes

    coef(nu) * eps^e * trig(<j, x>) * y^a * z^b

to one component of (dx, dy, dz); the base blocks H(y, nu), P(y, nu) and
Q(y, nu) z are stored as separate tables of the same shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .reversing import InvolutionSpec, reversibility_residual
from .tmatrix import TMatrixSpec, tmatrix_dense

__all__ = [
    "Term",
    "ReversibleSystem",
    "build_extreme_integrable",
    "build_context2_example",
    "integrate_orbit",
    "verify_solution",
    "load_system",
    "save_system",
]


def _normalize_nu_poly(nu_poly, s: int):
    """Accept a scalar, an affine list [c0, c1, .., cs], or monomials [[c, [k..]], ..]."""
    if np.isscalar(nu_poly):
        return ((float(nu_poly), (0,) * s),)
    nu_poly = list(nu_poly)
    if nu_poly and isinstance(nu_poly[0], (list, tuple)):
        out = []
        for c, k in nu_poly:
            k = tuple(int(v) for v in k)
            if len(k) != s:
                raise ValueError("nu exponent length must equal s")
            out.append((float(c), k))
        return tuple(out)
    if len(nu_poly) not in (1, s + 1):
        raise ValueError("affine nu_poly must have length 1 or s+1")
    out = [(float(nu_poly[0]), (0,) * s)]
    for i, c in enumerate(nu_poly[1:]):
        if c != 0.0:
            e = [0] * s
            e[i] = 1
            out.append((float(c), tuple(e)))
    return tuple(out)


@dataclass(frozen=True)
class Term:
    """One monomial term of a system component."""

    row: int
    j: tuple
    trig: str             # "cos" | "sin"
    yz_exp: tuple         # exponents over (y_1..y_m, z_1..z_2p)
    nu_poly: tuple        # ((coef, (k_1..k_s)), ...)
    eps_power: int = 0
    col: int | None = None  # Q terms: z column

    def __post_init__(self):
        if self.trig not in ("cos", "sin"):
            raise ValueError("trig must be 'cos' or 'sin'")
        if self.eps_power not in (0, 1):
            raise ValueError("eps_power must be 0 or 1")
        object.__setattr__(self, "j", tuple(int(v) for v in self.j))
        object.__setattr__(self, "yz_exp", tuple(int(v) for v in self.yz_exp))

    def coef(self, nu: np.ndarray) -> float:
        tot = 0.0
        for c, k in self.nu_poly:
            tot += c * float(np.prod([nu[i] ** e for i, e in enumerate(k) if e]))
        return tot

    def to_dict(self) -> dict:
        d = {
            "target": self.row,
            "j": list(self.j),
            "trig": self.trig,
            "yz_exponents": list(self.yz_exp),
            "nu_poly": [[c, list(k)] for c, k in self.nu_poly],
            "eps_power": self.eps_power,
        }
        if self.col is not None:
            d["col"] = self.col
        return d


def _trig_vals(j, x, trig):
    # x shape (n, ...) -> (...,)
    arg = np.tensordot(np.asarray(j, float), x, axes=(0, 0))
    return np.cos(arg) if trig == "cos" else np.sin(arg)


def _trig_dx(j, x, trig):
    """Gradient of trig(<j,x>) w.r.t. x, shape (n, ...)."""
    arg = np.tensordot(np.asarray(j, float), x, axes=(0, 0))
    base = -np.sin(arg) if trig == "cos" else np.cos(arg)
    return np.asarray(j, float).reshape((-1,) + (1,) * base.ndim) * base


def _mono_val(u, a):
    # u shape (k, ...), a exponents length k
    out = None
    for i, e in enumerate(a):
        if e:
            v = u[i] ** e
            out = v if out is None else out * v
    if out is None:
        return np.ones(u.shape[1:]) if u.ndim > 1 else 1.0
    return out


def _mono_grad(u, a):
    """Gradient of the monomial w.r.t. u, shape (k, ...)."""
    k = len(a)
    out = np.zeros(u.shape)
    for i, e in enumerate(a):
        if not e:
            continue
        rest = None
        for jj, ee in enumerate(a):
            eff = ee - 1 if jj == i else ee
            if eff:
                v = u[jj] ** eff
                rest = v if rest is None else rest * v
        out[i] = e * (rest if rest is not None else 1.0)
    return out


@dataclass(frozen=True)
class ReversibleSystem:
    """Parameter family (eq. template) of G-reversible systems on T^n x Y x Z.

    For delta = -1 (context 2):
        dx = H(y,nu) + [f-table],  dy = P(y,nu) + [g-table],
        dz = Q(y,nu) z + [h-table],
    with the eps_power-0 table entries playing the role of the sharp parts
    (f O(z), g and h O_2(z)) and eps_power-1 entries the eps-perturbation.
    For delta = +1 (context 1) the P table must be empty.
    """

    n: int
    m: int
    p: int
    s: int
    delta: int
    H: tuple = ()
    P: tuple = ()
    Q: tuple = ()
    f: tuple = ()
    g: tuple = ()
    h: tuple = ()

    @property
    def dims(self):
        return self.n, self.m, self.p, self.s

    @property
    def N(self) -> int:
        return self.m + 2 * self.p

    def involution(self) -> InvolutionSpec:
        return InvolutionSpec(self.n, self.m, self.p, self.delta)

    # -- structural audit ---------------------------------------------------

    def _K_sign(self, i: int) -> int:
        return 1 if i % 2 == 0 else -1

    def _term_parity(self, t: Term) -> int:
        """Sign of the term under (x,y,z) -> (-x, delta y, K z)."""
        sgn = 1 if t.trig == "cos" else -1
        ydeg = sum(t.yz_exp[: self.m])
        if self.delta == -1 and ydeg % 2 == 1:
            sgn = -sgn
        for i, e in enumerate(t.yz_exp[self.m:]):
            if e % 2 == 1 and self._K_sign(i) == -1:
                sgn = -sgn
        if t.col is not None and self._K_sign(t.col) == -1:
            sgn = -sgn
        return sgn

    def validate(self) -> None:
        """Term-by-term parity audit of the six reversibility identities.

        Raises ValueError naming the first offending term.
        """
        for t in self.H:
            self._check_base_term(t, self.n, "H")
            if self.delta == -1 and sum(t.yz_exp[: self.m]) % 2 == 1:
                raise ValueError(f"H term {t} is odd in y")
        for t in self.P:
            if self.delta == 1:
                raise ValueError("P block is absent in the context-1 template")
            self._check_base_term(t, self.m, "P")
            if sum(t.yz_exp[: self.m]) % 2 == 1:
                raise ValueError(f"P term {t} is odd in y")
        for t in self.Q:
            self._check_base_term(t, 2 * self.p, "Q", need_col=True)
            if (t.row + t.col) % 2 == 0:
                raise ValueError(
                    f"Q term {t} sits at a position where Q K + K Q cannot vanish")
            if self.delta == -1 and sum(t.yz_exp[: self.m]) % 2 == 1:
                raise ValueError(f"Q term {t} is odd in y")
        for name, table, rows in (("f", self.f, self.n), ("g", self.g, self.m),
                                  ("h", self.h, 2 * self.p)):
            for t in table:
                if not (0 <= t.row < rows):
                    raise ValueError(f"{name} term row {t.row} out of range")
                if len(t.yz_exp) != self.N:
                    raise ValueError(f"{name} term has wrong yz exponent length")
                par = self._term_parity(t)
                need = self._required_parity(name, t.row)
                if par != need:
                    raise ValueError(
                        f"{name} term {t} violates reversibility parity "
                        f"(has {par}, needs {need})")
                zdeg = sum(t.yz_exp[self.m:]) + (1 if t.col is not None else 0)
                if t.eps_power == 0:
                    if name == "f" and zdeg < 1:
                        raise ValueError(f"sharp f term {t} must be O(z)")
                    if name in ("g", "h") and zdeg < 2:
                        raise ValueError(f"sharp {name} term {t} must be O_2(z)")

    def _required_parity(self, table: str, row: int) -> int:
        if table == "f":
            return 1
        if table == "g":
            return -self.delta
        return -self._K_sign(row)

    def _check_base_term(self, t: Term, rows: int, name: str, need_col=False):
        if not (0 <= t.row < rows):
            raise ValueError(f"{name} term row out of range")
        if any(t.j) or t.trig != "cos":
            raise ValueError(f"{name} terms must be x-independent")
        if any(t.yz_exp[self.m:]):
            raise ValueError(f"{name} terms must not depend on z")
        if t.eps_power != 0:
            raise ValueError(f"{name} terms must be eps-independent")
        if need_col and not (t.col is not None and 0 <= t.col < rows):
            raise ValueError(f"{name} term needs a valid column index")

    # -- evaluation ----------------------------------------------------------

    def _table_eval(self, table, rows, x, y, z, nu, eps):
        batch = x.shape[1:]
        out = np.zeros((rows,) + batch)
        u = np.concatenate([y, z], axis=0)
        for t in table:
            c = t.coef(nu) * (eps ** t.eps_power)
            if c == 0.0:
                continue
            val = c * _trig_vals(t.j, x, t.trig) * _mono_val(u, t.yz_exp)
            if t.col is None:
                out[t.row] += val
            else:
                out[t.row] += val * z[t.col]
        return out

    def field(self, x, y, z, nu, eps):
        """(dx, dy, dz) at points; x shape (n,) + batch, y and z alike."""
        x = np.asarray(x, float)
        y = np.asarray(y, float).reshape((self.m,) + x.shape[1:])
        z = np.asarray(z, float).reshape((2 * self.p,) + x.shape[1:])
        nu = np.asarray(nu, float)
        dx = self._table_eval(self.H, self.n, x, y, z, nu, 0.0) \
            + self._table_eval(self.f, self.n, x, y, z, nu, eps)
        dy = self._table_eval(self.P, self.m, x, y, z, nu, 0.0) \
            + self._table_eval(self.g, self.m, x, y, z, nu, eps)
        Q = self.Q_matrix(y, nu)
        dz = np.einsum("ij...,j...->i...", Q, z) \
            + self._table_eval(self.h, 2 * self.p, x, y, z, nu, eps)
        return dx, dy, dz

    def Q_matrix(self, y, nu):
        """Q(y, nu), shape (2p, 2p) + batch."""
        y = np.asarray(y, float)
        batch = y.shape[1:]
        out = np.zeros((2 * self.p, 2 * self.p) + batch)
        u = np.concatenate([y, np.zeros((2 * self.p,) + batch)], axis=0)
        for t in self.Q:
            c = t.coef(nu)
            if c == 0.0:
                continue
            out[t.row, t.col] += c * _mono_val(u, t.yz_exp)
        return out

    def jac_fiber(self, x, y, z, nu, eps):
        """Jacobian of (dx, dy, dz) with respect to (y, z), shape (n+N, N) + batch."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        z = np.asarray(z, float)
        nu = np.asarray(nu, float)
        batch = x.shape[1:]
        N = self.N
        out = np.zeros((self.n + N, N) + batch)
        u = np.concatenate([y, z], axis=0)

        def add_table(table, row_off, eps_val):
            for t in table:
                c = t.coef(nu) * (eps_val ** t.eps_power)
                if c == 0.0:
                    continue
                tr = _trig_vals(t.j, x, t.trig)
                if t.col is None:
                    out[row_off + t.row] += c * tr * _mono_grad(u, t.yz_exp)
                else:
                    mono = _mono_val(u, t.yz_exp)
                    out[row_off + t.row] += c * tr * _mono_grad(u, t.yz_exp) * z[t.col]
                    out[row_off + t.row, self.m + t.col] += c * tr * mono

        add_table(self.H, 0, 0.0)
        add_table(self.f, 0, eps)
        add_table(self.P, self.n, 0.0)
        add_table(self.g, self.n, eps)
        add_table(self.Q, self.n + self.m, 0.0)
        add_table(self.h, self.n + self.m, eps)
        return out

    def jac_x(self, x, y, z, nu, eps):
        """Jacobian of (dx, dy, dz) with respect to x, shape (n+N, n) + batch."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        z = np.asarray(z, float)
        nu = np.asarray(nu, float)
        batch = x.shape[1:]
        out = np.zeros((self.n + self.N, self.n) + batch)
        u = np.concatenate([y, z], axis=0)

        def add_table(table, row_off, eps_val):
            for t in table:
                if not any(t.j):
                    continue
                c = t.coef(nu) * (eps_val ** t.eps_power)
                if c == 0.0:
                    continue
                grad = _trig_dx(t.j, x, t.trig)
                mono = _mono_val(u, t.yz_exp)
                v = c * grad * mono
                if t.col is not None:
                    v = v * z[t.col]
                out[row_off + t.row] += v

        add_table(self.f, 0, eps)
        add_table(self.g, self.n, eps)
        add_table(self.h, self.n + self.m, eps)
        return out

    def field_flat(self, w, nu, eps):
        """Field on stacked states w = (x; y; z), shape (n+N,) + batch."""
        n, m = self.n, self.m
        dx, dy, dz = self.field(w[:n], w[n:n + m], w[n + m:], nu, eps)
        return np.concatenate([dx, dy, dz], axis=0)

    def jac_full(self, w, nu, eps):
        """Full variational matrix d(field)/dw, shape (n+N, n+N) + batch."""
        n, m = self.n, self.m
        x, y, z = w[:n], w[n:n + m], w[n + m:]
        Jx = self.jac_x(x, y, z, nu, eps)
        Jf = self.jac_fiber(x, y, z, nu, eps)
        return np.concatenate([Jx, Jf], axis=1)

    # -- family maps used by the torus pipeline ------------------------------

    def H0(self, nu) -> np.ndarray:
        z = np.zeros((2 * self.p, 1))
        y = np.zeros((self.m, 1))
        x = np.zeros((self.n, 1))
        return self._table_eval(self.H, self.n, x, y, z, np.asarray(nu, float), 0.0)[:, 0]

    def P0(self, nu) -> np.ndarray:
        z = np.zeros((2 * self.p, 1))
        y = np.zeros((self.m, 1))
        x = np.zeros((self.n, 1))
        return self._table_eval(self.P, self.m, x, y, z, np.asarray(nu, float), 0.0)[:, 0]

    def Q0(self, nu) -> np.ndarray:
        return self.Q_matrix(np.zeros((self.m, 1)), np.asarray(nu, float))[..., 0]

    def reversibility_check(self, samples: int = 64, rng=None, nu_box=0.3,
                            eps_box=0.1) -> float:
        G = self.involution()
        rng = np.random.default_rng(0) if rng is None else rng
        return reversibility_residual(
            lambda x, y, z, nu, eps: self.field(x[:, None], y[:, None], z[:, None], nu, eps),
            G, samples=samples, rng=rng,
            nu_sampler=lambda r: r.uniform(-nu_box, nu_box, size=self.s),
            eps_sampler=lambda r: r.uniform(0, eps_box),
        )

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dims": {"n": self.n, "m": self.m, "p": self.p, "s": self.s},
            "delta": self.delta,
            "H": [t.to_dict() for t in self.H],
            "P": [t.to_dict() for t in self.P],
            "Q": [t.to_dict() for t in self.Q],
            "perturbation": {
                "f": [t.to_dict() for t in self.f],
                "g": [t.to_dict() for t in self.g],
                "h": [t.to_dict() for t in self.h],
            },
        }


def _term_from_dict(d: dict, s: int) -> Term:
    return Term(
        row=int(d["target"]), j=tuple(d.get("j", ())), trig=d.get("trig", "cos"),
        yz_exp=tuple(d.get("yz_exponents", ())),
        nu_poly=_normalize_nu_poly(d.get("nu_poly", 0.0), s),
        eps_power=int(d.get("eps_power", 0)),
        col=d.get("col"),
    )


def system_from_dict(data: dict) -> ReversibleSystem:
    dims = data["dims"]
    s = int(dims["s"])
    pert = data.get("perturbation", {})
    sys = ReversibleSystem(
        n=int(dims["n"]), m=int(dims["m"]), p=int(dims["p"]), s=s,
        delta=int(data["delta"]),
        H=tuple(_term_from_dict(t, s) for t in data.get("H", ())),
        P=tuple(_term_from_dict(t, s) for t in data.get("P", ())),
        Q=tuple(_term_from_dict(t, s) for t in data.get("Q", ())),
        f=tuple(_term_from_dict(t, s) for t in pert.get("f", ())),
        g=tuple(_term_from_dict(t, s) for t in pert.get("g", ())),
        h=tuple(_term_from_dict(t, s) for t in pert.get("h", ())),
    )
    sys.validate()
    return sys


def load_system(path) -> ReversibleSystem:
    with open(path) as fh:
        return system_from_dict(json.load(fh))


def save_system(sys: ReversibleSystem, path) -> None:
    with open(path, "w") as fh:
        json.dump(sys.to_dict(), fh, indent=1, sort_keys=True)


# -- constructors -------------------------------------------------------------

def term(row, j, trig, yz_exp, nu_poly, eps_power=0, col=None, s=0):
    return Term(row, tuple(j), trig, tuple(yz_exp),
                _normalize_nu_poly(nu_poly, s), eps_power, col)


def build_extreme_integrable(kind: int, H_terms, P_terms, n: int, m: int,
                             s: int) -> ReversibleSystem:
    """The integrable models without a z-fiber.

    kind 1: dx = H(y, nu), dy = 0, reverser (x, y) -> (-x, y); every
    {y = const} torus is invariant.  kind 2: dx = H(y, nu), dy = P(y, nu)
    with H, P even in y, reverser (x, y) -> (-x, -y); {y = 0} is invariant
    exactly when P(0, nu) = 0.
    """
    if kind not in (1, 2):
        raise ValueError("kind must be 1 or 2")
    delta = 1 if kind == 1 else -1
    if kind == 1 and P_terms:
        raise ValueError("kind-1 model has dy = 0")
    sys = ReversibleSystem(n=n, m=m, p=0, s=s, delta=delta,
                           H=tuple(H_terms), P=tuple(P_terms))
    sys.validate()
    return sys


def _q_table_from_tmatrix(d1, d2, d3, alpha_poly, beta_poly, s, m, n):
    """Q(y,nu) = T(d1,d2,d3; alpha(nu), beta(nu)) as a term table.

    alpha_poly / beta_poly are lists of nu_poly entries per block parameter.
    """
    terms = []
    zeros = (0,) * (m + 2 * (d1 + d2 + 2 * d3))

    def add(row, col, poly, sign=1.0):
        pol = _normalize_nu_poly(poly, s)
        pol = tuple((sign * c, k) for c, k in pol)
        terms.append(Term(row, (0,) * n, "cos", zeros, pol, 0, col))

    pos = 0
    for k in range(d1):
        add(pos, pos + 1, alpha_poly[k])
        add(pos + 1, pos, alpha_poly[k])
        pos += 2
    for l in range(d2):
        add(pos, pos + 1, beta_poly[l])
        add(pos + 1, pos, beta_poly[l], sign=-1.0)
        pos += 2
    for i in range(d3):
        a, b = alpha_poly[d1 + i], beta_poly[d2 + i]
        add(pos, pos + 1, a)
        add(pos + 1, pos, a)
        add(pos + 2, pos + 3, a)
        add(pos + 3, pos + 2, a)
        add(pos, pos + 3, b)
        add(pos + 1, pos + 2, b)
        add(pos + 2, pos + 1, b, sign=-1.0)
        add(pos + 3, pos, b, sign=-1.0)
        pos += 4
    return tuple(terms)


def build_context2_example(seed: int, n=1, m=1, d1=0, d2=1, d3=0,
                           magnitude: float = 0.3, omega0=None,
                           alpha0=None, beta0=None, n_random_terms: int = 6,
                           sharp: bool = True) -> ReversibleSystem:
    """A context-2 family around an integrable skeleton, reversible by construction.

    Parameters nu = (nu_1..nu_s) act as (frequency detunings, P(0) offsets,
    beta detunings, alpha detunings), s = n + m + (d2+d3) + (d1+d3), so the
    rank condition holds with an identity block and any kappa is admissible.
    Random perturbation terms are drawn and kept only when the term-level
    parity audit admits them, which realizes the split_pm symmetrization
    exactly at the term level.
    """
    rng = np.random.default_rng(seed)
    p = d1 + d2 + 2 * d3
    d = d2 + d3
    nq = d1 + d3
    s = n + m + d + nq
    N = m + 2 * p
    omega0 = np.asarray(omega0 if omega0 is not None else
                        [1.0 + 0.3 * i + np.sqrt(2) * 0.5 for i in range(n)], float)
    alpha0 = np.asarray(alpha0 if alpha0 is not None else
                        [0.8 + 0.45 * k for k in range(nq)], float)
    beta0 = np.asarray(beta0 if beta0 is not None else
                       [np.sqrt(2.0) + 0.7 * l for l in range(d)], float)

    zeros = (0,) * N

    def ypow2(i):
        e = [0] * N
        e[i] = 2
        return tuple(e)

    H = []
    for i in range(n):
        H.append(Term(i, (0,) * n, "cos", zeros, _normalize_nu_poly(
            [omega0[i]] + [1.0 if k == i else 0.0 for k in range(s)], s)))
        H.append(Term(i, (0,) * n, "cos", ypow2(i % m) if m else zeros,
                      _normalize_nu_poly(0.2 + 0.1 * i, s)))
    P = []
    for i in range(m):
        P.append(Term(i, (0,) * n, "cos", zeros, _normalize_nu_poly(
            [0.0] + [1.0 if k == n + i else 0.0 for k in range(s)], s)))
        P.append(Term(i, (0,) * n, "cos", ypow2(i), _normalize_nu_poly(0.15 + 0.05 * i, s)))

    beta_poly = [[beta0[l]] + [1.0 if k == n + m + l else 0.0 for k in range(s)]
                 for l in range(d)]
    alpha_poly = [[alpha0[kk]] + [1.0 if k == n + m + d + kk else 0.0 for k in range(s)]
                  for kk in range(nq)]
    Q = _q_table_from_tmatrix(d1, d2, d3, alpha_poly, beta_poly, s, m, n)

    sys = ReversibleSystem(n=n, m=m, p=p, s=s, delta=-1, H=tuple(H), P=tuple(P), Q=Q)

    # guaranteed structural perturbation content: constants in every row
    # (sigma / psi channels) and a z-linear h term (rho / phi channels)
    f, g, h = [], [], []
    for i in range(n):
        f.append(Term(i, (0,) * n, "cos", zeros,
                      _normalize_nu_poly(magnitude * (0.9 + 0.1 * i), s), 1))
        f.append(Term(i, tuple(1 if k == 0 else 0 for k in range(n)), "cos", zeros,
                      _normalize_nu_poly(0.6 * magnitude, s), 1))
    for i in range(m):
        g.append(Term(i, (0,) * n, "cos", zeros,
                      _normalize_nu_poly(magnitude * (0.8 - 0.1 * i), s), 1))
        g.append(Term(i, tuple(1 if k == 0 else 0 for k in range(n)), "cos", zeros,
                      _normalize_nu_poly(0.5 * magnitude, s), 1))
    for i in range(2 * p):
        need = -(1 if i % 2 == 0 else -1)
        trig = "sin" if need == -1 else "cos"
        h.append(Term(i, tuple(1 if k == 0 else 0 for k in range(n)), trig, zeros,
                      _normalize_nu_poly(magnitude * (0.7 + 0.05 * i), s), 1))
    # z-linear eps-perturbation of the Floquet block, at admissible positions;
    # coefficients asymmetric in (row, col) so all kernel channels are excited
    for i in range(2 * p):
        for jcol in range(2 * p):
            if (i + jcol) % 2 == 0:
                continue
            h.append(Term(i, (0,) * n, "cos", zeros,
                          _normalize_nu_poly(magnitude * (0.3 + 0.07 * i + 0.11 * jcol), s),
                          1, col=jcol))
    if sharp and p > 0:
        # an O(z) sharp term in the x rows and O_2(z) sharp terms below
        e = [0] * N
        e[m] = 1
        f.append(Term(0, (0,) * n, "cos", tuple(e),
                      _normalize_nu_poly(0.2, s), 0))
        e2 = [0] * N
        e2[m] = 2
        g.append(Term(0, (0,) * n, "cos", tuple(e2),
                      _normalize_nu_poly(0.15, s), 0))
        if 2 * p >= 2:
            e3 = [0] * N
            e3[m] = 1
            e3[m + 1] = 1
            h.append(Term(0, (0,) * n, "cos", tuple(e3),
                          _normalize_nu_poly(0.1, s), 0))

    # random admissible extras
    sys_probe = replace(sys, f=tuple(f), g=tuple(g), h=tuple(h))
    added = 0
    while added < n_random_terms:
        table = rng.choice(["f", "g", "h"])
        rows = {"f": n, "g": m, "h": 2 * p}[table]
        if rows == 0:
            continue
        t = Term(
            int(rng.integers(rows)),
            tuple(int(v) for v in rng.integers(-2, 3, size=n)),
            str(rng.choice(["cos", "sin"])),
            tuple(int(v) for v in rng.integers(0, 2, size=N)),
            _normalize_nu_poly(float(magnitude * rng.normal() * 0.3), s),
            1,
        )
        if sys_probe._term_parity(t) != sys_probe._required_parity(table, t.row):
            continue
        {"f": f, "g": g, "h": h}[table].append(t)
        added += 1

    out = replace(sys, f=tuple(f), g=tuple(g), h=tuple(h))
    out.validate()
    return out


# -- orbit oracle --------------------------------------------------------------

@dataclass
class OrbitResult:
    times: np.ndarray
    states: np.ndarray          # (samples, dim) or (samples, dim, batch)
    halving_error: float | None


def integrate_orbit(system: ReversibleSystem, nu, eps, w0, T: float, dt: float,
                    sample_every: int = 1, halving_check: bool = False,
                    rhs=None) -> OrbitResult:
    """Fixed-step RK4 trajectory of the stacked state (x; y; z).

    ``w0`` may be a single state or a (dim, batch) array.  With
    ``halving_check`` the run is repeated at dt/2 and the end-state
    difference reported.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    f = rhs if rhs is not None else (lambda w: system.field_flat(w, nu, eps))
    w0 = np.asarray(w0, float)
    single = w0.ndim == 1
    w = w0[:, None] if single else w0.copy()

    def run(step, keep):
        nsteps = int(round(T / step))
        state = w.copy()
        times = [0.0]
        states = [state.copy()]
        for k in range(nsteps):
            k1 = f(state)
            k2 = f(state + 0.5 * step * k1)
            k3 = f(state + 0.5 * step * k2)
            k4 = f(state + step * k3)
            state = state + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if keep and (k + 1) % sample_every == 0:
                times.append((k + 1) * step)
                states.append(state.copy())
        return np.array(times), np.array(states), state

    times, states, end = run(dt, True)
    herr = None
    if halving_check:
        _, _, end2 = run(dt / 2.0, False)
        herr = float(np.max(np.abs(end - end2)))
    if single:
        states = states[:, :, 0]
    return OrbitResult(times, states, herr)


def verify_solution(system: ReversibleSystem, sol, T: float = 100.0,
                    tol: float | None = None, dt: float = 1e-3,
                    n_seeds: int = 8, var_T: float | None = None) -> dict:
    """Brute-force dynamical verification of a computed torus.

    (i) integrates orbits seeded on the embedding and measures the maximal
    distance back to the torus (nearest-point projection); (ii) integrates
    the variational equation and extracts the instantaneous coefficient
    matrix in the Floquet frame (and without it, for contrast); (iii)
    compares the Floquet exponents of the constant matrix with the
    spectrum of the stored Floquet block.
    """
    emb = sol.embedding
    n, N = system.n, system.N
    nu, eps = np.asarray(sol.nu, float), float(sol.eps)
    tol = tol if tol is not None else 10.0 * 1e-11 * T

    rng = np.random.default_rng(3)
    xis = rng.uniform(0, 2 * np.pi, size=(n, n_seeds))
    w0 = emb.embed(xis)  # (n+N, seeds)
    orbit = integrate_orbit(system, nu, eps, w0, T, dt,
                            sample_every=max(1, int(round(0.5 / dt))))
    dist = 0.0
    for k in range(orbit.states.shape[0]):
        dist = max(dist, float(np.max(emb.distance_to_torus(orbit.states[k]))))

    # variational run in the frame
    varT = var_T if var_T is not None else min(T, 20.0)
    const_dev, raw_dev, Bbar = _variational_constancy(system, sol, varT, dt)

    target = np.sort_complex(np.linalg.eigvals(sol.floquet_matrix))
    got = np.sort_complex(np.linalg.eigvals(Bbar))
    exp_err = float(np.max(np.abs(target - got))) if len(target) else 0.0

    return {
        "orbit_T": T,
        "max_distance": dist,
        "distance_tol": tol,
        "distance_ok": bool(dist <= tol),
        "frame_constancy": const_dev,
        "raw_constancy": raw_dev,
        "floquet_exponent_error": exp_err,
        "coefficient_matrix": Bbar,
    }


def _variational_constancy(system: ReversibleSystem, sol, T: float, dt: float):
    """Instantaneous variational coefficient matrix in / out of the frame."""
    emb = sol.embedding
    n, N = system.n, system.N
    nu, eps = np.asarray(sol.nu, float), float(sol.eps)
    xi0 = np.zeros(n) + 0.37
    w0 = emb.embed(xi0[:, None])[:, 0]
    # augmented state: orbit + (n+N) x N deviation matrix seeded on the fiber frame
    Dev0 = np.zeros((n + N, N))
    Dev0[n:, :] = emb.frame_at(xi0[:, None])[..., 0]
    state0 = np.concatenate([w0, Dev0.ravel()])

    def rhs(wv):
        # wv shape (dim, batch)
        batch = wv.shape[1:]
        w = wv[: n + N]
        Dev = wv[n + N:].reshape((n + N, N) + batch)
        dw = system.field_flat(w, nu, eps)
        J = system.jac_full(w, nu, eps)
        dDev = np.einsum("ik...,kj...->ij...", J, Dev)
        return np.concatenate([dw, dDev.reshape((-1,) + batch)], axis=0)

    res = integrate_orbit(system, nu, eps, state0, T, dt,
                          sample_every=max(1, int(round(0.1 / dt))), rhs=rhs)
    omega = sol.omega
    Bs, Bs_raw = [], []
    for k, t in enumerate(res.times):
        st = res.states[k]
        w = st[: n + N]
        Dev = st[n + N:].reshape(n + N, N)
        xi = xi0 + omega * t
        dw = system.field_flat(w[:, None], nu, eps)[:, 0]
        J = system.jac_full(w[:, None], nu, eps)[..., 0]
        dDev = J @ Dev
        Y, dY = emb.to_frame(xi, Dev, dDev)
        Bs.append(dY @ np.linalg.inv(Y))
        Yr, dYr = Dev[n:], dDev[n:]
        Bs_raw.append(dYr @ np.linalg.inv(Yr))
    Bs = np.array(Bs)
    Bs_raw = np.array(Bs_raw)
    Bbar = Bs.mean(axis=0)
    const_dev = float(np.max(np.abs(Bs - Bbar)))
    raw_dev = float(np.max(np.abs(Bs_raw - Bs_raw.mean(axis=0))))
    return const_dev, raw_dev, Bbar
