"""Jacobians at the translating state, exact characteristic polynomials, and
the quadratic central-manifold map.

Polynomials are lists of coefficients, highest degree first.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np


# ------------------------------------------------------------------ matrices

def _check_n(n):
    if int(n) != n or n < 2:
        raise ValueError(f"need an integer n >= 2, got {n}")
    return int(n)


def _empty(size, exact):
    if exact:
        M = np.empty((size, size), dtype=object)
        M[:] = Fraction(0)
        return M
    return np.zeros((size, size))


def _B(n, exact):
    k = n - 1
    if exact:
        B = np.empty((k, k), dtype=object)
        for i in range(k):
            for j in range(k):
                B[i, j] = Fraction(int(i == j)) - Fraction(1, n)
        return B
    return np.eye(k) - np.ones((k, k)) / n


def _xu_block(n, exact):
    """The (2n-1)-square block acting on (x_1..x_{n-1}, u_1..u_{n-1}, u_n)."""
    k = n - 1
    J = _empty(2 * k + 1, exact)
    one = Fraction(1) if exact else 1.0
    J[:k, k:2 * k] = _B(n, exact)
    J[:k, 2 * k] = -one / n
    for i in range(k):
        J[k + i, i] = -one
        J[k + i, k + i] = -2 * one
        J[2 * k, i] = one
    J[2 * k, 2 * k] = -2 * one
    return J


def jacobian_state(n, exact=False):
    """Jacobian of the moving-frame system at the translating fixed point.

    Order (w_1..w_n, y_1..y_n, x_1..x_{n-1}, u_1..u_n).
    """
    n = _check_n(n)
    J = _empty(4 * n - 1, exact)
    one = Fraction(1) if exact else 1.0
    for i in range(n):
        J[i, n + i] = -one
        J[n + i, i] = one
    J[2 * n:, 2 * n:] = _xu_block(n, exact)
    return J


def jacobian_x(n, exact=False):
    """Jacobian of the y-free sigma-v subsystem in (sigma_x, v_x, v_{x,n})."""
    return _xu_block(_check_n(n), exact)


def jacobian_sigmav(n, exact=False):
    """Jacobian of the sigma-v system at P0 = (0, 0, 1, 0, 1, 0).

    Order (sx_1..sx_{n-1}, sy_1..sy_{n-1}, vx_1..vx_{n-1}, vy_1..vy_{n-1}, vx_n, vy_n).
    """
    n = _check_n(n)
    k = n - 1
    J = _empty(4 * k + 2, exact)
    one = Fraction(1) if exact else 1.0
    B = _B(n, exact)
    J[:k, 2 * k:3 * k] = B
    J[k:2 * k, 3 * k:4 * k] = B
    J[:k, 4 * k] = -one / n
    J[k:2 * k, 4 * k + 1] = -one / n
    for i in range(k):
        J[2 * k + i, i] = -one
        J[2 * k + i, 2 * k + i] = -2 * one
        J[3 * k + i, k + i] = -one
        J[4 * k, i] = one
        J[4 * k + 1, k + i] = one
    J[4 * k, 4 * k] = -2 * one
    return J


def numerical_jacobian(f, z0, h=1e-5):
    """Central-difference Jacobian of f at z0."""
    z0 = np.asarray(z0, dtype=float)
    cols = []
    for i in range(z0.size):
        e = np.zeros_like(z0)
        e[i] = h
        cols.append((f(z0 + e) - f(z0 - e)) / (2 * h))
    return np.stack(cols, axis=1)


# ------------------------------------------------------ characteristic poly

@dataclass(frozen=True)
class CharPoly:
    coefficients: tuple
    degree: int
    exact: bool = True

    def __post_init__(self):
        if len(self.coefficients) != self.degree + 1 or self.coefficients[0] != 1:
            raise ValueError("characteristic polynomial must be monic of the stated degree")

    def __call__(self, lam):
        return np.polyval(np.array(self.coefficients, dtype=complex if np.iscomplexobj(lam) else float), lam)

    def __eq__(self, other):
        if isinstance(other, CharPoly):
            other = other.coefficients
        return tuple(self.coefficients) == tuple(other)

    __hash__ = None


def _rationalize(M):
    """Exact rational copy of M, or None if some float entry is not a small fraction."""
    out = np.empty(M.shape, dtype=object)
    for idx, v in np.ndenumerate(M):
        if isinstance(v, (int, Fraction, np.integer)):
            out[idx] = Fraction(int(v)) if isinstance(v, np.integer) else Fraction(v)
            continue
        v = float(v)
        if not np.isfinite(v):
            return None
        f = Fraction(v).limit_denominator(10_000)
        if abs(float(f) - v) > 4 * np.finfo(float).eps * max(1.0, abs(v)):
            return None
        out[idx] = f
    return out


def _faddeev_leverrier_int(B):
    """Coefficients c_0=1, c_1..c_N of det(lam I - B) for an integer matrix (Python ints)."""
    N = B.shape[0]
    c = [1]
    AM = B.copy()
    for k in range(1, N + 1):
        tr = sum(AM[i, i] for i in range(N))
        q, r = divmod(-tr, k)
        assert r == 0, "integer recursion produced a non-integer coefficient"
        c.append(q)
        if k < N:
            for i in range(N):
                AM[i, i] += q
            AM = B.dot(AM)
    return c


def char_poly(M):
    """Monic characteristic polynomial det(lam I - M).

    Rational (or integer) matrices get exact coefficients via the
    Faddeev-LeVerrier recursion on an integer rescaling; integer-valued
    coefficients come back as ints, others as Fractions. Matrices with
    irrational entries fall back to a floating recursion.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"square matrix required, got shape {M.shape}")
    N = M.shape[0]
    Q = _rationalize(M)
    if Q is None:
        A = M.astype(float)
        c = [1.0]
        Mk = np.zeros_like(A)
        for k in range(1, N + 1):
            Mk = A @ Mk + c[-1] * np.eye(N)
            c.append(-np.trace(A @ Mk) / k)
        return CharPoly(tuple(c), N, exact=False)
    d = 1
    for v in Q.flat:
        d = lcm(d, v.denominator)
    B = np.empty((N, N), dtype=object)
    for idx, v in np.ndenumerate(Q):
        B[idx] = int(v * d)
    cB = _faddeev_leverrier_int(B)
    coeffs = []
    for k, ck in enumerate(cB):
        f = Fraction(ck, d**k)
        coeffs.append(int(f) if f.denominator == 1 else f)
    return CharPoly(tuple(coeffs), N, exact=True)


def poly_mul(p, q):
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def poly_pow(p, k):
    out = [1]
    for _ in range(k):
        out = poly_mul(out, p)
    return out


def poly_product(*factors):
    """Expand a product of (polynomial, power) pairs."""
    out = [1]
    for p, k in factors:
        out = poly_mul(out, poly_pow(p, k))
    return out


def poly_divmod(num, den):
    """Exact long division of polynomials with rational coefficients."""
    num = [Fraction(a) for a in num]
    den = [Fraction(a) for a in den]
    if len(num) < len(den):
        return [Fraction(0)], num
    q = []
    rem = num[:]
    for i in range(len(num) - len(den) + 1):
        f = rem[i] / den[0]
        q.append(f)
        for j, b in enumerate(den):
            rem[i + j] -= f * b
    return q, rem[len(num) - len(den) + 1:]


def expected_state_poly(n):
    """(lam^2+1)^n (lam+1)^(2n-2) (lam+2)."""
    return poly_product(([1, 0, 1], n), ([1, 1], 2 * n - 2), ([1, 2], 1))


def expected_sigmav_poly(n):
    """lam (1+lam^2)^(n-1) (2+lam) (1+lam)^(2n-2)."""
    return poly_product(([1, 0], 1), ([1, 0, 1], n - 1), ([1, 2], 1), ([1, 1], 2 * n - 2))


def expected_x_poly(n):
    """(lam+2) (lam+1)^(2n-2)."""
    return poly_product(([1, 2], 1), ([1, 1], 2 * n - 2))


def spectral_split(n):
    """Divide the frame Jacobian's polynomial by (lam^2+1)^n exactly.

    Returns (quotient, remainder); the quotient should be (lam+1)^(2n-2)(lam+2)
    and the remainder zero.
    """
    p = char_poly(jacobian_state(n, exact=True)).coefficients
    q, r = poly_divmod(p, poly_pow([1, 0, 1], n))
    return q, r


# -------------------------------------------------------------- linear solve

def solve_rational(A, b):
    """Solve A x = b exactly by Gaussian elimination over the rationals."""
    A = [[Fraction(v) for v in row] for row in A]
    b = [Fraction(v) for v in b]
    N = len(A)
    M = [row + [bi] for row, bi in zip(A, b)]
    for col in range(N):
        piv = next((r for r in range(col, N) if M[r][col] != 0), None)
        if piv is None:
            raise ValueError("singular system")
        M[col], M[piv] = M[piv], M[col]
        for r in range(N):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [a - f * c for a, c in zip(M[r], M[col])]
    return [M[i][N] / M[i][i] for i in range(N)]


# Action of L f = -(D_w f) y + (D_y f) w on the quadratic basis (w^2, wy, y^2),
# acting on coefficient row vectors from the right: L(c . basis) = (c M_L) . basis.
M_L = ((0, -2, 0), (1, 0, -1), (0, 2, 0))


@dataclass(frozen=True)
class ManifoldCoeffs:
    cX: tuple
    cZ: tuple
    cbar: tuple

    def as_float(self):
        return (np.array(self.cX, float), np.array(self.cZ, float), np.array(self.cbar, float))


@dataclass(frozen=True)
class QuadraticMeans:
    sigma_ww: float
    sigma_wy: float
    sigma_yy: float

    def __post_init__(self):
        tol = 1e-12 * (abs(self.sigma_ww) + abs(self.sigma_yy) + 1e-300)
        if self.sigma_ww < -tol or self.sigma_yy < -tol:
            raise ValueError("sigma_ww and sigma_yy must be nonnegative")
        if self.sigma_wy**2 > self.sigma_ww * self.sigma_yy + tol * (abs(self.sigma_ww) + abs(self.sigma_yy)):
            raise ValueError("sigma_wy^2 exceeds sigma_ww * sigma_yy")

    @classmethod
    def from_wy(cls, w, y):
        w = np.asarray(w, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(float(np.mean(w * w)), float(np.mean(w * y)), float(np.mean(y * y)))

    def as_array(self):
        return np.array([self.sigma_ww, self.sigma_wy, self.sigma_yy])


def _ml_matrix():
    return [[Fraction(v) for v in row] for row in M_L]


def _transpose(A):
    return [list(r) for r in zip(*A)]


def manifold_systems():
    """The two linear systems (matrix, right-hand side) solved by row vectors.

    Returns ((Mbar, rbar), (Mblock, rblock)) meaning cbar @ Mbar = rbar and
    [cX cZ] @ Mblock = rblock.
    """
    ML = _ml_matrix()
    I3 = [[Fraction(int(i == j)) for j in range(3)] for i in range(3)]
    ML2 = [[ML[i][j] + 2 * I3[i][j] for j in range(3)] for i in range(3)]
    Mblock = [ML[i] + I3[i] for i in range(3)] + [[-v for v in I3[i]] + ML2[i] for i in range(3)]
    rbar = [Fraction(-1), Fraction(0), Fraction(0)]
    rblock = [Fraction(0)] * 3 + [Fraction(-1), Fraction(0), Fraction(0)]
    return (ML2, rbar), (Mblock, rblock)


def solve_manifold_coeffs():
    (Mbar, rbar), (Mblock, rblock) = manifold_systems()
    cbar = solve_rational(_transpose(Mbar), rbar)
    cxz = solve_rational(_transpose(Mblock), rblock)
    return ManifoldCoeffs(tuple(cxz[:3]), tuple(cxz[3:]), tuple(cbar))


def manifold_residuals(coeffs: ManifoldCoeffs):
    """Max abs residual of each defining system in floating point."""
    (Mbar, rbar), (Mblock, rblock) = manifold_systems()
    cX, cZ, cbar = coeffs.as_float()
    r1 = cbar @ np.array(Mbar, float) - np.array(rbar, float)
    r2 = np.concatenate([cX, cZ]) @ np.array(Mblock, float) - np.array(rblock, float)
    return float(np.abs(r1).max()), float(np.abs(r2).max())


def _basis(w, y, sig):
    return np.stack([w * w - sig[0], w * y - sig[1], y * y - sig[2]])


def manifold_map(coeffs: ManifoldCoeffs, w, y):
    """Quadratic approximation (X, Z, Zbar) of the central manifold over (w, y).

    X has n-1 entries (x_n is implied), Z = u - 1 has n entries.
    """
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if w.shape != y.shape:
        raise ValueError("w and y must have the same length")
    cX, cZ, cbar = coeffs.as_float()
    sig = QuadraticMeans.from_wy(w, y).as_array()
    basis = _basis(w, y, sig)
    Zbar = float(cbar @ sig)
    X = cX @ basis
    Z = Zbar + cZ @ basis
    return X[:-1], Z, Zbar


def quad_form(c, w, y, k):
    """f = c . (w_k^2 - s_ww, w_k y_k - s_wy, y_k^2 - s_yy), or c . sigma when k is None."""
    sig = np.array([np.mean(w * w), np.mean(w * y), np.mean(y * y)])
    if k is None:
        return float(np.dot(c, sig))
    return float(np.dot(c, _basis(w[k], y[k], sig)))


def apply_L(c, w, y, k):
    """L applied to quad_form(c, ., ., k) at (w, y), from its exact gradient."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    n = w.size
    c1, c2, c3 = (float(v) for v in c)
    # gradient of the sigma part (sign flipped for the per-agent forms)
    sgn = 1.0 if k is None else -1.0
    Dw = sgn * (2 * c1 * w + c2 * y) / n
    Dy = sgn * (c2 * w + 2 * c3 * y) / n
    if k is not None:
        Dw[k] += 2 * c1 * w[k] + c2 * y[k]
        Dy[k] += c2 * w[k] + 2 * c3 * y[k]
    return float(-Dw @ y + Dy @ w)


def pde_residuals(coeffs: ManifoldCoeffs, w, y):
    """Max abs residuals of the three homological equations at (w, y)."""
    cX, cZ, cbar = coeffs.as_float()
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    e1 = np.array([1.0, 0.0, 0.0])
    r1 = r2 = 0.0
    for k in range(w.size):
        X = quad_form(cX, w, y, k)
        Zd = quad_form(cZ, w, y, k)
        r1 = max(r1, abs(apply_L(cX, w, y, k) - Zd))
        r2 = max(r2, abs(apply_L(cZ, w, y, k) + 2 * Zd + X + quad_form(e1, w, y, k)))
    Zbar = quad_form(cbar, w, y, None)
    r3 = abs(apply_L(cbar, w, y, None) + 2 * Zbar + quad_form(e1, w, y, None))
    return r1, r2, r3


SPEED_GAP_CONSTANT = (2 - np.sqrt(2)) / 8
