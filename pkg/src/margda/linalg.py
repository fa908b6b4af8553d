"""Dense linear algebra kernels.

Matrices are plain ``float64`` numpy arrays. The real Schur factorization
(Hessenberg reduction followed by Francis double-shift QR) and the
Bartels-Stewart back-substitution are compiled with numba; general square
solves go through a pivoted LU factorization.
"""

import warnings
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    DimensionTooLarge,
    NonFiniteError,
    SingularMatrix,
    SpectrumOverlap,
)

__all__ = [
    "SchurForm",
    "as_mat",
    "solve_linear",
    "schur_decompose",
    "schur_eigenvalues",
    "solve_sylvester",
    "sylvester_oracle_kron",
]

PIVOT_RTOL = 1e-12
OVERLAP_TOL = 1e-10
SCHUR_ITERS_PER_DIM = 30
KRON_MAX_DIM = 64

_EPS = np.finfo(np.float64).eps


def as_mat(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array (no copy when possible)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def _check_finite_result(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} produced non-finite values")
    return arr


def _require_square(a, name):
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")


def solve_linear(a, b):
    """Solve ``a @ x = b`` with partial-pivoting LU.

    ``b`` may be a vector or a matrix; the result has the same shape.
    Raises :class:`SingularMatrix` when a pivot falls below
    ``1e-12 * ||a||_inf``.
    """
    a = as_mat(a, "a")
    _require_square(a, "a")
    b_arr = np.asarray(b, dtype=np.float64)
    vector = b_arr.ndim == 1
    b2 = as_mat(b_arr.reshape(-1, 1) if vector else b_arr, "b")
    if b2.shape[0] != a.shape[0]:
        raise DimensionMismatch(
            f"b has {b2.shape[0]} rows, a is {a.shape[0]}x{a.shape[1]}"
        )
    if a.shape[0] == 0:
        return b_arr.copy()
    with warnings.catch_warnings():
        # exact singularity is reported through SingularMatrix below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    norm_inf = np.abs(a).sum(axis=1).max()
    pivots = np.abs(np.diag(lu))
    if norm_inf == 0.0 or pivots.min() < PIVOT_RTOL * norm_inf:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} below {PIVOT_RTOL:g} * ||a||_inf = {norm_inf:.3e}"
        )
    x = scipy.linalg.lu_solve((lu, piv), b2, check_finite=False)
    _check_finite_result(x, "solve_linear")
    return x.ravel() if vector else x


@dataclass(frozen=True)
class SchurForm:
    """Real Schur factorization ``a = q @ t @ q.T``."""

    q: np.ndarray
    t: np.ndarray

    @property
    def eigenvalues(self):
        return schur_eigenvalues(self.t)


@numba.njit(cache=True)
def _hessenberg(h, q):
    n = h.shape[0]
    for k in range(n - 2):
        m = n - k - 1
        alpha = 0.0
        for i in range(m):
            alpha += h[k + 1 + i, k] ** 2
        alpha = np.sqrt(alpha)
        if alpha == 0.0:
            continue
        v = np.empty(m)
        for i in range(m):
            v[i] = h[k + 1 + i, k]
        sgn = 1.0 if v[0] >= 0.0 else -1.0
        v[0] += sgn * alpha
        vv = 0.0
        for i in range(m):
            vv += v[i] * v[i]
        beta = 2.0 / vv
        for j in range(k, n):
            s = 0.0
            for i in range(m):
                s += v[i] * h[k + 1 + i, j]
            s *= beta
            for i in range(m):
                h[k + 1 + i, j] -= s * v[i]
        for r in range(n):
            s = 0.0
            for i in range(m):
                s += h[r, k + 1 + i] * v[i]
            s *= beta
            for i in range(m):
                h[r, k + 1 + i] -= s * v[i]
            s = 0.0
            for i in range(m):
                s += q[r, k + 1 + i] * v[i]
            s *= beta
            for i in range(m):
                q[r, k + 1 + i] -= s * v[i]
        h[k + 1, k] = -sgn * alpha
        for i in range(k + 2, n):
            h[i, k] = 0.0


@numba.njit(cache=True)
def _reflect_rows(h, v, beta, r0, nr, c0, c1):
    # h[r0:r0+nr, c0:c1] = (I - beta v v^T) h[...]
    for j in range(c0, c1):
        s = 0.0
        for i in range(nr):
            s += v[i] * h[r0 + i, j]
        s *= beta
        for i in range(nr):
            h[r0 + i, j] -= s * v[i]


@numba.njit(cache=True)
def _reflect_cols(h, v, beta, c0, nc, r0, r1):
    # h[r0:r1, c0:c0+nc] = h[...] (I - beta v v^T)
    for r in range(r0, r1):
        s = 0.0
        for i in range(nc):
            s += h[r, c0 + i] * v[i]
        s *= beta
        for i in range(nc):
            h[r, c0 + i] -= s * v[i]


@numba.njit(cache=True)
def _house(x, v):
    # Fills v so that (I - beta v v^T) x is a multiple of e_1; returns beta.
    m = x.shape[0]
    alpha = 0.0
    for i in range(m):
        alpha += x[i] * x[i]
    alpha = np.sqrt(alpha)
    if alpha == 0.0:
        for i in range(m):
            v[i] = 0.0
        return 0.0
    for i in range(m):
        v[i] = x[i]
    sgn = 1.0 if x[0] >= 0.0 else -1.0
    v[0] += sgn * alpha
    vv = 0.0
    for i in range(m):
        vv += v[i] * v[i]
    return 2.0 / vv


@numba.njit(cache=True)
def _standardize_2x2(h, q, i):
    # Split a 2x2 diagonal block with real eigenvalues into triangular form.
    n = h.shape[0]
    a = h[i, i]
    b = h[i, i + 1]
    c = h[i + 1, i]
    d = h[i + 1, i + 1]
    if c == 0.0:
        return
    p = 0.5 * (a - d)
    disc = p * p + b * c
    if disc < 0.0:
        return
    lam = 0.5 * (a + d) + (np.sqrt(disc) if p >= 0.0 else -np.sqrt(disc))
    v1 = b
    v2 = lam - a
    w1 = lam - d
    w2 = c
    if w1 * w1 + w2 * w2 > v1 * v1 + v2 * v2:
        v1 = w1
        v2 = w2
    nv = np.sqrt(v1 * v1 + v2 * v2)
    if nv == 0.0:
        return
    cs = v1 / nv
    sn = v2 / nv
    for j in range(i, n):
        x = h[i, j]
        y = h[i + 1, j]
        h[i, j] = cs * x + sn * y
        h[i + 1, j] = -sn * x + cs * y
    for r in range(0, i + 2):
        x = h[r, i]
        y = h[r, i + 1]
        h[r, i] = cs * x + sn * y
        h[r, i + 1] = -sn * x + cs * y
    for r in range(n):
        x = q[r, i]
        y = q[r, i + 1]
        q[r, i] = cs * x + sn * y
        q[r, i + 1] = -sn * x + cs * y
    h[i + 1, i] = 0.0


@numba.njit(cache=True)
def _francis(h, q, max_iter):
    n = h.shape[0]
    eps = 2.220446049250313e-16
    hnorm = 0.0
    for i in range(n):
        for j in range(n):
            hnorm = max(hnorm, abs(h[i, j]))
    if hnorm == 0.0:
        return True
    x3 = np.empty(3)
    v3 = np.empty(3)
    x2 = np.empty(2)
    v2 = np.empty(2)
    hi = n - 1
    total = 0
    its = 0
    while hi > 0:
        l = hi
        while l > 0:
            s = abs(h[l - 1, l - 1]) + abs(h[l, l])
            if s == 0.0:
                s = hnorm
            if abs(h[l, l - 1]) <= eps * s:
                h[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            hi -= 1
            its = 0
            continue
        if l == hi - 1:
            _standardize_2x2(h, q, hi - 1)
            hi -= 2
            its = 0
            continue
        if total >= max_iter:
            return False
        total += 1
        its += 1
        if its % 10 == 0:
            sx = abs(h[hi, hi - 1]) + abs(h[hi - 1, hi - 2])
            tr = 1.5 * sx
            det = sx * sx
        else:
            tr = h[hi - 1, hi - 1] + h[hi, hi]
            det = h[hi - 1, hi - 1] * h[hi, hi] - h[hi - 1, hi] * h[hi, hi - 1]
        x = h[l, l] * h[l, l] + h[l, l + 1] * h[l + 1, l] - tr * h[l, l] + det
        y = h[l + 1, l] * (h[l, l] + h[l + 1, l + 1] - tr)
        z = h[l + 1, l] * h[l + 2, l + 1]
        for k in range(l, hi - 1):
            x3[0] = x
            x3[1] = y
            x3[2] = z
            beta = _house(x3, v3)
            if beta != 0.0:
                _reflect_rows(h, v3, beta, k, 3, max(l, k - 1), n)
                _reflect_cols(h, v3, beta, k, 3, 0, min(k + 3, hi) + 1)
                _reflect_cols(q, v3, beta, k, 3, 0, n)
            x = h[k + 1, k]
            y = h[k + 2, k]
            if k < hi - 2:
                z = h[k + 3, k]
        x2[0] = x
        x2[1] = y
        beta = _house(x2, v2)
        if beta != 0.0:
            _reflect_rows(h, v2, beta, hi - 1, 2, hi - 2, n)
            _reflect_cols(h, v2, beta, hi - 1, 2, 0, hi + 1)
            _reflect_cols(q, v2, beta, hi - 1, 2, 0, n)
    for j in range(n):
        for i in range(j + 2, n):
            h[i, j] = 0.0
    return True


def schur_decompose(a):
    """Real Schur factorization of a square matrix.

    Returns ``SchurForm(q, t)`` with ``q`` orthogonal and ``t`` upper
    quasi-triangular; 2x2 diagonal blocks appear only for complex
    conjugate eigenvalue pairs.

    Raises
    ------
    ConvergenceFailure
        If the QR sweep needs more than ``30 * n`` iterations.
    """
    a = as_mat(a, "a")
    _require_square(a, "a")
    n = a.shape[0]
    h = np.array(a, dtype=np.float64, order="C", copy=True)
    q = np.eye(n)
    if n > 2:
        _hessenberg(h, q)
    if n > 1:
        ok = _francis(h, q, SCHUR_ITERS_PER_DIM * n)
        if not ok:
            raise ConvergenceFailure(
                f"real Schur QR did not converge in {SCHUR_ITERS_PER_DIM * n} iterations"
            )
    return SchurForm(q=q, t=h)


def _block_starts(t):
    n = t.shape[0]
    starts = []
    i = 0
    while i < n:
        starts.append(i)
        i += 2 if (i + 1 < n and t[i + 1, i] != 0.0) else 1
    return starts


def schur_eigenvalues(t):
    """Eigenvalues read off the diagonal blocks of a quasi-triangular ``t``."""
    n = t.shape[0]
    out = np.empty(n, dtype=np.complex128)
    for i in _block_starts(t):
        if i + 1 < n and t[i + 1, i] != 0.0:
            a, b, c, d = t[i, i], t[i, i + 1], t[i + 1, i], t[i + 1, i + 1]
            mean = 0.5 * (a + d)
            disc = complex(0.25 * (a - d) ** 2 + b * c)
            root = np.sqrt(disc)
            out[i] = mean + root
            out[i + 1] = mean - root
        else:
            out[i] = t[i, i]
    return out


@numba.njit(cache=True)
def _small_solve(m, rhs):
    # Gaussian elimination with partial pivoting on a <= 4x4 system.
    k = rhs.shape[0]
    a = m.copy()
    x = rhs.copy()
    for col in range(k):
        piv = col
        best = abs(a[col, col])
        for r in range(col + 1, k):
            if abs(a[r, col]) > best:
                best = abs(a[r, col])
                piv = r
        if best == 0.0:
            return x, False
        if piv != col:
            for j in range(k):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        for r in range(col + 1, k):
            f = a[r, col] / a[col, col]
            if f != 0.0:
                for j in range(col, k):
                    a[r, j] -= f * a[col, j]
                x[r] -= f * x[col]
    for col in range(k - 1, -1, -1):
        s = x[col]
        for j in range(col + 1, k):
            s -= a[col, j] * x[j]
        x[col] = s / a[col, col]
    return x, True


@numba.njit(cache=True)
def _quasi_triangular_sylvester(ta, tb, f, a_starts, a_sizes, b_starts, b_sizes):
    # Solves ta @ y + y @ tb = f; ta, tb upper quasi-triangular.
    na = ta.shape[0]
    nb = tb.shape[0]
    y = np.zeros((na, nb))
    rhs = np.empty((2, 2))
    for jb in range(b_starts.shape[0]):
        c0 = b_starts[jb]
        nj = b_sizes[jb]
        for ib in range(a_starts.shape[0] - 1, -1, -1):
            r0 = a_starts[ib]
            ni = a_sizes[ib]
            for ii in range(ni):
                for jj in range(nj):
                    s = f[r0 + ii, c0 + jj]
                    for k in range(r0 + ni, na):
                        s -= ta[r0 + ii, k] * y[k, c0 + jj]
                    for k in range(c0):
                        s -= y[r0 + ii, k] * tb[k, c0 + jj]
                    rhs[ii, jj] = s
            k = ni * nj
            m = np.zeros((k, k))
            vec = np.empty(k)
            # column-major vec: index = ii + ni * jj
            for jj in range(nj):
                for ii in range(ni):
                    row = ii + ni * jj
                    vec[row] = rhs[ii, jj]
                    for kk in range(ni):
                        m[row, kk + ni * jj] += ta[r0 + ii, r0 + kk]
                    for kk in range(nj):
                        m[row, ii + ni * kk] += tb[c0 + kk, c0 + jj]
            sol, ok = _small_solve(m, vec)
            if not ok:
                return y, False
            for jj in range(nj):
                for ii in range(ni):
                    y[r0 + ii, c0 + jj] = sol[ii + ni * jj]
    return y, True


def _blocks(t):
    starts = _block_starts(t)
    n = t.shape[0]
    sizes = [(starts[i + 1] if i + 1 < len(starts) else n) - s for i, s in enumerate(starts)]
    return np.asarray(starts, dtype=np.int64), np.asarray(sizes, dtype=np.int64)


def solve_sylvester(a, b, c):
    """Solve ``a @ w + w @ b = c`` by the Bartels-Stewart method.

    Both coefficient matrices are reduced to real Schur form, the
    transformed equation is solved block by block, and the solution is
    mapped back.

    Raises
    ------
    SpectrumOverlap
        When an eigenvalue of ``a`` and one of ``-b`` coincide within
        ``1e-10 * max(1, ||a||_F, ||b||_F)``.
    """
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    c = as_mat(c, "c")
    _require_square(a, "a")
    _require_square(b, "b")
    if c.shape != (a.shape[0], b.shape[0]):
        raise DimensionMismatch(
            f"c has shape {c.shape}, expected {(a.shape[0], b.shape[0])}"
        )
    fa = schur_decompose(a)
    fb = schur_decompose(b)
    ea = schur_eigenvalues(fa.t)
    eb = schur_eigenvalues(fb.t)
    if ea.size and eb.size:
        gap = np.abs(ea[:, None] + eb[None, :]).min()
        scale = max(1.0, np.linalg.norm(a), np.linalg.norm(b))
        if gap <= OVERLAP_TOL * scale:
            raise SpectrumOverlap(
                f"eig(a) and eig(-b) are {gap:.3e} apart; Sylvester operator is singular"
            )
    f = fa.q.T @ c @ fb.q
    a_starts, a_sizes = _blocks(fa.t)
    b_starts, b_sizes = _blocks(fb.t)
    y, ok = _quasi_triangular_sylvester(
        fa.t, fb.t, np.ascontiguousarray(f), a_starts, a_sizes, b_starts, b_sizes
    )
    if not ok:
        raise SpectrumOverlap("singular diagonal block system in Bartels-Stewart")
    w = fa.q @ y @ fb.q.T
    return _check_finite_result(w, "solve_sylvester")


def sylvester_oracle_kron(a, b, c):
    """Reference solver: dense solve of the vectorized Sylvester system.

    ``vec(w)`` solves ``(I kron a + b.T kron I) vec(w) = vec(c)``. Cost is
    O(d^6), so inputs larger than 64x64 are refused.
    """
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    c = as_mat(c, "c")
    _require_square(a, "a")
    _require_square(b, "b")
    m, n = a.shape[0], b.shape[0]
    if c.shape != (m, n):
        raise DimensionMismatch(f"c has shape {c.shape}, expected {(m, n)}")
    if max(m, n) > KRON_MAX_DIM:
        raise DimensionTooLarge(f"Kronecker oracle limited to d <= {KRON_MAX_DIM}")
    k = np.kron(np.eye(n), a) + np.kron(b.T, np.eye(m))
    vec = solve_linear(k, c.reshape(-1, order="F"))
    return vec.reshape((m, n), order="F")
