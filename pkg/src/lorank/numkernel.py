"""Dense linear-algebra kernels and proximal operators.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The SVD is a
one-sided (Hestenes) Jacobi iteration with a fixed cyclic pair order, so the
same input always yields bit-identical factors.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .errors import FormatError, NumericalError

SVD_TOL = 1e-12
SVD_MAX_SWEEPS = 60
_EPS = np.finfo(float).eps


def as_matrix(m, name="matrix"):
    """Return ``m`` as a finite 2-D float64 array (no copy when possible)."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError("%s must be 2-D, got shape %s" % (name, a.shape))
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("%s must be nonempty, got shape %s" % (name, a.shape))
    if not np.all(np.isfinite(a)):
        raise ValueError("%s contains non-finite entries" % name)
    return a


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(sigma) @ v.T`` with ``k = min(rows, cols)``.

    ``u`` is rows x k, ``v`` is cols x k, ``sigma`` is nonincreasing.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    sweeps: int = 0

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


@numba.njit(cache=True)
def _jacobi_sweep(x, m, tol, tiny_sq):
    # Rows of x hold [column of the working matrix | column of V].
    n = x.shape[0]
    w = x.shape[1]
    off = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            a = 0.0
            b = 0.0
            g = 0.0
            for k in range(m):
                xi = x[i, k]
                xj = x[j, k]
                a += xi * xi
                b += xj * xj
                g += xi * xj
            if a <= tiny_sq or b <= tiny_sq:
                continue
            r = abs(g) / np.sqrt(a * b)
            if r > off:
                off = r
            if r <= tol:
                continue
            zeta = (b - a) / (2.0 * g)
            sgn = 1.0 if zeta >= 0.0 else -1.0
            t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for k in range(w):
                xi = x[i, k]
                xj = x[j, k]
                x[i, k] = c * xi - s * xj
                x[j, k] = s * xi + c * xj
    return off


def _complete_orthonormal(u, filled):
    """Fill the columns of ``u`` not flagged in ``filled`` with an orthonormal completion.

    Greedy pivoting over the standard basis: each new column is the
    largest-norm column of the projector onto the current complement.
    """
    rows = u.shape[0]
    q = u[:, filled]
    proj = np.eye(rows) - q @ q.T
    for j in np.flatnonzero(~filled):
        norms = np.einsum("ij,ij->j", proj, proj)
        k = int(np.argmax(norms))
        col = proj[:, k] / np.sqrt(norms[k])
        col -= q @ (q.T @ col)
        col /= np.linalg.norm(col)
        u[:, j] = col
        q = np.column_stack([q, col])
        proj -= np.outer(col, col @ proj)
    return u


def _jacobi_tall(a, v0=None, tol=SVD_TOL, max_sweeps=SVD_MAX_SWEEPS):
    m, n = a.shape
    # Scale by a power of two (exact) so the largest entry is near 1 and
    # squared norms cannot underflow or overflow.
    peak = float(np.max(np.abs(a)))
    shift = int(np.frexp(peak)[1]) if peak > 0.0 else 0
    a = np.ldexp(a, -shift)
    v = np.eye(n) if v0 is None else np.array(v0, dtype=float)
    x = np.empty((n, m + n))
    x[:, :m] = (a @ v).T
    x[:, m:] = v.T
    fro = np.linalg.norm(a)
    tiny = n * _EPS * fro
    off = np.inf
    for sweep in range(1, max_sweeps + 1):
        off = _jacobi_sweep(x, m, tol, tiny * tiny)
        if off <= tol:
            break
    else:
        raise NumericalError(
            "one-sided Jacobi did not converge in %d sweeps (off-diagonal %.3g)"
            % (max_sweeps, off),
            residual=off,
            iteration=max_sweeps,
        )
    w = x[:, :m].T
    v = x[:, m:].T
    sigma = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = np.ascontiguousarray(v[:, order])
    nonzero = sigma > tiny
    sigma = np.where(nonzero, sigma, 0.0)
    u = np.zeros((m, n))
    u[:, nonzero] = w[:, nonzero] / sigma[nonzero]
    if not nonzero.all():
        u = _complete_orthonormal(u, nonzero)
    return u, np.ldexp(sigma, shift), v, sweep


def svd(m, start=None):
    """Thin SVD by cyclic one-sided Jacobi.

    ``start`` may be a previous :class:`SvdResult` for a nearby matrix of the
    same shape; its vectors seed the rotation and usually cut the sweep count.
    The largest-magnitude entry of every right singular vector is positive.
    """
    a = as_matrix(m)
    wide = a.shape[0] < a.shape[1]
    v0 = None
    if start is not None:
        v0 = start.u if wide else start.v
        k = min(a.shape)
        if v0.shape != (k, k):
            v0 = None
    if wide:
        v, sigma, u, sweeps = _jacobi_tall(a.T, v0)
    else:
        u, sigma, v, sweeps = _jacobi_tall(a, v0)
    pivots = np.argmax(np.abs(v), axis=0)
    flip = v[pivots, np.arange(v.shape[1])] < 0
    v[:, flip] *= -1.0
    u[:, flip] *= -1.0
    return SvdResult(u=u, sigma=sigma, v=v, sweeps=sweeps)


def soft_threshold(m, tau):
    """Entrywise shrinkage ``sgn(x) * max(|x| - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative, got %r" % tau)
    a = np.asarray(m, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - tau, 0.0)


def svt(m, tau):
    """Singular value thresholding: shrink the singular values of ``m`` by ``tau``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative, got %r" % tau)
    r = svd(m)
    return (r.u * soft_threshold(r.sigma, tau)) @ r.v.T


def nuclear_norm(m):
    return float(np.sum(svd(m).sigma))


def l1_norm(m):
    return float(np.sum(np.abs(as_matrix(m))))


def fro_norm(m):
    return float(np.sqrt(np.sum(as_matrix(m) ** 2)))


def numerical_rank(m, rel_tol):
    """Count singular values above ``rel_tol * sigma_1``; 0 for the zero matrix."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1), got %r" % rel_tol)
    sigma = svd(m).sigma
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0]))


def sym_eigvals(m, tol=1e-15, max_sweeps=100):
    """Eigenvalues of a small symmetric matrix by classical two-sided Jacobi.

    Kept deliberately independent of :func:`svd`; it exists to cross-check it.
    Returned in nonincreasing order.
    """
    a = [list(map(float, row)) for row in as_matrix(m)]
    n = len(a)
    if any(len(row) != n for row in a):
        raise ValueError("matrix must be square")
    for _ in range(max_sweeps):
        off = sum(a[i][j] ** 2 for i in range(n) for j in range(n) if i != j)
        scale = sum(a[i][i] ** 2 for i in range(n)) or 1.0
        if off <= tol * tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p][q] == 0.0:
                    continue
                theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q])
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + (theta * theta + 1.0) ** 0.5)
                c = 1.0 / (t * t + 1.0) ** 0.5
                s = t * c
                for k in range(n):
                    akp, akq = a[k][p], a[k][q]
                    a[k][p] = c * akp - s * akq
                    a[k][q] = s * akp + c * akq
                for k in range(n):
                    apk, aqk = a[p][k], a[q][k]
                    a[p][k] = c * apk - s * aqk
                    a[q][k] = s * apk + c * aqk
    return np.array(sorted((a[i][i] for i in range(n)), reverse=True))


# -- text format ------------------------------------------------------------


def format_real(x):
    """17 significant digits: enough for an exact float64 round-trip."""
    return format(float(x), ".17g")


def format_matrix(m):
    a = as_matrix(m)
    lines = ["%d %d" % a.shape]
    lines.extend(" ".join(format_real(x) for x in row) for row in a)
    return "\n".join(lines) + "\n"


def parse_matrix(lines, start=0, what="matrix", extra_fields=0):
    """Parse a matrix block from a list of lines beginning at index ``start``.

    The header is ``rows cols`` followed by ``extra_fields`` tokens the caller
    handles itself.  Returns ``(matrix, next_index)``; errors carry 1-based
    line numbers.
    """
    if start >= len(lines):
        raise FormatError("missing %s header" % what, line=start + 1)
    head = lines[start].split()
    if len(head) != 2 + extra_fields:
        raise FormatError("bad %s header %r" % (what, lines[start]), line=start + 1)
    head = head[:2]
    try:
        rows, cols = (int(t) for t in head)
    except ValueError:
        raise FormatError("bad %s header %r, expected 'rows cols'" % (what, lines[start]), line=start + 1)
    if rows < 1 or cols < 1:
        raise FormatError("%s dimensions must be positive" % what, line=start + 1)
    out = np.empty((rows, cols))
    for r in range(rows):
        idx = start + 1 + r
        if idx >= len(lines):
            raise FormatError("missing %s row %d of %d" % (what, r + 1, rows), line=idx + 1)
        fields = lines[idx].split()
        if len(fields) != cols:
            raise FormatError("expected %d values in %s row, got %d" % (cols, what, len(fields)), line=idx + 1)
        try:
            out[r] = [float(t) for t in fields]
        except ValueError as exc:
            raise FormatError("%s: %s" % (what, exc), line=idx + 1)
    if not np.all(np.isfinite(out)):
        raise FormatError("%s contains non-finite entries" % what, line=start + 1)
    return out, start + 1 + rows


def loads_matrix(text):
    lines = text.splitlines()
    m, end = parse_matrix(lines)
    if any(line.strip() for line in lines[end:]):
        raise FormatError("trailing content after matrix", line=end + 1)
    return m
