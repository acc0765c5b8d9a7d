"""Dense complex linear algebra and polynomial kernels.

Matrices are plain complex ``numpy`` arrays and polynomials are 1-D arrays of
coefficients in ascending degree.  Everything here is a pure function of its
inputs.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

EPS = np.finfo(float).eps
ABS_FLOOR = 1e-14


class RootFindingError(RuntimeError):
    """Raised when the simultaneous root iteration does not converge.

    The best iterate and its per-root residuals are kept on the exception.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class NotHermitianError(ValueError):
    pass


def as_matrix(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    return M


def hermitian_defect(M) -> tuple[float, tuple[int, int]]:
    """Largest entry of ``|M - M^*|`` and the index where it occurs."""
    M = as_matrix(M)
    D = np.abs(M - M.conj().T)
    idx = np.unravel_index(int(np.argmax(D)), D.shape)
    return float(D[idx]), (int(idx[0]), int(idx[1]))


def is_hermitian(M, rtol: float = 1e-12) -> bool:
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        return False
    defect, _ = hermitian_defect(M)
    return defect <= rtol * (1.0 + np.max(np.abs(M), initial=0.0))


def check_hermitian(M, rtol: float = 1e-12, name: str = "matrix") -> np.ndarray:
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise NotHermitianError(f"{name} is not square: shape {M.shape}")
    defect, (i, j) = hermitian_defect(M)
    if defect > rtol * (1.0 + np.max(np.abs(M), initial=0.0)):
        raise NotHermitianError(
            f"{name} is not Hermitian: |M[{i}][{j}] - conj(M[{j}][{i}])| = {defect:.3e}"
        )
    return M


def determinant(M) -> complex:
    """Determinant by LU with partial pivoting; triangular inputs use the diagonal."""
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("determinant of a non-square matrix")
    if not np.any(np.tril(M, -1)) or not np.any(np.triu(M, 1)):
        return complex(np.prod(np.diag(M)))
    return complex(np.linalg.det(M))


def hermitian_eigen(M, method: str = "lapack"):
    """Eigen-decomposition of a Hermitian matrix.

    Returns ascending real eigenvalues and a unitary matrix whose columns are
    the eigenvectors.  ``method="jacobi"`` runs the cyclic complex Jacobi
    iteration in :func:`jacobi_eigh`, which is only sensible for small matrices.
    """
    M = check_hermitian(M)
    if method == "lapack":
        w, V = np.linalg.eigh(M)
        return w, V
    if method == "jacobi":
        return jacobi_eigh(M)
    raise ValueError(f"unknown eigensolver method {method!r}")


def jacobi_eigh(M, tol: float = 1e-15, max_sweeps: int = 60):
    """Cyclic complex Jacobi eigensolver for small Hermitian matrices."""
    A = check_hermitian(M).copy()
    A = 0.5 * (A + A.conj().T)
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    scale = np.linalg.norm(A) or 1.0
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                phase = apq / mag
                tau = (A[q, q].real - A[p, p].real) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                # G = diag(1, conj(phase)) @ [[c, s], [-s, c]]
                G = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])
                cols = [p, q]
                A[:, cols] = A[:, cols] @ G
                A[cols, :] = G.conj().T @ A[cols, :]
                A[q, p] = 0.0
                A[p, q] = 0.0
                V[:, cols] = V[:, cols] @ G
    else:
        warnings.warn("Jacobi eigensolver hit the sweep limit", RuntimeWarning)
    w = np.diag(A).real.copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def block_tridiagonal_eigvalsh(diag_blocks, upper_blocks) -> np.ndarray:
    """Eigenvalues of a Hermitian block tridiagonal matrix via banded storage.

    ``diag_blocks[k]`` sits at block (k, k) and ``upper_blocks[k]`` at block
    (k, k+1); the lower blocks are the conjugate transposes.
    """
    diag_blocks = [as_matrix(b) for b in diag_blocks]
    n = len(diag_blocks)
    r = diag_blocks[0].shape[0]
    if len(upper_blocks) != n - 1:
        raise ValueError("need one upper block fewer than diagonal blocks")
    N = n * r
    bw = 2 * r - 1 if n > 1 else r - 1
    ab = np.zeros((bw + 1, N), dtype=complex)
    # upper banded storage: ab[bw + i - j, j] = M[i, j] for i <= j
    for k in range(n):
        D = diag_blocks[k]
        for a in range(r):
            for b in range(a, r):
                ab[bw + a - b, k * r + b] = D[a, b]
        if k < n - 1:
            U = as_matrix(upper_blocks[k])
            for a in range(r):
                for b in range(r):
                    i, j = k * r + a, (k + 1) * r + b
                    if j - i <= bw:
                        ab[bw + i - j, j] = U[a, b]
    if not np.any(ab.imag):
        ab = ab.real
    return scipy.linalg.eigvals_banded(ab, lower=False)


def nullspace_vector(M, tol: float, scale: float | None = None) -> list[np.ndarray]:
    """Orthonormal null vectors of ``M`` at relative tolerance ``tol``.

    A right singular vector counts as null when its singular value is at most
    ``tol * scale`` (``scale`` defaults to ``||M||_2``).  Each vector has unit
    norm and its first component of modulus above ``tol`` is rotated to be
    positive real.
    """
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("nullspace_vector expects a square matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    _, s, Vh = np.linalg.svd(M)
    if scale is None:
        scale = s[0] if s.size else 0.0
    out = []
    for sigma, row in zip(s[::-1], Vh[::-1]):
        if sigma > tol * scale:
            break
        out.append(normalize_phase(row.conj(), tol))
    return out


def normalize_phase(v, tol: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    big = np.flatnonzero(np.abs(v) > tol)
    if big.size:
        lead = v[big[0]]
        v = v * (abs(lead) / lead)
    return v


# ---------------------------------------------------------------------------
# polynomials (ascending coefficients)
# ---------------------------------------------------------------------------

def trim_poly(coeffs, rtol: float = 1e-14) -> np.ndarray:
    """Drop leading (highest-degree) coefficients below ``rtol * max|c|``."""
    c = np.asarray(coeffs, dtype=complex).ravel()
    if c.size == 0:
        return c
    cut = rtol * np.max(np.abs(c))
    keep = np.flatnonzero(np.abs(c) > cut)
    if keep.size == 0:
        return c[:1] * 0
    return c[: keep[-1] + 1]


def poly_eval(coeffs, z):
    c = np.asarray(coeffs, dtype=complex)
    return np.polyval(c[::-1], z)


def poly_from_roots(roots) -> np.ndarray:
    return np.poly(np.asarray(roots, dtype=complex))[::-1].astype(complex)


def poly_scale(coeffs, z):
    """Magnitude ``sum_k |c_k| |z|^k`` used for backward-error tests."""
    a = np.abs(np.asarray(coeffs, dtype=complex))
    return np.polyval(a[::-1], np.abs(z))


def _newton_polygon_start(c: np.ndarray) -> np.ndarray:
    d = c.size - 1
    a = np.abs(c)
    pts = [(k, np.log(a[k])) for k in range(d + 1) if a[k] > 0]
    hull: list[tuple[int, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    z = []
    sigma = 0.7
    for (i, yi), (j, yj) in zip(hull[:-1], hull[1:]):
        m = j - i
        radius = np.exp((yi - yj) / m)
        for l in range(m):
            ang = 2 * np.pi * l / m + 2 * np.pi * i / d + sigma
            z.append(radius * np.exp(1j * ang))
    return np.asarray(z, dtype=complex)


def cluster_roots(roots, rtol: float = 1e-7):
    """Group roots lying within relative distance ``rtol`` of each other.

    Returns a list of ``(center, multiplicity, indices)`` ordered by first index.
    """
    roots = np.asarray(roots, dtype=complex)
    n = roots.size
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            lim = rtol * max(abs(roots[i]), abs(roots[j])) + ABS_FLOOR
            if abs(roots[i] - roots[j]) <= lim:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = []
    for idx in sorted(groups.values(), key=lambda g: g[0]):
        out.append((complex(np.mean(roots[idx])), len(idx), idx))
    return out


def _polish_cluster(desc, center: complex, mult: int, rtol: float) -> complex:
    # an m-fold root is a simple root of the (m-1)-th derivative
    g = np.polyder(desc, mult - 1)
    dg = np.polyder(g)
    zc = center
    for _ in range(4):
        dv = np.polyval(dg, zc)
        if dv == 0:
            break
        step = np.polyval(g, zc) / dv
        if not np.isfinite(step):
            break
        zc = zc - step
        if abs(step) <= 4 * EPS * abs(zc):
            break
    return zc if abs(zc - center) <= rtol * max(abs(center), 1.0) else center


def poly_roots(coeffs, max_iter: int = 200, cluster_rtol: float = 1e-7) -> np.ndarray:
    """All roots of a polynomial by Aberth-Ehrlich iteration.

    Starting points come from the Newton polygon of the coefficient moduli, so
    roots spread over many orders of magnitude are found without rescaling.
    Isolated roots get Newton polishing; roots closer than ``cluster_rtol``
    (relative) are merged and returned repeated at their centroid.
    """
    c = trim_poly(coeffs)
    d = c.size - 1
    if d < 1:
        raise ValueError("poly_roots needs degree >= 1")
    nzero = 0
    while c[nzero] == 0:
        nzero += 1
    c = c[nzero:] / c[-1]
    d = c.size - 1
    if d == 0:
        return np.zeros(nzero, dtype=complex)

    desc = c[::-1]
    ddesc = np.polyder(desc)
    z = _newton_polygon_start(c)
    active = np.ones(d, dtype=bool)
    tiny = np.finfo(float).tiny
    for _ in range(max_iter):
        p = np.polyval(desc, z)
        done = np.abs(p) <= 8 * EPS * poly_scale(c, z)
        active &= ~done
        if not active.any():
            break
        idx = np.flatnonzero(active)
        dp = np.polyval(ddesc, z[idx])
        diff = z[idx, None] - z[None, :]
        diff[np.arange(idx.size), idx] = np.inf
        s = np.sum(1.0 / diff, axis=1)
        ratio = p[idx] / np.where(dp == 0, tiny, dp)
        w = ratio / (1.0 - ratio * s)
        w = np.where(np.isfinite(w), w, 1e-3 * (1 + np.abs(z[idx])))
        z[idx] = z[idx] - w
    else:
        p = np.polyval(desc, z)
        res = np.abs(p) / poly_scale(c, z)
        if np.any(res > 1e-10):
            raise RootFindingError(
                f"Aberth iteration did not converge in {max_iter} steps "
                f"(max relative residual {res.max():.2e})",
                best=z.copy(),
                residual=res,
            )

    clusters = cluster_roots(z, cluster_rtol)
    for center, mult, idx in clusters:
        if mult == 1:
            i = idx[0]
            zi = z[i]
            for _ in range(3):
                pv = np.polyval(desc, zi)
                dv = np.polyval(ddesc, zi)
                if dv == 0:
                    break
                cand = zi - pv / dv
                if abs(np.polyval(desc, cand)) < abs(pv):
                    zi = cand
                else:
                    break
            z[i] = zi
        else:
            z[idx] = _polish_cluster(desc, center, mult, cluster_rtol)
    if nzero:
        z = np.concatenate([np.zeros(nzero, dtype=complex), z])
    return z


def dft_interpolate(values, radius: float = 1.0) -> np.ndarray:
    """Coefficients of the degree < m polynomial through samples on a circle.

    ``values[j]`` is the polynomial evaluated at ``radius * exp(2*pi*i*j/m)``.
    The full length-``m`` coefficient vector is returned (ascending degree).
    """
    v = np.asarray(values, dtype=complex).ravel()
    m = v.size
    if m == 0:
        raise ValueError("no samples")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if radius > 4 or radius < 0.25:
        warnings.warn(
            f"interpolation radius {radius:g} is far from 1; coefficients may be "
            "ill-conditioned",
            RuntimeWarning,
        )
    coeffs = np.fft.fft(v) / m
    return coeffs / radius ** np.arange(m)
