"""The algebraic symbol ``f(z, x) = det F(z, x)`` and its root structure.

For limit data ``(A, B)`` the matrix is ``F(z, x) = z A^* + B + z^{-1} A - x I``.
With ``p`` residue classes ``(A^(j), B^(j))`` it is the ``pr x pr`` block
tridiagonal matrix with ``z A^(0)*`` and ``z^{-1} A^(0)`` in the two corners.
Both cases share one class; :class:`SymbolPair` is the ``p = 1`` case.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .core_linalg import (
    ABS_FLOOR,
    EPS,
    as_matrix,
    check_hermitian,
    cluster_roots,
    dft_interpolate,
    normalize_phase,
    nullspace_vector,
    poly_roots,
)

UNIT_TOL = 1e-9
CLUSTER_RTOL = 1e-7


class InvalidSymbolError(ValueError):
    pass


class MultipleRootError(ValueError):
    """A derivative or density was requested at a repeated root (branch point)."""


class PeriodicSymbol:
    """Limit coefficients with period ``p``: blocks ``(A^(j), B^(j))``."""

    def __init__(self, blocks: Sequence[tuple]):
        if len(blocks) < 1:
            raise InvalidSymbolError("a symbol needs at least one (A, B) block")
        As, Bs = [], []
        r = None
        for j, (A, B) in enumerate(blocks):
            A = as_matrix(A).copy()
            B = as_matrix(B).copy()
            if r is None:
                r = A.shape[0]
            if A.shape != (r, r) or B.shape != (r, r):
                raise InvalidSymbolError(
                    f"block {j}: expected {r}x{r} matrices, got A{A.shape}, B{B.shape}"
                )
            nrm = np.linalg.norm(A, 2)
            detA = np.linalg.det(A)
            if not abs(detA) > 1e-12 * nrm**r:
                raise InvalidSymbolError(f"block {j}: A is singular, |det A| = {abs(detA):.3e}")
            try:
                check_hermitian(B, name=f"block {j}: B")
            except ValueError as exc:
                raise InvalidSymbolError(str(exc)) from None
            A.setflags(write=False)
            B.setflags(write=False)
            As.append(A)
            Bs.append(B)
        self.A_blocks = tuple(As)
        self.B_blocks = tuple(Bs)

    @property
    def r(self) -> int:
        return self.A_blocks[0].shape[0]

    @property
    def p(self) -> int:
        return len(self.A_blocks)

    @property
    def size(self) -> int:
        return self.p * self.r

    def __repr__(self):
        return f"{type(self).__name__}(r={self.r}, p={self.p})"

    # -- matrices -----------------------------------------------------------

    def matrix(self, z, x=0.0) -> np.ndarray:
        """``F(z, x)``; ``z`` may be an array, giving a stack of matrices."""
        z = np.asarray(z, dtype=complex)
        r, p = self.r, self.p
        F = np.zeros(z.shape + (p * r, p * r), dtype=complex)
        zi = 1.0 / z
        zz = z[..., None, None]
        zzi = zi[..., None, None]
        for j in range(p):
            F[..., j * r:(j + 1) * r, j * r:(j + 1) * r] += self.B_blocks[j]
            if j >= 1:
                Aj = self.A_blocks[j]
                F[..., (j - 1) * r:j * r, j * r:(j + 1) * r] += Aj
                F[..., j * r:(j + 1) * r, (j - 1) * r:j * r] += Aj.conj().T
        A0 = self.A_blocks[0]
        last = (p - 1) * r
        F[..., 0:r, last:last + r] += zz * A0.conj().T
        F[..., last:last + r, 0:r] += zzi * A0
        F -= np.asarray(x, dtype=complex)[..., None, None] * np.eye(p * r)
        return F

    def dmatrix_dz(self, z) -> np.ndarray:
        z = complex(z)
        r, p = self.r, self.p
        D = np.zeros((p * r, p * r), dtype=complex)
        A0 = self.A_blocks[0]
        last = (p - 1) * r
        D[0:r, last:last + r] += A0.conj().T
        D[last:last + r, 0:r] += -A0 / z**2
        return D

    def f(self, z, x) -> np.ndarray:
        return np.linalg.det(self.matrix(z, x))

    def scale(self, z=1.0, x=0.0) -> float:
        """Magnitude of ``F(z, x)`` used to make tolerances relative."""
        az = abs(complex(z))
        a = max(np.linalg.norm(A, 2) for A in self.A_blocks)
        b = max(np.linalg.norm(B, 2) for B in self.B_blocks)
        return a * (az + 1.0 / az) + b + abs(complex(x)) + ABS_FLOOR

    def unit_circle_matrices(self, thetas) -> np.ndarray:
        """Hermitian ``F(e^{i theta}, 0)`` for each angle."""
        H = self.matrix(np.exp(1j * np.asarray(thetas, dtype=float)), 0.0)
        return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))

    # -- scalar data --------------------------------------------------------

    def outer_coeffs(self) -> tuple[complex, complex]:
        """Exact ``(f_{-r}, f_r)``."""
        r, p = self.r, self.p
        sign = (-1) ** (((p - 1) * r * r) % 2)
        prod = complex(np.prod([np.linalg.det(A) for A in self.A_blocks]))
        return sign * prod, sign * np.conj(prod)

    def det_A_product(self) -> complex:
        return complex(np.prod([np.linalg.det(A) for A in self.A_blocks]))

    def is_hermitian_A(self) -> bool:
        return all(np.allclose(A, A.conj().T, atol=1e-12 * (1 + np.abs(A).max()))
                   for A in self.A_blocks)

    def to_dict(self) -> dict:
        def enc(M):
            return [[[float(v.real), float(v.imag)] for v in row] for row in M]

        if self.p == 1:
            return {"r": self.r, "A": enc(self.A_blocks[0]), "B": enc(self.B_blocks[0])}
        return {
            "r": self.r,
            "period": self.p,
            "blocks": [{"A": enc(A), "B": enc(B)} for A, B in zip(self.A_blocks, self.B_blocks)],
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class SymbolPair(PeriodicSymbol):
    """Limit pair ``(A, B)`` of a matrix Nevai-class recurrence."""

    def __init__(self, A, B):
        super().__init__([(A, B)])

    @property
    def A(self) -> np.ndarray:
        return self.A_blocks[0]

    @property
    def B(self) -> np.ndarray:
        return self.B_blocks[0]


def make_symbol(blocks) -> PeriodicSymbol:
    if len(blocks) == 1:
        return SymbolPair(*blocks[0])
    return PeriodicSymbol(blocks)


# ---------------------------------------------------------------------------
# roots
# ---------------------------------------------------------------------------

@dataclass
class RootSystem:
    """The ``2r`` roots of ``f(., x)`` ordered by modulus, with null vectors."""

    x: complex
    roots: np.ndarray
    mult: np.ndarray
    vectors: np.ndarray | None = None
    degenerate_flag: bool = False
    clusters: list = field(default_factory=list)

    @property
    def r(self) -> int:
        return self.roots.size // 2

    def small(self) -> np.ndarray:
        return self.roots[: self.r]

    def unit_mask(self, tol: float = UNIT_TOL) -> np.ndarray:
        mod = np.abs(self.roots)
        mask = np.abs(mod - 1.0) <= tol * (1.0 + mod)
        # a multiple root is only located to about sqrt(eps); judge it by its centre
        for centre, mult, idx in self.clusters:
            if mult > 1:
                c = abs(centre)
                mask[list(idx)] = abs(c - 1.0) <= max(tol, CLUSTER_RTOL) * (1.0 + c)
        return mask

    def block(self, k: int, j: int) -> np.ndarray:
        """Block ``j`` (length ``r``) of the null vector for root ``k``."""
        r = self.r
        return self.vectors[k][j * r:(j + 1) * r]


def laurent_coeffs(sym: PeriodicSymbol, x) -> np.ndarray:
    """Coefficients ``f_{-r}, ..., f_r`` of ``f(z, x)`` as a Laurent polynomial in ``z``.

    Inner coefficients come from the DFT of ``f`` sampled at the ``2r + 1``
    roots of unity; the outermost two are the exact determinant products.
    """
    r = sym.r
    m = 2 * r + 1
    w = np.exp(2j * np.pi * np.arange(m) / m)
    vals = sym.f(w, x)
    c = dft_interpolate(vals)
    out = np.concatenate([c[m - r:], c[: r + 1]])  # k = -r..r
    out[0], out[-1] = sym.outer_coeffs()
    return out


def _order(roots: np.ndarray) -> np.ndarray:
    mod = np.abs(roots)
    arg = np.angle(roots)
    idx = list(np.argsort(mod, kind="stable"))
    out = []
    i = 0
    while i < len(idx):
        j = i + 1
        while j < len(idx) and mod[idx[j]] - mod[idx[i]] <= UNIT_TOL * (1 + mod[idx[i]]):
            j += 1
        group = sorted(idx[i:j], key=lambda k: arg[k])
        out.extend(group)
        i = j
    return np.asarray(out, dtype=int)


def _polish(sym: PeriodicSymbol, z: complex, x, neighbour_gap: float) -> complex:
    for _ in range(4):
        F = sym.matrix(z, x)
        try:
            t = np.trace(np.linalg.solve(F, sym.dmatrix_dz(z)))
        except np.linalg.LinAlgError:
            return z
        if t == 0 or not np.isfinite(t):
            return z
        step = 1.0 / t
        if abs(step) > 0.1 * neighbour_gap:
            return z
        z = z - step
        if abs(step) <= 4 * EPS * abs(z):
            break
    return z


def solve_roots(sym: PeriodicSymbol, x, vectors: bool = True) -> RootSystem:
    """Roots ``z_1..z_2r`` of ``f(z, x) = 0`` ordered by nondecreasing modulus.

    Ties in modulus are broken by ascending argument in ``(-pi, pi]``.  Simple
    roots are Newton-polished on the determinant itself.  With ``vectors`` the
    unit null vectors of ``F(z_k, x)`` are attached; ``degenerate_flag`` marks a
    repeated root whose null space is smaller than its multiplicity.
    """
    x = complex(x)
    c = laurent_coeffs(sym, x)
    z = poly_roots(c, cluster_rtol=CLUSTER_RTOL)
    for center, mult, idx in cluster_roots(z, CLUSTER_RTOL):
        if mult == 1:
            i = idx[0]
            others = np.delete(z, i)
            gap = np.min(np.abs(others - z[i])) if others.size else np.inf
            z[i] = _polish(sym, z[i], x, gap)
    z = z[_order(z)]
    clusters = cluster_roots(z, CLUSTER_RTOL)
    mult = np.ones(z.size, dtype=int)
    for _, m, idx in clusters:
        mult[idx] = m

    vecs = None
    degenerate = False
    if vectors:
        vecs = np.zeros((z.size, sym.size), dtype=complex)
        for center, m, idx in clusters:
            F = sym.matrix(center, x)
            if m == 1:
                _, _, Vh = np.linalg.svd(F)
                vecs[idx[0]] = normalize_phase(Vh[-1].conj())
                continue
            null = nullspace_vector(F, 1e-6, scale=sym.scale(center, x))
            if len(null) < m:
                degenerate = True
                _, _, Vh = np.linalg.svd(F)
                n = Vh.shape[0]
                null = [normalize_phase(Vh[-1 - min(t, n - 1)].conj()) for t in range(m)]
            for t, i in enumerate(idx):
                vecs[i] = null[t]
    else:
        degenerate = any(m > 1 and _null_dim(sym, center, x) < m for center, m, _ in clusters)
    return RootSystem(x=x, roots=z, mult=mult, vectors=vecs,
                      degenerate_flag=degenerate, clusters=clusters)


def _null_dim(sym, z, x, tol=1e-6) -> int:
    s = np.linalg.svd(sym.matrix(z, x), compute_uv=False)
    return int(np.sum(s <= tol * sym.scale(z, x)))


class Multiplicities(NamedTuple):
    d: int
    m1: int
    m2: int

    @property
    def equal(self) -> bool:
        return self.d == self.m1 == self.m2


def multiplicity_check(sym: PeriodicSymbol, z, x, tol: float = 1e-8) -> Multiplicities:
    """Geometric multiplicity ``d`` and algebraic multiplicities ``m1`` (in z), ``m2`` (in x)."""
    z = complex(z)
    x = complex(x)
    scale = sym.scale(z, x)
    s = np.linalg.svd(sym.matrix(z, x), compute_uv=False)
    if s[-1] > tol * scale:
        raise ValueError(f"(z, x) = ({z}, {x}) is not on the variety: sigma_min = {s[-1]:.3e}")
    d = int(np.sum(s <= tol * scale))
    zr = poly_roots(laurent_coeffs(sym, x), cluster_rtol=CLUSTER_RTOL)
    m1 = int(np.sum(np.abs(zr - z) <= 1e-6 * max(1.0, abs(z))))
    lam = np.linalg.eigvals(sym.matrix(z, 0.0))
    m2 = int(np.sum(np.abs(lam - x) <= 1e-6 * max(1.0, abs(x))))
    return Multiplicities(d, m1, m2)


def _derivative_at(sym: PeriodicSymbol, z: complex, x: complex) -> complex:
    # d/dX det F = tr(adj F . dF/dX); at a simple root adj F is a multiple of
    # v u^*, so z' = -(u^* F_x v) / (u^* F_z v) with F_x = -I.
    U, _, Vh = np.linalg.svd(sym.matrix(z, x))
    u = U[:, -1]
    v = Vh[-1].conj()
    num = np.vdot(u, v)
    den = np.vdot(u, sym.dmatrix_dz(z) @ v)
    return complex(num / den)


def root_derivative(sym: PeriodicSymbol, x, k: int, roots: RootSystem | None = None) -> complex:
    """``z_k'(x)`` by implicit differentiation of ``f(z_k(x), x) = 0``."""
    rs = roots if roots is not None else solve_roots(sym, x, vectors=False)
    if rs.mult[k] != 1:
        raise MultipleRootError(
            f"root {k} at x={x} has multiplicity {rs.mult[k]}; its derivative is not single-valued"
        )
    return _derivative_at(sym, complex(rs.roots[k]), complex(x))


def _cluster_derivatives(sym: PeriodicSymbol, z: complex, x: complex, m: int) -> np.ndarray:
    # Semisimple cluster: with left/right null bases U, V the branch
    # derivatives are the eigenvalues of the pencil (U^* F_z V) c = z' (U^* V) c.
    U, s, Vh = np.linalg.svd(sym.matrix(z, x))
    d = int(np.sum(s <= 1e-6 * sym.scale(z, x)))
    if d < m:
        raise MultipleRootError(
            f"x={x} is a branch point: root {z} has multiplicity {m} but only {d} null vectors")
    Ul = U[:, -m:]
    Vr = Vh[-m:].conj().T
    lhs = Ul.conj().T @ Vr
    rhs = Ul.conj().T @ sym.dmatrix_dz(z) @ Vr
    return np.linalg.eigvals(np.linalg.solve(rhs, lhs))


def log_derivatives(sym: PeriodicSymbol, rs: RootSystem, ks) -> np.ndarray:
    """``z_k'/z_k`` for the listed roots.

    Repeated roots are accepted only when semisimple (crossing analytic
    branches); a null-space deficit marks a branch point and is rejected.
    """
    out = {}
    for center, m, idx in rs.clusters:
        wanted = [k for k in idx if k in set(ks)]
        if not wanted:
            continue
        if m == 1:
            out[idx[0]] = _derivative_at(sym, complex(rs.roots[idx[0]]), rs.x) / rs.roots[idx[0]]
            continue
        dz = _cluster_derivatives(sym, complex(center), rs.x, m)
        for k, d in zip(idx, dz):
            out[k] = d / rs.roots[k]
    return np.asarray([out[k] for k in ks], dtype=complex)


# ---------------------------------------------------------------------------
# support set
# ---------------------------------------------------------------------------

@dataclass
class SupportSet:
    """Finite union of disjoint closed real intervals, ascending.

    ``breakpoints`` holds every critical value of the eigenvalue branches on
    the unit circle; between consecutive breakpoints the densities are smooth.
    """

    intervals: list
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.intervals = [(float(a), float(b)) for a, b in self.intervals]
        for (a, b), (c, _) in zip(self.intervals, self.intervals[1:]):
            if not b < c:
                raise ValueError("intervals must be disjoint and ascending")
        if any(a > b for a, b in self.intervals):
            raise ValueError("interval with a > b")
        bp = set(np.asarray(self.breakpoints, dtype=float).tolist())
        for a, b in self.intervals:
            bp.update((a, b))
        self.breakpoints = np.array(sorted(bp))

    def __len__(self):
        return len(self.intervals)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return any(a - tol <= x <= b + tol for a, b in self.intervals)

    @property
    def hull(self) -> tuple[float, float]:
        return self.intervals[0][0], self.intervals[-1][1]

    def pieces(self) -> list[tuple[float, float]]:
        """Subintervals between consecutive breakpoints inside the support."""
        out = []
        for a, b in self.intervals:
            inner = self.breakpoints[(self.breakpoints > a) & (self.breakpoints < b)]
            pts = [a, *inner.tolist(), b]
            out.extend((u, v) for u, v in zip(pts[:-1], pts[1:]) if v > u)
        return out

    def scaled(self, factor: float) -> "SupportSet":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return SupportSet([(a * factor, b * factor) for a, b in self.intervals],
                          self.breakpoints * factor)


def _branch(sym: PeriodicSymbol, k: int):
    def fn(theta):
        return np.linalg.eigvalsh(sym.unit_circle_matrices([theta]))[0, k]
    return fn


def _extrema(sym: PeriodicSymbol, thetas: np.ndarray, lam: np.ndarray):
    """Refined (min, max, critical values) of every eigenvalue branch."""
    T, n = lam.shape
    step = thetas[1] - thetas[0]
    mins, maxs, crit = [], [], []
    for k in range(n):
        vals = lam[:, k]
        fn = _branch(sym, k)
        prev = np.roll(vals, 1)
        nxt = np.roll(vals, -1)
        is_max = (vals >= prev) & (vals >= nxt)
        is_min = (vals <= prev) & (vals <= nxt)
        found_max, found_min = [], []
        for j in np.flatnonzero(is_max | is_min):
            lo, hi = thetas[j] - step, thetas[j] + step
            if is_max[j]:
                res = minimize_scalar(lambda t: -fn(t), bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-12})
                found_max.append(max(vals[j], -res.fun))
            if is_min[j]:
                res = minimize_scalar(fn, bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-12})
                found_min.append(min(vals[j], res.fun))
        lo_k = min(found_min) if found_min else vals.min()
        hi_k = max(found_max) if found_max else vals.max()
        mins.append(lo_k)
        maxs.append(hi_k)
        crit.extend(found_min + found_max)
    return np.array(mins), np.array(maxs), np.array(crit)


def _dedupe(values, tol):
    out = []
    for v in np.sort(values):
        if not out or v - out[-1] > tol:
            out.append(float(v))
    return np.array(out)


def _gamma0_once(sym: PeriodicSymbol, theta_samples: int):
    thetas = 2 * np.pi * np.arange(theta_samples) / theta_samples
    lam = np.linalg.eigvalsh(sym.unit_circle_matrices(thetas))
    mins, maxs, crit = _extrema(sym, thetas, lam)
    tol = 1e-9 * sym.scale()
    order = np.argsort(mins)
    merged: list[list[float]] = []
    for k in order:
        a, b = mins[k], maxs[k]
        if merged and a <= merged[-1][1] + tol:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged, _dedupe(crit, tol)


def gamma0(sym: PeriodicSymbol, theta_samples: int = 256) -> SupportSet:
    """The support ``Gamma_0`` as the union of eigenvalue ranges on the unit circle.

    ``x`` lies in ``Gamma_0`` exactly when ``x`` is an eigenvalue of the Hermitian
    matrix ``F(e^{i theta}, 0)`` for some angle, so each sorted eigenvalue branch
    contributes the closed interval between its extreme values.  Extremes are
    refined by bounded Brent iterations; the sweep is doubled (up to 8192
    samples) until two consecutive resolutions agree.
    """
    if theta_samples < 64:
        raise ValueError("theta_samples must be at least 64")
    T = theta_samples
    merged, crit = _gamma0_once(sym, T)
    tol = 1e-9 * sym.scale()
    while True:
        if T * 2 > 8192:
            warnings.warn("Gamma_0 sweep did not stabilise before 8192 samples", RuntimeWarning)
            break
        merged2, crit2 = _gamma0_once(sym, 2 * T)
        same = (len(merged2) == len(merged) and crit2.size == crit.size
                and np.allclose(np.ravel(merged2), np.ravel(merged), atol=tol, rtol=0)
                and np.allclose(crit2, crit, atol=tol, rtol=0))
        merged, crit, T = merged2, crit2, 2 * T
        if same:
            break
    if len(merged) > sym.size:
        warnings.warn(f"Gamma_0 has {len(merged)} intervals, more than pr = {sym.size}",
                      RuntimeWarning)
    return SupportSet([tuple(m) for m in merged], crit)


@dataclass
class ProbeReport:
    x: complex
    clusters: list  # (center, multiplicity, null dimension, deficit)

    @property
    def total_deficit(self) -> int:
        return sum(c[3] for c in self.clusters)

    @property
    def in_S(self) -> bool:
        return self.total_deficit > 0


def exceptional_set_probe(sym: PeriodicSymbol, x, tol: float = 1e-6) -> ProbeReport:
    """Compare independent null vectors with algebraic multiplicity per root cluster."""
    rs = solve_roots(sym, x, vectors=False)
    out = []
    for center, m, _ in rs.clusters:
        d = 1 if m == 1 else min(m, _null_dim(sym, center, rs.x, tol))
        out.append((center, m, d, m - d))
    return ProbeReport(x=rs.x, clusters=out)
