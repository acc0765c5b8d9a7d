"""Limiting zero densities, logarithmic potentials and matrix Chebyshev measures."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .symbol import (
    MultipleRootError,
    PeriodicSymbol,
    SupportSet,
    SymbolPair,
    gamma0,
    log_derivatives,
    root_derivative,
    solve_roots,
)

DEFAULT_NODES = 200


class OffSupportError(ValueError):
    pass


class ChebyshevSingularError(ArithmeticError):
    """``V(x)`` or the continued-fraction bracket is singular (candidate atom)."""


# ---------------------------------------------------------------------------
# zero distribution
# ---------------------------------------------------------------------------

def mu0_density(sym: PeriodicSymbol, x: float) -> float:
    """``(1 / 2 pi p r) sum_{|z_k| = 1} |z_k'(x) / z_k(x)|``; zero off the support."""
    rs = solve_roots(sym, complex(x), vectors=False)
    unit = np.flatnonzero(rs.unit_mask())
    if unit.size == 0:
        return 0.0
    ld = log_derivatives(sym, rs, unit)
    return float(np.sum(np.abs(ld)) / (2 * math.pi * sym.size))


def _boundary_sum(sym: PeriodicSymbol, x: complex) -> complex:
    rs = solve_roots(sym, x, vectors=False)
    return complex(np.sum(log_derivatives(sym, rs, range(sym.r))))


def mu0_density_boundary(sym: PeriodicSymbol, x: float, epsilon: float = 1e-5) -> float:
    """Density from the jump of ``sum_{j <= r} z_j'/z_j`` across the real axis.

    The sums at ``x + i eps`` and ``x - i eps`` run over the ``r`` roots inside
    the unit circle, so no root-by-root matching across the slit is required.
    Values at ``eps, eps/2, eps/4`` are Richardson-extrapolated to ``eps -> 0``.
    """
    if not 1e-8 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-8, 1e-4]")
    eps = np.array([epsilon, epsilon / 2, epsilon / 4])
    vals = np.array([
        (_boundary_sum(sym, x + 1j * e) - _boundary_sum(sym, x - 1j * e))
        / (2j * math.pi * sym.size)
        for e in eps
    ])
    return float(max(extrapolate_to_zero(eps, vals).real, 0.0))


def extrapolate_to_zero(h, values):
    """Polynomial (Neville) extrapolation of ``values(h)`` to ``h = 0``; arrays allowed."""
    h = np.asarray(h, dtype=float)
    T = [np.asarray(v) for v in values]
    n = len(T)
    for m in range(1, n):
        T = [(h[i] * T[i + 1] - h[i + m] * T[i]) / (h[i] - h[i + m]) for i in range(n - m)]
    return T[0]


def on_support(sym: PeriodicSymbol, x) -> bool:
    x = complex(x)
    if abs(x.imag) > 0:
        return False
    return bool(solve_roots(sym, x, vectors=False).unit_mask().any())


def log_potential(sym: PeriodicSymbol, x) -> float:
    """``int log|x - t|^{-1} d mu_0(t)`` for ``x`` off the support."""
    rs = solve_roots(sym, complex(x), vectors=False)
    if rs.unit_mask().any():
        raise OffSupportError(f"x={x} lies on Gamma_0; the potential formula needs x off the support")
    pr = sym.size
    small = np.sum(np.log(np.abs(rs.roots[: sym.r])))
    return float(small / pr - math.log(abs(sym.det_A_product())) / pr)


# ---------------------------------------------------------------------------
# quadrature on the support
# ---------------------------------------------------------------------------

def piece_nodes(a: float, b: float, count: int):
    """Midpoint nodes in ``phi`` for ``x = a + (b - a)(1 - cos phi) / 2``.

    The substitution absorbs inverse square-root behaviour at both ends.
    """
    phi = (np.arange(count) + 0.5) * math.pi / count
    xs = a + (b - a) * (1 - np.cos(phi)) / 2
    w = (b - a) / 2 * np.sin(phi) * math.pi / count
    return xs, w


@dataclass
class DensityGrid:
    """Density samples on the support with quadrature weights and a CDF."""

    xs: np.ndarray
    values: np.ndarray
    support: SupportSet
    weights: np.ndarray
    pieces: list = field(default_factory=list)  # (a, b, start, stop) into xs

    def mass(self) -> float:
        return float(np.dot(self.weights, self.values))

    def cdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        total = 0.0
        for a, b, lo, hi in self.pieces:
            contrib = self.weights[lo:hi] * self.values[lo:hi]
            cum = np.concatenate([[0.0], np.cumsum(contrib)])
            n = hi - lo
            inside = (x > a) & (x < b)
            phi = np.arccos(np.clip(1 - 2 * (x[inside] - a) / (b - a), -1, 1))
            out[inside] = total + np.interp(phi, np.arange(n + 1) * math.pi / n, cum)
            total += cum[-1]
            out[x >= b] = total
        return out

    def evaluate(self, x) -> np.ndarray:
        """Piecewise-linear interpolation of the samples; zero off the support."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for a, b, lo, hi in self.pieces:
            inside = (x >= a) & (x <= b)
            out[inside] = np.interp(x[inside], self.xs[lo:hi], self.values[lo:hi])
        return out


def density_grid(density: Callable[[float], float], support: SupportSet,
                 nodes_per_piece: int = DEFAULT_NODES) -> DensityGrid:
    """Sample ``density`` on every smooth piece of ``support``."""
    if nodes_per_piece < 2:
        raise ValueError("need at least two nodes per piece")
    xs, ws, pieces = [], [], []
    start = 0
    for a, b in support.pieces():
        px, pw = piece_nodes(a, b, nodes_per_piece)
        xs.append(px)
        ws.append(pw)
        pieces.append((a, b, start, start + px.size))
        start += px.size
    xs = np.concatenate(xs) if xs else np.zeros(0)
    ws = np.concatenate(ws) if ws else np.zeros(0)
    values = np.array([max(density(x), 0.0) for x in xs])
    return DensityGrid(xs, values, support, ws, pieces)


def mu0_grid(sym: PeriodicSymbol, nodes_per_piece: int = DEFAULT_NODES,
             support: SupportSet | None = None) -> DensityGrid:
    support = support or gamma0(sym)

    def safe(x):
        try:
            return mu0_density(sym, x)
        except MultipleRootError:
            return 0.0

    return density_grid(safe, support, nodes_per_piece)


# ---------------------------------------------------------------------------
# matrix Chebyshev measures
# ---------------------------------------------------------------------------

def _small_system(sym: SymbolPair, x):
    rs = solve_roots(sym, complex(x))
    if rs.degenerate_flag or np.any(rs.mult[: sym.r] > 1):
        raise ChebyshevSingularError(f"x={x}: repeated small roots, V(x) is not defined")
    V = rs.vectors[: sym.r].T
    D = rs.roots[: sym.r]
    return V, D


def _require_plain(sym):
    if sym.p != 1:
        raise ValueError("Chebyshev measures are defined for period-1 symbols")


def chebyshev_stieltjes(sym: SymbolPair, x, both_forms: bool = False):
    """Stieltjes transforms ``(F_W, F_X)`` at ``x`` off the support.

    ``F_W = V D V^{-1} A^{-1}`` and ``F_X = V [A V D^{-1} - A^* V D]^{-1}``;
    with ``both_forms`` the continued-fraction value
    ``[x - B - 2 A^* F_W A]^{-1}`` is returned as a third item.

    ``F_W`` is the leading ``r x r`` block of the resolvent of the constant
    block Jacobi matrix carrying ``A^*`` above the diagonal; for Hermitian
    ``A`` that is the Jacobi matrix of the recurrence itself.
    """
    _require_plain(sym)
    A, B = sym.A, sym.B
    V, D = _small_system(sym, x)
    if np.linalg.cond(V) > 1e12:
        raise ChebyshevSingularError(f"V(x) is singular at x={x}")
    Vinv = np.linalg.inv(V)
    FW = V @ np.diag(D) @ Vinv @ np.linalg.inv(A)
    K = A @ V @ np.diag(1 / D) - A.conj().T @ V @ np.diag(D)
    if np.linalg.cond(K) > 1e12:
        raise ChebyshevSingularError(f"F_X has a pole at x={x} (candidate mass point of X)")
    FX = V @ np.linalg.inv(K)
    if not both_forms:
        return FW, FX
    r = sym.r
    FX_cf = np.linalg.inv(complex(x) * np.eye(r) - B - 2 * A.conj().T @ FW @ A)
    return FW, FX, FX_cf


def _hermitian_w_system(sym: SymbolPair, x: float):
    if not sym.is_hermitian_A():
        raise ValueError("this operation requires a Hermitian A")
    A, B = sym.A, sym.B
    Ainv = np.linalg.inv(A)
    w, V = np.linalg.eig(float(x) * Ainv - Ainv @ B)
    Vinv = np.linalg.inv(V)
    dw = np.diag(Vinv @ Ainv @ V)
    return w, dw, V, Vinv, Ainv


def _active(w):
    return (np.abs(w.imag) <= 1e-10 * (1 + np.abs(w))) & (np.abs(w.real) < 2)


def chebyshev_densities(sym: SymbolPair, x: float):
    """Absolutely continuous densities ``(dW/dx, dX/dx)`` for Hermitian ``A``."""
    _require_plain(sym)
    w, dw, V, Vinv, Ainv = _hermitian_w_system(sym, x)
    act = _active(w)
    wr = np.where(act, w.real, 0.0)
    root = np.sqrt(np.where(act, 4 - wr**2, 1.0))
    sgn = np.sign(dw.real)
    lam_x = np.where(act, sgn / (math.pi * root), 0.0)
    lam_w = np.where(act, sgn * root / (2 * math.pi), 0.0)
    dX = V @ np.diag(lam_x) @ Vinv @ Ainv
    dW = V @ np.diag(lam_w) @ Vinv @ Ainv
    return _hermitize(dW), _hermitize(dX)


def _hermitize(M):
    return 0.5 * (M + M.conj().T)


def stieltjes_inversion_check(sym: SymbolPair, x: float, epsilons=(1e-3, 1e-4, 1e-5)) -> float:
    """Max entrywise gap between extrapolated ``(F_W(x - i e) - F_W(x + i e)) / 2 pi i`` and ``dW/dx``."""
    eps = np.asarray(sorted(epsilons, reverse=True), dtype=float)
    vals = []
    for e in eps:
        lo = chebyshev_stieltjes(sym, x - 1j * e)[0]
        hi = chebyshev_stieltjes(sym, x + 1j * e)[0]
        vals.append((lo - hi) / (2j * math.pi))
    limit = extrapolate_to_zero(eps, vals)
    dW, _ = chebyshev_densities(sym, x)
    return float(np.max(np.abs(limit - dW)))


@dataclass
class DLSReport:
    density: float
    w: np.ndarray
    w_prime: np.ndarray
    derivative_gap: float | None


def dls_density(sym: SymbolPair, x: float, check_derivatives: bool = True) -> DLSReport:
    """``(1/r) Tr(V Lambda_X V^{-1} A^{-1})``.

    For positive definite ``A`` the slopes ``w_k' = (U^* A^{-1} U)_kk`` from the
    unitary eigendecomposition of ``x A^{-1} - A^{-1/2} B A^{-1/2}`` are also
    compared with ``z'(1 - z^{-2})`` from implicit differentiation.
    """
    _require_plain(sym)
    _, dX = chebyshev_densities(sym, x)
    value = float(np.trace(dX).real / sym.r)
    w, dw, *_ = _hermitian_w_system(sym, x)
    gap = None
    A = sym.A
    evals, evecs = np.linalg.eigh(A)
    if check_derivatives and evals.min() > 0:
        A_mhalf = evecs @ np.diag(evals**-0.5) @ evecs.conj().T
        Ainv = np.linalg.inv(A)
        wu, U = np.linalg.eigh(float(x) * Ainv - A_mhalf @ sym.B @ A_mhalf)
        slopes = np.diag(U.conj().T @ Ainv @ U).real
        if np.any(slopes <= 0):
            raise ArithmeticError("w_k' must be positive for positive definite A")
        rs = solve_roots(sym, x, vectors=False)
        gap = 0.0
        for k in range(sym.r):
            if abs(wu[k]) >= 2 or np.any(rs.mult > 1):
                continue
            wz = rs.roots + 1 / rs.roots
            idx = int(np.argmin(np.abs(wz - wu[k])))
            z = rs.roots[idx]
            dz = root_derivative(sym, x, idx, roots=rs)
            implicit = (dz * (1 - z**-2)).real
            gap = max(gap, abs(implicit - slopes[k]) / max(1.0, abs(slopes[k])))
        dw = slopes.astype(complex)
        w = wu.astype(complex)
    return DLSReport(value, w, dw, gap)


@dataclass
class ChebyshevMeasures:
    symbol: SymbolPair
    W_density: Callable
    X_density: Callable
    mass_points: list  # (x, weight matrix) for X
    W_mass_points: list = field(default_factory=list)
    support: SupportSet | None = None


def _residue(F: Callable, x0: float, radius: float = 1e-4, nodes: int = 64):
    t = 2 * math.pi * (np.arange(nodes) + 0.5) / nodes
    acc = 0
    for tt in t:
        dz = radius * np.exp(1j * tt)
        acc = acc + F(x0 + dz) * dz
    return acc / nodes


def atoms(sym: SymbolPair, which: str = "X", grid_points: int = 2000,
          support: SupportSet | None = None) -> list:
    """Mass points of ``X`` (or ``W``) on the real line outside the support.

    Poles are located where the relevant matrix loses rank along a grid,
    refined by bounded minimisation, and weighted by circle-quadrature residues.
    """
    _require_plain(sym)
    support = support or gamma0(sym)
    A, B = sym.A, sym.B
    bound = np.linalg.norm(B, 2) + 2 * math.sqrt(2) * np.linalg.norm(A, 2) + 1.0
    tol = 1e-6 * (1 + bound)

    def singularity(x):
        try:
            V, D = _small_system(sym, x)
        except ChebyshevSingularError:
            return 0.0
        M = V if which == "W" else A @ V @ np.diag(1 / D) - A.conj().T @ V @ np.diag(D)
        s = np.linalg.svd(M, compute_uv=False)
        return s[-1] / s[0]

    xs = np.linspace(-bound, bound, grid_points)
    xs = np.array([x for x in xs if not support.contains(x, tol)])
    if xs.size < 3:
        return []
    vals = np.array([singularity(x) for x in xs])
    h = xs[1] - xs[0] if xs.size > 1 else 1.0
    found = []
    for i in range(1, xs.size - 1):
        if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1] and vals[i] < 0.2:
            res = minimize_scalar(singularity, bounds=(xs[i] - h, xs[i] + h), method="bounded",
                                  options={"xatol": 1e-13})
            if res.fun < 1e-8 and not support.contains(res.x, tol):
                found.append(float(res.x))
    out = []
    for x0 in sorted(set(round(v, 10) for v in found)):
        idx = 0 if which == "W" else 1
        weight = _residue(lambda z: chebyshev_stieltjes(sym, z)[idx], x0)
        out.append((x0, _hermitize(weight)))
    return out


def chebyshev_measures(sym: SymbolPair, find_atoms: bool = True) -> ChebyshevMeasures:
    support = gamma0(sym)
    return ChebyshevMeasures(
        symbol=sym,
        W_density=lambda x: chebyshev_densities(sym, x)[0],
        X_density=lambda x: chebyshev_densities(sym, x)[1],
        mass_points=atoms(sym, "X", support=support) if find_atoms else [],
        W_mass_points=atoms(sym, "W", support=support) if find_atoms else [],
        support=support,
    )


def _continuous_mass(measure: ChebyshevMeasures, nodes_per_piece: int) -> dict:
    r = measure.symbol.r
    out = {"W": np.zeros((r, r), complex), "X": np.zeros((r, r), complex)}
    for a, b in measure.support.pieces():
        xs, ws = piece_nodes(a, b, nodes_per_piece)
        for x, w in zip(xs, ws):
            try:
                dW, dX = chebyshev_densities(measure.symbol, x)
            except (MultipleRootError, np.linalg.LinAlgError):
                continue
            out["W"] += w * dW
            out["X"] += w * dX
    return out


def measure_mass(measure, nodes_per_piece: int = DEFAULT_NODES):
    """Total mass: a scalar for a :class:`DensityGrid`, ``{"W", "X"}`` matrices otherwise."""
    if isinstance(measure, DensityGrid):
        return measure.mass()
    if not isinstance(measure, ChebyshevMeasures):
        raise TypeError("expected DensityGrid or ChebyshevMeasures")
    out = _continuous_mass(measure, nodes_per_piece)
    coarse = _continuous_mass(measure, max(nodes_per_piece // 2, 2))
    drift = max(np.abs(out[k] - coarse[k]).max() for k in out)
    if drift > 1e-3:
        warnings.warn(f"mass quadrature changed by {drift:.2e} on halving the nodes; "
                      "an atom may have been missed", RuntimeWarning)
    for x0, m in measure.mass_points:
        out["X"] += m
    for x0, m in measure.W_mass_points:
        out["W"] += m
    return out
