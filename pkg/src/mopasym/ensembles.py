"""Slowly varying coefficients and the random band-matrix ensemble.

The band ensemble ``G_n^{(r)}`` has standard normal diagonal entries and
chi-distributed entries on the ``r`` sub/superdiagonals; its scaled spectrum
follows the average over ``u in (0, 1/r]`` of fixed-symbol zero densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .asymptotics import mu0_density, piece_nodes
from .recurrence import EmpiricalMeasure
from .symbol import MultipleRootError, SymbolPair, gamma0, solve_roots


class IntegrationError(ArithmeticError):
    def __init__(self, message, interval):
        super().__init__(message)
        self.interval = interval


# ---------------------------------------------------------------------------
# slowly varying profiles
# ---------------------------------------------------------------------------

@dataclass
class VaryingProfile:
    """Local limits ``s -> (A_s, B_s)`` and the finite-scale sampler ``(n, N) -> (A_{n,N}, B_{n,N})``."""

    r: int
    limit_map: Callable[[float], tuple]
    sampler: Callable[[int, int], tuple] | None = None
    label: dict = field(default_factory=dict)

    def symbol(self, s: float) -> SymbolPair:
        if s <= 0:
            raise ValueError("local limits are defined for s > 0")
        return SymbolPair(*self.limit_map(s))

    def sample(self, n: int, N: int):
        if self.sampler is not None:
            return self.sampler(n, N)
        return self.limit_map(n / N)

    def to_dict(self) -> dict:
        return dict(self.label)

    @classmethod
    def power(cls, A, B, exponent_A: float = 0.5, exponent_B: float = 0.0) -> "VaryingProfile":
        """``A_s = s^eA A``, ``B_s = s^eB B``, sampled as ``A_{n,N} = A_{n/N}``."""
        A = np.asarray(A, dtype=complex)
        B = np.asarray(B, dtype=complex)

        def limit(s):
            return (s ** exponent_A) * A, (s ** exponent_B) * B

        def enc(M):
            return [[[float(v.real), float(v.imag)] for v in row] for row in M]

        label = {"type": "power", "exponent_A": exponent_A, "exponent_B": exponent_B,
                 "A": enc(A), "B": enc(B)}
        return cls(A.shape[0], limit, None, label)


def _cos_gauss(f: Callable, a: float, b: float, nodes: int) -> float:
    """Gauss-Legendre in ``phi`` after ``u = a + (b - a)(1 - cos phi)/2``."""
    g, w = np.polynomial.legendre.leggauss(nodes)
    phi = (g + 1) * math.pi / 2
    u = a + (b - a) * (1 - np.cos(phi)) / 2
    jac = (b - a) / 2 * np.sin(phi) * math.pi / 2
    return float(sum(wi * ji * f(ui) for wi, ji, ui in zip(w, jac, u)))


def _adaptive(f: Callable, a: float, b: float, nodes: int = 24, rtol: float = 1e-9,
              max_nodes: int = 384, depth: int = 6) -> float:
    start = nodes
    coarse = _cos_gauss(f, a, b, nodes)
    while True:
        nodes *= 2
        fine = _cos_gauss(f, a, b, nodes)
        if abs(fine - coarse) <= rtol * max(1.0, abs(fine)):
            return fine
        if nodes >= max_nodes:
            break
        coarse = fine
    if depth > 0:
        # a singularity just outside [a, b] needs nodes clustered near it
        m = 0.5 * (a + b)
        try:
            return (_adaptive(f, a, m, start, rtol, max_nodes, depth - 1)
                    + _adaptive(f, m, b, start, rtol, max_nodes, depth - 1))
        except IntegrationError:
            pass
    raise IntegrationError(
        f"quadrature on [{a:.6g}, {b:.6g}] did not settle ({coarse!r} vs {fine!r})", (a, b))


def _unit_count(sym: SymbolPair, x: float) -> int:
    return int(solve_roots(sym, x, vectors=False).unit_mask().sum())


def _count_changes(count_at: Callable[[float], int], lo: float, hi: float,
                   samples: int = 128) -> list[float]:
    """Points in ``(lo, hi)`` where an integer-valued function changes, by bisection."""
    grid = lo + (hi - lo) * (np.arange(samples + 1) / samples)
    grid[0] = lo + (hi - lo) * 1e-9
    counts = [count_at(u) for u in grid]
    cuts = []
    for i in range(samples):
        if counts[i] != counts[i + 1]:
            a, b, ca = grid[i], grid[i + 1], counts[i]
            for _ in range(60):
                m = 0.5 * (a + b)
                if count_at(m) == ca:
                    a = m
                else:
                    b = m
                if b - a <= 4 * np.finfo(float).eps * max(1.0, abs(b)):
                    break
            cuts.append(0.5 * (a + b))
    return cuts


def _density_or_nudge(sym: SymbolPair, x: float) -> float:
    try:
        return mu0_density(sym, x)
    except MultipleRootError:
        h = 1e-9 * (1 + abs(x))
        return 0.5 * (mu0_density(sym, x - h) + mu0_density(sym, x + h))


def mu0s_density(profile: VaryingProfile, s: float, x: float) -> float:
    """``(1/s) int_0^s mu0_density(symbol(u), x) du``, split where ``x`` crosses a support edge."""
    if s <= 0:
        raise ValueError("s must be positive")
    x = float(x)
    cuts = _count_changes(lambda u: _unit_count(profile.symbol(u), x), 0.0, s)
    edges = [0.0, *cuts, s]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        if _unit_count(profile.symbol(mid), x) == 0:
            continue
        # the cut carries an O(eps) error and the integrand is O(1/sqrt) there, so
        # about sqrt(eps) is the attainable accuracy
        total += _adaptive(lambda u: _density_or_nudge(profile.symbol(u), x), a, b, rtol=1e-7)
    return max(total / s, 0.0)


def mu0s_potential(profile: VaryingProfile, s: float, x) -> float:
    """``(1/rs) int_0^s log|z_1 ... z_r(x, u)| du + C_s`` with ``C_s = -(1/rs) int_0^s log|det A_u| du``."""
    if s <= 0:
        raise ValueError("s must be positive")
    r = profile.r

    def integrand(u):
        sym = profile.symbol(u)
        rs = solve_roots(sym, complex(x), vectors=False)
        if rs.unit_mask().any():
            raise ValueError(f"x={x} lies on the support of the u={u:.6g} symbol")
        return (np.sum(np.log(np.abs(rs.roots[:r]))) - math.log(abs(np.linalg.det(sym.A)))) / r

    return _adaptive(integrand, 0.0, s) / s


# ---------------------------------------------------------------------------
# band ensemble
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandEnsembleSpec:
    r: int
    gammas: tuple
    n: int
    seed: int = 0

    def __post_init__(self):
        gam = tuple(float(g) for g in self.gammas)
        object.__setattr__(self, "gammas", gam)
        if self.r < 1:
            raise ValueError("half-bandwidth r must be positive")
        if len(gam) != self.r:
            raise ValueError(f"need exactly r={self.r} gammas, got {len(gam)}")
        if any(not g > 0 for g in gam):
            raise ValueError("every gamma must be positive")
        if self.n < self.r or self.n % self.r:
            raise ValueError(f"n={self.n} must be a positive multiple of r={self.r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def gamma(self, k: int) -> float:
        """``gamma_k`` with 1-based ``k``."""
        return self.gammas[k - 1]


def _gamma_patterns(spec: BandEnsembleSpec):
    r = spec.r
    GA = np.zeros((r, r))
    GB = np.zeros((r, r))
    for a in range(1, r + 1):
        for b in range(1, r + 1):
            if b <= a:
                GA[a - 1, b - 1] = math.sqrt(spec.gamma(r + b - a))
            if a != b:
                GB[a - 1, b - 1] = math.sqrt(spec.gamma(abs(a - b)))
    return GA, GB


def _band_blocks(spec: BandEnsembleSpec, i: int, n: int):
    r = spec.r
    A = np.zeros((r, r))
    B = np.zeros((r, r))
    for a in range(1, r + 1):
        for b in range(1, r + 1):
            if b <= a and i >= 1:
                A[a - 1, b - 1] = math.sqrt(((i - 1) * r + a) * spec.gamma(r + b - a))
            if a != b:
                B[a - 1, b - 1] = math.sqrt((i * r + min(a, b)) * spec.gamma(abs(a - b)))
    scale = 1 / math.sqrt(2 * n)
    return A * scale, B * scale


def band_coefficients(spec: BandEnsembleSpec, i: int):
    """Deterministic block coefficients ``(A_{i,n}, B_{i,n})`` for ``1 <= i <= n/r``."""
    if not 1 <= i <= spec.n // spec.r:
        raise IndexError(f"block index {i} outside 1..{spec.n // spec.r}")
    return _band_blocks(spec, i, spec.n)


def band_limit_profile(spec: BandEnsembleSpec, u: float) -> SymbolPair:
    """``(A(u), B(u)) = sqrt(u r / 2) * (gamma patterns)``."""
    if u <= 0:
        raise ValueError("u must be positive")
    GA, GB = _gamma_patterns(spec)
    c = math.sqrt(u * spec.r / 2)
    return SymbolPair(c * GA, c * GB)


def band_varying_profile(spec: BandEnsembleSpec) -> VaryingProfile:
    GA, GB = _gamma_patterns(spec)
    r = spec.r

    def limit(u):
        c = math.sqrt(u * r / 2)
        return c * GA, c * GB

    def sampler(i, N):
        return _band_blocks(spec, i, N)

    return VaryingProfile(r, limit, sampler,
                          {"type": "band", "r": r, "gammas": list(spec.gammas)})


@dataclass
class SymmetricBand:
    """Real symmetric band matrix in lower storage: ``bands[k, j] = M[j + k, j]``."""

    bands: np.ndarray

    @property
    def n(self) -> int:
        return self.bands.shape[1]

    @property
    def r(self) -> int:
        return self.bands.shape[0] - 1

    def to_dense(self) -> np.ndarray:
        n = self.n
        M = np.diag(self.bands[0])
        for k in range(1, self.r + 1):
            off = self.bands[k, : n - k]
            M += np.diag(off, -k) + np.diag(off, k)
        return M

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvals_banded(self.bands, lower=True)


def sample_band_matrix(spec: BandEnsembleSpec, rng: np.random.Generator | None = None) -> SymmetricBand:
    """Draw ``G_n^{(r)}``.

    Lower entry ``(i, i - k)`` (1-based) is ``chi_d / sqrt(2)`` with
    ``d = (n - i + 1) gamma_k``; the diagonal is standard normal.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n, r = spec.n, spec.r
    bands = np.zeros((r + 1, n))
    bands[0] = rng.standard_normal(n)
    for k in range(1, r + 1):
        # column j (0-based) holds row i = j + k + 1 (1-based)
        rows = np.arange(k + 1, n + 1)
        dof = (n - rows + 1) * spec.gamma(k)
        bands[k, : n - k] = np.sqrt(rng.chisquare(dof) / 2.0)
    return SymmetricBand(bands)


class FixedSymbolTable:
    """Spline tables of the zero density and CDF of one symbol, per smooth piece.

    On each piece ``[a, b]`` the smooth function ``h(phi) = f(y) sin(phi)`` with
    ``y = a + (b - a)(1 - cos phi)/2`` is splined; its antiderivative gives the CDF.
    """

    def __init__(self, sym: SymbolPair, nodes_per_piece: int = 400):
        self.support = gamma0(sym)
        self.pieces = []
        offset = 0.0
        for a, b in self.support.pieces():
            ys, _ = piece_nodes(a, b, nodes_per_piece)
            phi = (np.arange(nodes_per_piece) + 0.5) * math.pi / nodes_per_piece
            vals = np.array([_density_or_nudge(sym, y) for y in ys])
            h = vals * np.sin(phi)
            spline = CubicSpline(phi, h, bc_type="not-a-knot")
            anti = spline.antiderivative()
            base = anti(0.0)
            mass = (b - a) / 2 * (anti(math.pi) - base)
            self.pieces.append((a, b, spline, anti, base, offset))
            offset += mass
        self.total = offset

    def density(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for a, b, spline, *_ in self.pieces:
            m = (y > a) & (y < b)
            phi = np.arccos(np.clip(1 - 2 * (y[m] - a) / (b - a), -1, 1))
            out[m] = np.maximum(spline(phi), 0) / np.sin(phi)
        return out

    def cdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for a, b, _, anti, base, offset in self.pieces:
            m = (y > a) & (y < b)
            phi = np.arccos(np.clip(1 - 2 * (y[m] - a) / (b - a), -1, 1))
            out[m] = offset + (b - a) / 2 * (anti(phi) - base)
            out[y >= b] = offset + (b - a) / 2 * (anti(math.pi) - base)
        return out / self.total


def _t_pieces(x: float, breakpoints: np.ndarray, T: float) -> list[tuple[float, float]]:
    """Split ``(0, T]`` where ``x / t`` crosses a breakpoint."""
    cuts = [0.0, T]
    if x != 0:
        for b in breakpoints:
            if b != 0 and np.sign(b) == np.sign(x):
                t = x / b
                if 0 < t < T:
                    cuts.append(t)
    cuts = sorted(set(cuts))
    return list(zip(cuts[:-1], cuts[1:]))


def band_limit_density(spec: BandEnsembleSpec, x: float) -> float:
    """Limit density of ``G_n^{(r)} / sqrt(n)``.

    With ``u = t^2`` and the scaling ``z(x, u) = z(x / sqrt(u), 1)`` this is
    ``2r int_0^{1/sqrt r} mu0_density(symbol(1), x / t) dt``.
    """
    sym = band_limit_profile(spec, 1.0)
    support = gamma0(sym)
    T = 1 / math.sqrt(spec.r)
    x = float(x)
    lo, hi = support.hull
    total = 0.0
    for a, b in _t_pieces(x, support.breakpoints, T):
        y_mid = x / (0.5 * (a + b))
        if not lo < y_mid < hi:
            continue
        total += _adaptive(lambda t: _density_or_nudge(sym, x / t), a, b)
    return 2 * spec.r * total


class BandLimit:
    """Vectorised density and CDF of the band-ensemble limit measure."""

    def __init__(self, spec: BandEnsembleSpec, nodes_per_piece: int = 400, t_nodes: int = 48):
        self.spec = spec
        self.table = FixedSymbolTable(band_limit_profile(spec, 1.0), nodes_per_piece)
        self.T = 1 / math.sqrt(spec.r)
        self.t_nodes = t_nodes
        lo, hi = self.table.support.hull
        self.support = (min(lo, 0.0) * self.T, max(hi, 0.0) * self.T)

    def _integrate(self, x, kernel):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        bps = self.table.support.breakpoints
        g, w = np.polynomial.legendre.leggauss(self.t_nodes)
        phi = (g + 1) * math.pi / 2
        out = np.zeros_like(x)
        for i, xi in enumerate(x):
            ts, ws = [], []
            for a, b in _t_pieces(xi, bps, self.T):
                ts.append(a + (b - a) * (1 - np.cos(phi)) / 2)
                ws.append(w * (b - a) / 2 * np.sin(phi) * math.pi / 2)
            t = np.concatenate(ts)
            out[i] = np.dot(np.concatenate(ws), kernel(xi, t))
        return 2 * self.spec.r * out

    def density(self, x) -> np.ndarray:
        return self._integrate(x, lambda xi, t: self.table.density(xi / t))

    def cdf(self, x) -> np.ndarray:
        return np.clip(self._integrate(x, lambda xi, t: t * self.table.cdf(xi / t)), 0.0, 1.0)

    def mass(self, nodes: int = 400) -> float:
        lo, hi = self.support
        cuts = sorted({lo, hi, *[b * self.T for b in self.table.support.breakpoints if lo < b * self.T < hi]})
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            xs, ws = piece_nodes(a, b, nodes)
            total += float(np.dot(ws, self.density(xs)))
        return total


@dataclass
class EnsembleReport:
    kolmogorov: float
    wasserstein: float
    histogram: list  # (bin_left, bin_right, empirical_density, limit_density)
    eigenvalues: np.ndarray
    limit_mass: float | None = None

    def summary(self) -> dict:
        return {"kolmogorov": self.kolmogorov, "wasserstein": self.wasserstein,
                "limit_mass": self.limit_mass, "n_eigenvalues": int(self.eigenvalues.size)}


def scaled_spectrum(spec: BandEnsembleSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    return sample_band_matrix(spec, rng).eigenvalues() / math.sqrt(spec.n)


def empirical_vs_limit(spec: BandEnsembleSpec, bins: int = 60, limit: BandLimit | None = None,
                       rng: np.random.Generator | None = None,
                       check_mass: bool = False) -> EnsembleReport:
    """Compare the spectrum of ``G_n^{(r)} / sqrt(n)`` with the limit measure."""
    if bins < 1:
        raise ValueError("bins must be positive")
    limit = limit or BandLimit(spec)
    eig = scaled_spectrum(spec, rng)
    emp = EmpiricalMeasure(eig)
    ks = emp.kolmogorov_to_cdf(limit.cdf)

    lo = min(eig[0], limit.support[0])
    hi = max(eig[-1], limit.support[1])
    grid = np.linspace(lo, hi, 4001)
    F = limit.cdf(grid)
    w1 = float(trapezoid(np.abs(emp.cdf(grid) - F), grid))

    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(eig, bins=edges)
    width = np.diff(edges)
    Fe = limit.cdf(edges)
    hist = [(float(edges[i]), float(edges[i + 1]), float(counts[i] / (eig.size * width[i])),
             float((Fe[i + 1] - Fe[i]) / width[i])) for i in range(bins)]
    mass = limit.mass() if check_mass else None
    return EnsembleReport(float(ks), w1, hist, eig, mass)


def seed_streams(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generators spawned from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]
