"""Matrix orthogonal polynomials from the three-term recurrence

    x P_n = A_{n+1} P_{n+1} + B_n P_n + A_n^* P_{n-1},   P_{-1} = 0, P_0 = I,

their block Jacobi / Toeplitz matrices, and checks of ratio asymptotics
against the roots and null vectors of the limiting symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .core_linalg import (
    as_matrix,
    block_tridiagonal_eigvalsh,
    check_hermitian,
    hermitian_eigen,
)
from .symbol import PeriodicSymbol, solve_roots

RESCALE_AT = 1e150
KINDS = ("constant", "periodic", "varying")


class SingularRatioError(ArithmeticError):
    def __init__(self, message, x, n):
        super().__init__(message)
        self.x = x
        self.n = n


@dataclass(frozen=True)
class Perturbation:
    """Multiplicative decay ``1 + amplitude * max(n, 1)^(-exponent)``."""

    exponent: float = 1.0
    amplitude: float = 0.0
    target: str = "both"  # "A", "B" or "both"

    def __post_init__(self):
        if self.target not in ("A", "B", "both"):
            raise ValueError(f"perturbation target must be A, B or both, got {self.target!r}")
        if self.exponent <= 0:
            raise ValueError("perturbation exponent must be positive")

    def factor(self, n: int) -> float:
        return 1.0 + self.amplitude * max(n, 1) ** (-self.exponent)


@dataclass
class CoefficientSequence:
    """Recurrence data ``n -> (A_n, B_n)``.

    ``limit`` is a :class:`PeriodicSymbol` for the constant and periodic kinds
    and a varying profile (anything with ``sample(n, N)`` and ``symbol(s)``)
    for the varying kind, in which case ``N`` fixes the scale.
    """

    r: int
    kind: str
    generator: Callable[[int], tuple]
    limit: object
    burn_in: int = 10
    N: int | None = None
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        self._cache: dict[int, tuple] = {}

    def __call__(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if n < 0:
            raise IndexError("coefficient index must be nonnegative")
        hit = self._cache.get(n)
        if hit is None:
            A, B = self.generator(n)
            A = as_matrix(A)
            B = as_matrix(B)
            check_hermitian(B, name=f"B_{n}")
            hit = (A, B)
            if len(self._cache) < 100_000:
                self._cache[n] = hit
        return hit

    def A(self, n: int) -> np.ndarray:
        return self(n)[0]

    def B(self, n: int) -> np.ndarray:
        return self(n)[1]

    @property
    def period(self) -> int:
        return self.limit.p if isinstance(self.limit, PeriodicSymbol) else 1

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_symbol(cls, sym: PeriodicSymbol, perturbation: Perturbation | None = None,
                    burn_in: int = 10) -> "CoefficientSequence":
        """Coefficients whose residue-class limits are the blocks of ``sym``."""
        pert = perturbation or Perturbation()
        p = sym.p

        def gen(n):
            j = n % p
            f = pert.factor(n)
            A = sym.A_blocks[j] * (f if pert.target in ("A", "both") else 1.0)
            B = sym.B_blocks[j] * (f if pert.target in ("B", "both") else 1.0)
            return A, B

        kind = "constant" if p == 1 else "periodic"
        label = {"kind": kind, "limit": sym.to_dict(),
                 "perturbation": {"type": "power", "exponent": pert.exponent,
                                  "amplitude": pert.amplitude, "target": pert.target}}
        return cls(sym.r, kind, gen, sym, burn_in=burn_in, label=label)

    @classmethod
    def varying(cls, profile, N: int, burn_in: int = 10) -> "CoefficientSequence":
        if N < 1:
            raise ValueError("scale N must be positive")
        label = {"kind": "varying", "N": N}
        if hasattr(profile, "to_dict"):
            label["profile"] = profile.to_dict()
        return cls(profile.r, "varying", lambda n: profile.sample(n, N), profile,
                   burn_in=burn_in, N=N, label=label)

    def limit_symbol(self, s: float | None = None) -> PeriodicSymbol:
        if self.kind == "varying":
            if s is None:
                raise ValueError("a varying sequence needs s to name its local limit")
            return self.limit.symbol(s)
        return self.limit


# ---------------------------------------------------------------------------
# polynomial evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialState:
    """``(P_{n-1}(x), P_n(x))`` up to the common factor ``exp(log_scale)``.

    ``logdet`` is a continuous branch of ``log det P_n(x)`` including the scale.
    """

    x: complex
    n: int
    P_prev: np.ndarray
    P_curr: np.ndarray
    log_scale: float = 0.0
    logdet: complex = 0j
    ratio_prev: np.ndarray | None = None  # P_{n-1} P_n^{-1}

    @classmethod
    def initial(cls, r: int, x) -> "PolynomialState":
        zero = np.zeros((r, r), complex)
        return cls(complex(x), 0, zero, np.eye(r, dtype=complex), ratio_prev=zero)

    def value(self) -> np.ndarray:
        """``P_n(x)``; overflows to inf when the scale is huge."""
        return self.P_curr * math.exp(self.log_scale)


def _slogdet(M):
    sign, logabs = np.linalg.slogdet(M)
    if sign == 0:
        return -np.inf + 0j
    return logabs + 1j * np.angle(sign)


def advance(state: PolynomialState, coeffs: CoefficientSequence) -> PolynomialState:
    """One recurrence step, rescaling ``(P_{n-1}, P_n)`` jointly near overflow.

    ``log det`` is telescoped through ``det P_{n+1} / det P_n =
    det[(x - B_n) - A_n^* P_{n-1} P_n^{-1}] / det A_{n+1}``, which stays
    accurate after the columns of ``P_n`` have numerically collapsed.
    """
    n = state.n
    A_next = coeffs.A(n + 1)
    A_n, B_n = coeffs(n)
    r = coeffs.r
    rhs = (state.x * np.eye(r) - B_n) @ state.P_curr
    bracket = state.x * np.eye(r) - B_n
    if n > 0:
        rhs -= A_n.conj().T @ state.P_prev
        bracket = bracket - A_n.conj().T @ state.ratio_prev
    P_next = np.linalg.solve(A_next, rhs)
    P_prev = state.P_curr
    log_scale = state.log_scale
    chain_ok = np.isfinite(state.logdet) and np.all(np.isfinite(bracket))
    logdet = state.logdet + _slogdet(bracket) - _slogdet(A_next) if chain_ok else np.nan
    if not np.isfinite(logdet):
        # an earlier P_k was singular, so the telescoped chain is broken
        logdet = _slogdet(P_next) + r * log_scale
    try:
        ratio_next = np.linalg.solve(bracket, A_next)
    except np.linalg.LinAlgError:
        ratio_next = np.full((r, r), np.nan + 0j)
    big = max(np.abs(P_next).max(), np.abs(P_prev).max())
    if big > RESCALE_AT:
        P_next = P_next / big
        P_prev = P_prev / big
        log_scale += math.log(big)
    return PolynomialState(state.x, n + 1, P_prev, P_next, log_scale, logdet, ratio_next)


def recurrence_residual(coeffs: CoefficientSequence, before: PolynomialState,
                        after: PolynomialState) -> float:
    """Relative residual of the three-term identity linking two consecutive states."""
    n = before.n
    r = coeffs.r
    if after.n != n + 1:
        raise ValueError("states must be consecutive")
    shift = math.exp(before.log_scale - after.log_scale)
    P_prev, P_curr = before.P_prev * shift, before.P_curr * shift
    A_n, B_n = coeffs(n)
    A_next = coeffs.A(n + 1)
    left = A_next @ after.P_curr
    mid = (before.x * np.eye(r) - B_n) @ P_curr
    right = A_n.conj().T @ P_prev if n > 0 else np.zeros_like(mid)
    res = np.linalg.norm(left - mid + right)
    scale = (np.linalg.norm(left) + np.linalg.norm(mid) + np.linalg.norm(right))
    return float(res / scale) if scale > 0 else 0.0


def evaluate(coeffs: CoefficientSequence, x, n: int) -> PolynomialState:
    state = PolynomialState.initial(coeffs.r, x)
    for _ in range(n):
        state = advance(state, coeffs)
    return state


# ---------------------------------------------------------------------------
# ratios
# ---------------------------------------------------------------------------

def _riccati(coeffs: CoefficientSequence, x, n_max: int):
    """Yield ``R_n = P_n P_{n+1}^{-1}`` for ``n = 0..n_max``.

    Uses ``R_n = [(x - B_n) - A_n^* R_{n-1}]^{-1} A_{n+1}``, which never forms
    ``P_n`` and so avoids its growth and loss of rank.
    """
    x = complex(x)
    r = coeffs.r
    R = np.zeros((r, r), dtype=complex)
    eye = np.eye(r)
    for n in range(n_max + 1):
        A_n, B_n = coeffs(n)
        bracket = x * eye - B_n
        if n > 0:
            bracket = bracket - A_n.conj().T @ R
        if np.linalg.cond(bracket) > 1e14:
            raise SingularRatioError(
                f"P_{n + 1}(x) is numerically singular at x={x}: x is (close to) a zero of det P_{n + 1}",
                x, n + 1)
        R = np.linalg.solve(bracket, coeffs.A(n + 1))
        yield n, R, bracket


def ratio(coeffs: CoefficientSequence, x, n: int) -> np.ndarray:
    """``P_n(x) P_{n+1}(x)^{-1}``."""
    for _, R, _ in _riccati(coeffs, x, n):
        pass
    return R


def ratio_sequence(coeffs: CoefficientSequence, x, n_max: int) -> list[np.ndarray]:
    return [R for _, R, _ in _riccati(coeffs, x, n_max)]


def step_ratio(ratios: list[np.ndarray], m: int, p: int) -> np.ndarray:
    """``P_m P_{m+p}^{-1}`` from consecutive one-step ratios."""
    Q = ratios[m]
    for i in range(1, p):
        Q = Q @ ratios[m + i]
    return Q


@dataclass
class RatioErrorCurve:
    x: complex
    schedule: list
    errors: np.ndarray  # (len(schedule), p, r)
    roots: np.ndarray
    stagnated: bool
    fitted_rate: float | None
    predicted_rate: float

    @property
    def final(self) -> float:
        return float(self.errors[-1].max())

    def to_dict(self) -> dict:
        return {
            "x": [self.x.real, self.x.imag],
            "schedule": list(self.schedule),
            "max_error": [float(e.max()) for e in self.errors],
            "errors": self.errors.tolist(),
            "small_roots": [[z.real, z.imag] for z in self.roots],
            "final": self.final,
            "stagnated": self.stagnated,
            "fitted_rate": self.fitted_rate,
            "predicted_rate": self.predicted_rate,
        }


def _fit_rate(schedule, errs, floor=1e-13):
    ok = [(n, e) for n, e in zip(schedule, errs) if e > floor]
    if len(ok) < 2:
        return None
    n, e = np.array(ok).T
    slope = np.polyfit(n, np.log(e), 1)[0]
    return float(np.exp(slope))


def verify_ratio(coeffs: CoefficientSequence, sym: PeriodicSymbol | None, x, n_schedule,
                 s: float | None = None) -> RatioErrorCurve:
    """Errors ``|| Q v_k - z_k v_k || / ||v_k||`` along a schedule, ``k = 1..r``.

    Plain symbols use ``Q = P_n P_{n+1}^{-1}``.  Period-``p`` symbols use
    ``Q = P_m P_{m+p}^{-1}`` with ``m = p * (n // p) + j`` for every residue
    ``j`` and the ``j``-th block of each null vector.  For a varying sequence
    the schedule lists scales ``N``; the ratio is taken at ``n = round(s N)``
    against the local symbol at ``s``.
    """
    x = complex(x)
    schedule = sorted(int(n) for n in n_schedule)
    if coeffs.kind == "varying":
        if s is None or s <= 0:
            raise ValueError("varying sequences need s > 0")
        sym = sym or coeffs.limit.symbol(s)
    sym = sym or coeffs.limit
    p, r = sym.p, sym.r
    rs = solve_roots(sym, x)
    zs = rs.roots[:r]
    errors = np.zeros((len(schedule), p, r))

    if coeffs.kind == "varying":
        for i, N in enumerate(schedule):
            seq = CoefficientSequence.varying(coeffs.limit, N)
            Q = ratio(seq, x, int(round(s * N)))
            for k in range(r):
                v = rs.vectors[k]
                errors[i, 0, k] = np.linalg.norm(Q @ v - zs[k] * v)
    else:
        top = p * (schedule[-1] // p) + 2 * p
        ratios = ratio_sequence(coeffs, x, top)
        for i, n in enumerate(schedule):
            for j in range(p):
                m = p * (n // p) + j
                Q = step_ratio(ratios, m, p)
                for k in range(r):
                    v = rs.block(k, j) if p > 1 else rs.vectors[k]
                    nv = np.linalg.norm(v)
                    errors[i, j, k] = np.linalg.norm(Q @ v - zs[k] * v) / nv

    worst = errors.max(axis=(1, 2))
    # oscillating errors on the support never beat their earlier best
    best_before = worst[:-1].min() if worst.size > 1 else np.inf
    stagnated = bool(worst[-1] > 1e-4 and (worst.size < 2 or worst[-1] >= 0.5 * best_before))
    mod = np.abs(rs.roots)
    predicted = float(mod[r - 1] / mod[r]) if mod[r] > 0 else 0.0
    steps = schedule if coeffs.kind != "varying" else [round(s * N) for N in schedule]
    return RatioErrorCurve(x, schedule, errors, zs, stagnated, _fit_rate(steps, worst), predicted)


@dataclass
class DetRatioReport:
    measured: complex
    predicted: complex
    deviation: float


def det_ratio_check(coeffs: CoefficientSequence, sym: PeriodicSymbol | None, x, n: int,
                    s: float | None = None) -> DetRatioReport:
    """``det P_n / det P_{n+p}`` against ``z_1 ... z_r``."""
    if coeffs.kind == "varying":
        sym = sym or coeffs.limit.symbol(s if s is not None else n / coeffs.N)
    sym = sym or coeffs.limit
    p = sym.p if coeffs.kind != "varying" else 1
    ratios = ratio_sequence(coeffs, x, n + p - 1)
    measured = complex(np.prod([np.linalg.det(R) for R in ratios[n:n + p]]))
    predicted = complex(np.prod(solve_roots(sym, x, vectors=False).roots[:sym.r]))
    return DetRatioReport(measured, predicted, abs(measured - predicted))


# ---------------------------------------------------------------------------
# matrices and spectra
# ---------------------------------------------------------------------------

def _blocks(coeffs: CoefficientSequence, n: int):
    diag = [coeffs.B(k) for k in range(n)]
    upper = [coeffs.A(k) for k in range(1, n)]
    return diag, upper


def _assemble(diag, upper) -> np.ndarray:
    r = diag[0].shape[0]
    n = len(diag)
    J = np.zeros((n * r, n * r), dtype=complex)
    for k, Bk in enumerate(diag):
        J[k * r:(k + 1) * r, k * r:(k + 1) * r] = Bk
    for k, Ak in enumerate(upper):
        J[k * r:(k + 1) * r, (k + 1) * r:(k + 2) * r] = Ak
        J[(k + 1) * r:(k + 2) * r, k * r:(k + 1) * r] = Ak.conj().T
    return J


def jacobi_matrix(coeffs: CoefficientSequence, n: int) -> np.ndarray:
    """Block Jacobi ``J_n``: diagonal ``B_0..B_{n-1}``, superdiagonal ``A_1..A_{n-1}``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return _assemble(*_blocks(coeffs, n))


def toeplitz_matrix(sym: PeriodicSymbol, n: int) -> np.ndarray:
    """``T_n`` built from the limit blocks alone (periodic blocks cycle)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    p = sym.p
    diag = [sym.B_blocks[k % p] for k in range(n)]
    upper = [sym.A_blocks[k % p] for k in range(1, n)]
    return _assemble(diag, upper)


def jacobi_eigenvalues(coeffs: CoefficientSequence, n: int) -> np.ndarray:
    """Eigenvalues of ``J_n`` (zeros of ``det P_n``) via banded storage."""
    return block_tridiagonal_eigvalsh(*_blocks(coeffs, n))


def toeplitz_eigenvalues(sym: PeriodicSymbol, n: int) -> np.ndarray:
    p = sym.p
    return block_tridiagonal_eigvalsh([sym.B_blocks[k % p] for k in range(n)],
                                      [sym.A_blocks[k % p] for k in range(1, n)])


@dataclass
class EmpiricalMeasure:
    """Uniform counting measure on sorted real points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        if np.iscomplexobj(pts):
            if np.abs(pts.imag).max(initial=0) > 1e-9 * (1 + np.abs(pts).max(initial=0)):
                raise ValueError("empirical measure points must be real")
            pts = pts.real
        self.points = np.sort(pts.astype(float))

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.points.size, 1.0 / self.points.size)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def atoms(self, tol: float = 1e-10) -> list[tuple[float, float]]:
        out: list[list[float]] = []
        for x in self.points:
            if out and abs(x - out[-1][0]) <= tol * (1 + abs(x)):
                out[-1][1] += 1
            else:
                out.append([x, 1])
        n = self.points.size
        return [(a, c / n) for a, c in out]

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.points, x, side="right") / self.points.size

    def kolmogorov_to_cdf(self, cdf: Callable) -> float:
        """``sup_x |F_emp(x) - F(x)|`` for a continuous target CDF."""
        n = self.points.size
        F = np.asarray(cdf(self.points), dtype=float)
        i = np.arange(1, n + 1)
        return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))

    def kolmogorov_to(self, other: "EmpiricalMeasure") -> float:
        grid = np.concatenate([self.points, other.points])
        return float(np.max(np.abs(self.cdf(grid) - other.cdf(grid))))

    def wasserstein_to(self, other: "EmpiricalMeasure") -> float:
        return float(stats.wasserstein_distance(self.points, other.points))


def spectrum_measure(M) -> EmpiricalMeasure:
    lam, _ = hermitian_eigen(M)
    return EmpiricalMeasure(lam)


# ---------------------------------------------------------------------------
# bounds and identities
# ---------------------------------------------------------------------------

def _norm(M) -> float:
    return float(np.linalg.norm(M, 2))


def bound_M(coeffs: CoefficientSequence, horizon: int) -> float:
    """``sup_k (||B_k|| + ||A_k|| + ||A_{k+1}||)`` over ``k <= horizon`` plus the limit tail.

    ``A_0`` does not enter ``J_n`` and is skipped.
    """
    best = 0.0
    prev = 0.0
    for k in range(horizon + 1):
        nxt = _norm(coeffs.A(k + 1))
        best = max(best, _norm(coeffs.B(k)) + prev + nxt)
        prev = nxt
    if coeffs.kind != "varying":
        sym = coeffs.limit
        p = sym.p
        for j in range(p):
            best = max(best, _norm(sym.B_blocks[j]) + _norm(sym.A_blocks[j])
                       + _norm(sym.A_blocks[(j + 1) % p]))
    return best


def distance_to_interval(x, M: float) -> float:
    x = complex(x)
    over = max(abs(x.real) - M, 0.0)
    return math.hypot(over, x.imag)


@dataclass
class DetteReutherReport:
    max_violation: float
    max_lhs: float
    bound: float
    M: float


def _unit_vectors(rng, count, r):
    V = rng.standard_normal((count, r)) + 1j * rng.standard_normal((count, r))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def dette_reuther_check(coeffs: CoefficientSequence, x, n: int, trials: int = 100,
                        rng: np.random.Generator | None = None, form: str = "lemma",
                        M: float | None = None) -> DetteReutherReport:
    """Largest ``lhs - rhs`` over random unit vectors (``<= 0`` means no violation).

    ``lemma``: ``|v^* P_n P_{n+1}^{-1} A_{n+1}^{-1} v| <= 1 / dist(x, [-M, M])``.
    ``corollary``: ``|w^* P_n P_{n+1}^{-1} v| <= 8 ||A|| / dist(x, [-M, M])``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if M is None:
        M = bound_M(coeffs, n + 1)
    dist = distance_to_interval(x, M)
    if dist <= 0:
        raise ValueError(f"x={x} lies in [-M, M] with M={M}")
    for _, R, bracket in _riccati(coeffs, x, n):
        pass
    V = _unit_vectors(rng, trials, coeffs.r)
    if form == "lemma":
        G = np.linalg.inv(bracket)  # = R_n A_{n+1}^{-1}
        lhs = np.abs(np.einsum("ti,ij,tj->t", V.conj(), G, V))
        bound = 1.0 / dist
    elif form == "corollary":
        if n < coeffs.burn_in:
            raise ValueError(f"corollary form needs n >= burn-in ({coeffs.burn_in})")
        W = _unit_vectors(rng, trials, coeffs.r)
        lhs = np.abs(np.einsum("ti,ij,tj->t", W.conj(), R, V))
        if coeffs.kind == "varying":
            a_norm = max(_norm(coeffs.A(k)) for k in range(1, n + 2))
        else:
            a_norm = max(_norm(A) for A in coeffs.limit.A_blocks)
        bound = 8.0 * a_norm / dist
    else:
        raise ValueError("form must be 'lemma' or 'corollary'")
    return DetteReutherReport(float(np.max(lhs - bound)), float(lhs.max()), bound, M)


def det_consistency(coeffs: CoefficientSequence, x, n: int) -> float:
    """Relative gap between ``det P_n(x)`` and ``c_n det(x I - J_n)``."""
    x = complex(x)
    state = evaluate(coeffs, x, n)
    log_lhs = state.logdet
    log_c = -sum(_slogdet(coeffs.A(k)) for k in range(1, n + 1))
    J = jacobi_matrix(coeffs, n)
    log_rhs = log_c + _slogdet(x * np.eye(J.shape[0]) - J)
    return float(abs(np.expm1(log_lhs - log_rhs)))
