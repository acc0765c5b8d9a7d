"""Small reference symbols used in examples and tests."""

import numpy as np

from .symbol import PeriodicSymbol, SymbolPair


def scalar_chebyshev() -> SymbolPair:
    """``A = 1, B = 0``: support ``[-2, 2]``, arcsine zero density."""
    return SymbolPair([[1.0]], [[0.0]])


def decoupled_pair() -> SymbolPair:
    """Diagonal 2x2 data, support ``[-4, -2] U [1, 5]``."""
    return SymbolPair(np.diag([1.0, 0.5]), np.diag([3.0, -3.0]))


def coupled_pair() -> SymbolPair:
    """Non-normal lower-triangular ``A`` with off-diagonal ``B``."""
    return SymbolPair([[1.0, 0.0], [1.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]])


def period_two() -> PeriodicSymbol:
    """Scalar period-2 data with off-diagonals alternating 1 and 1/2."""
    return PeriodicSymbol([([[1.0]], [[0.0]]), ([[0.5]], [[0.0]])])


REFERENCE = {
    "S1": scalar_chebyshev,
    "D2": decoupled_pair,
    "H2": coupled_pair,
    "P2": period_two,
}
