"""Spectral asymptotics of matrix orthogonal polynomials."""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0+local"

from .symbol import PeriodicSymbol, SymbolPair, SupportSet, gamma0, make_symbol, solve_roots

__all__ = [
    "__version__",
    "PeriodicSymbol",
    "SymbolPair",
    "SupportSet",
    "gamma0",
    "make_symbol",
    "solve_roots",
]
