"""Correlated random matrices: Dyson equation solver, cumulant tools, local-law experiments and diagram counting."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"
