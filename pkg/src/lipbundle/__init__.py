"""Discrete toolkit for decomposability bundles of measures in R^n.

Subpackages cover dense exterior algebra, Grassmannian frames, atomic
measures, polyline/mesh currents, flow decomposition and bundle
estimation, and the constructive non-differentiability machinery on
grids, plus a batch CLI.
"""

__version__ = "0.1.0"
