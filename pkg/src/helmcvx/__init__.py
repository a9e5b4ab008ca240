"""Dielectric-constant reconstruction from backscattered Helmholtz data.

Library layout:
  grid        geometry, field containers, run configuration
  io / vtk    binary field format, CSV and VTK writers
  stencils    finite-difference operators with exact adjoints
  basis       spectral basis on the source interval, geometric tensors
  forward     volume-integral forward solver and data simulation
  pipeline    log-field construction, unwrapping, boundary coefficients
  functional  weighted cost functional and its exact gradient
  inversion   two-step reconstruction and quality metrics
  report      delimited outputs and rendered figures
  cli         batch command-line front end

Submodules import numpy/scipy on first use; this package root stays
import-light so the CLI can configure thread pools first.
"""

__version__ = "0.1.0"
