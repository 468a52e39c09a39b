"""Toolkit for periodic orbits and periodic-to-periodic connections in
conservative fourth-order steady systems."""

from . import (codim2, corrector, diagnostics, foliation, model, normalform,
               numerics, orbit)

__version__ = "0.1.0"

__all__ = ["model", "numerics", "orbit", "diagnostics", "foliation",
           "corrector", "codim2", "normalform", "__version__"]
