"""Monte Carlo laboratory for differential equations driven by fractional Brownian motion."""
from ._backend import BACKEND
from .fbm import FbmPath, sample, sample_increments
from .vfields import SmoothField, TrigPoly, VectorFieldSet, load_system

__version__ = "0.1.0"

__all__ = ["BACKEND", "FbmPath", "sample", "sample_increments", "SmoothField",
           "TrigPoly", "VectorFieldSet", "load_system", "__version__"]
