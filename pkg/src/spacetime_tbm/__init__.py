"""Timelike Brunn-Minkowski experiments on weighted spacetimes given by a single chart."""
from .catalog import from_strings, spacetime
from .errors import TbmError
from .geometry import WeightedSpacetime

__all__ = ["WeightedSpacetime", "TbmError", "from_strings", "spacetime"]
__version__ = "0.1.0"
