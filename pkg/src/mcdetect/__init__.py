"""Joint adaptive detection and bearing estimation for a ULA with unknown mutual coupling."""

__version__ = "0.1.0"
