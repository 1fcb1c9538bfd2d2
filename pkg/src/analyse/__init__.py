"""analyse: co-simulated grid/market/network attack experiments."""

__version__ = "0.1.0"
