"""Multiple liquid crystal equilibria by deflated Newton with nested iteration."""

__version__ = "0.1.0"
