"""Integer-flux vector fields on the unit cube: audit, approximation, connections."""

__version__ = "0.1.0"
