"""Coastal land-cover mapping: classify aerial imagery, assess accuracy against
reference maps and account for per-class area change between two dates."""

__version__ = "0.1.0"
