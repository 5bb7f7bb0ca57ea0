"""
Test package for Pinning Lab.

This package contains the unit tests and the slower acceptance-scale checks of the numerical core.
"""

__version__ = "0.1.0"
