"""
Numerical core of Pinning Lab: inter-arrival laws, renewal functions,
homogeneous and disordered partition functions, fractional-moment
certificates and critical-shift scans.
"""

__version__ = "0.1.0"
