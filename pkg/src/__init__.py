"""
Pinning Lab source package.
"""
