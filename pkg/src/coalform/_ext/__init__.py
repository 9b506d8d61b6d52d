"""Compiled kernels (Cython).  Built by ``setup.py``; optional at runtime."""
