"""
Shared library utilities for thzlab

This package contains helpers used across imaging, restoration and scripts:
- tensorio.py: THZT tensor files, YAML sidecars, PGM/CSV exports
- runtime.py: thread pool, progress switch and seeded per-item RNG streams
- settings.py: logging, .env, config files and run manifests
"""
