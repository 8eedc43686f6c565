"""
THz imaging physics, phantoms, scan simulation and classical reconstruction.
"""
