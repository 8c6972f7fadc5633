"""Pseudo-spectral simulation and relative-entropy certification toolkit
for the augmented Born-Infeld system and its Darcy-MHD diffusion limit on
the periodic 3-torus."""

__version__ = "0.1.0"
