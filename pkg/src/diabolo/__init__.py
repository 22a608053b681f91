"""Diabolical points of anisotropic quantum spins in a magnetic field."""
