"""Density-dependent branching processes near a large carrying capacity."""
