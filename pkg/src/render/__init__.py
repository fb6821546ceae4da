"""Gaussian projection and tile rasterization."""
