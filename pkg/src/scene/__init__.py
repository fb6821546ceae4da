"""Procedural dynamic scenes, Gaussians and deformation."""
