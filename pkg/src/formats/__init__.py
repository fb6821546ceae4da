"""Artifact file formats."""
