"""Stylization pipelines."""
