"""Consistency metrics package."""
