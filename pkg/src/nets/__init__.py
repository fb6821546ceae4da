"""Tape autodiff and network building blocks."""
