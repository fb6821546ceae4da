"""Whitening/coloring transforms."""
