"""Offline summaries of training and evaluation metrics."""
