"""Slow trend evaluations for IsoFormer."""
