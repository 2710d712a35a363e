"""Numerical laboratory for the Bogovskii divergence right-inverse and the
explicit-constant inequalities it controls on star-shaped domains."""

__version__ = "0.1.0"
