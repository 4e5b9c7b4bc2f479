"""Volt/var regulation with forecasters trained through differentiable conic layers."""

__version__ = "0.1.0"
