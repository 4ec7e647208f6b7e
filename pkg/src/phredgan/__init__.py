"""Persona-conditioned adversarial dialogue models, end to end on numpy."""

__version__ = "0.1.0"
