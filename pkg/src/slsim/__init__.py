"""Desk-scale split-learning simulator with embedding-level backdoor attacks
and filtering defenses."""

__version__ = "0.1.0"
