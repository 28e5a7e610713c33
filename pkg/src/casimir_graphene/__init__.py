"""Casimir force gradient between an Au sphere and a graphene-coated plate."""

__version__ = "0.1.0"
