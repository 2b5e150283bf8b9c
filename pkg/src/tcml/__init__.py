"""TCML: a functional language with channels and communicating transactions."""

__version__ = "0.1.0"
