"""Polariton Bose-Hubbard physics in coupled arrays of atom-filled cavities."""

__version__ = "0.1.0"
