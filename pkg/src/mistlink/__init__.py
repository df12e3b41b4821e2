"""Misinformation target detection by graph-link prediction."""
__version__ = "0.1.0"
