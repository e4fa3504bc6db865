"""Top-level package for subexpq."""

from .analyzer import Analyzer

__author__ = """María Ten Rodríguez"""
__email__ = "materod@upv.es"
__version__ = "0.1.0"
