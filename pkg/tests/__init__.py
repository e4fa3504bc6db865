"""Unit test package for subexpq."""
