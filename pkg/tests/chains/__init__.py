"""Tests for the GI/G/1-type chain solvers."""
