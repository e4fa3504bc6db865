"""Tests for the queueing models and the simulation oracle."""
