"""Tests for the Petri-net reasoning runtime."""
