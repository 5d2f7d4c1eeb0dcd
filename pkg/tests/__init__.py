"""Tests for graml."""
