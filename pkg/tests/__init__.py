"""Tests for interval-sar."""
