"""Test suite for the Source Value engine."""
