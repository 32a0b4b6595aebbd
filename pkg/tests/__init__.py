"""Test package for SMMS Lab."""
