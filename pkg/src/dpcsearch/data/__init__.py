"""Bundled genotype files (importlib.resources territory)."""
