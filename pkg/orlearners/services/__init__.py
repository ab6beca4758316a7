"""Lookup services: learner families and saved target bundles."""
