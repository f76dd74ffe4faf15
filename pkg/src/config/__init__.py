"""Configuration package: settings and bundled experiment fixtures."""
