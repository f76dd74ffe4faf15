"""Services package: logging, random streams, experiments and result files."""
