"""Configuration: environment settings and scenario documents."""
