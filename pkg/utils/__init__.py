"""Shared utilities: logging, validation and symbolic backends."""
