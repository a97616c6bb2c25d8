"""Typed schemas for vehicle, controller and scenario configuration."""
