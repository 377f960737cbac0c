"""Autonomous orbit determination for formations from relative sensing."""
