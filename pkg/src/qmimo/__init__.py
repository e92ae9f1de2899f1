"""Simulation and recovery for low-bit quantized distributed MIMO radar."""

__version__ = "0.1.0"
