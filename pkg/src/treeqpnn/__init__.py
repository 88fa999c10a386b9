"""Simulation, training, scheduling and analysis of recurrent QPNN tree-state generators."""

__version__ = "0.1.0"
