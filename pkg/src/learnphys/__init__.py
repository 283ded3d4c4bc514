"""Learnable physics engines: graph-network dynamics models, toy simulators and MPC."""

__version__ = "0.1.0"
