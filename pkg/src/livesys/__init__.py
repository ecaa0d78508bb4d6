"""Simulation and stability certification for live systems.

A live system is an impulsive system whose state dimension changes at the
impulse times; open multi-agent networks with agents joining and leaving
are the main instance.
"""

__version__ = "0.1.0"
