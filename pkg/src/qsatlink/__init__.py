"""Ground-satellite quantum link feasibility simulator.

Loss modelling, background estimation, truncated Fock-space detection
statistics and finite-size key / Bell / teleportation verdicts over
simulated satellite passes.
"""

__version__ = "0.1.0"
