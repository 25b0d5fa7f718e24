"""Whole-body loco-manipulation learning and control.

Pipeline: demonstrations -> GMM/GMR reference trajectory -> kernelized
movement primitive (with via-point generalization) -> strict-priority
hierarchical QP controller -> kinematic simulation.
"""

__version__ = "0.1.0"
