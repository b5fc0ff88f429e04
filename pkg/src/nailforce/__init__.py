"""Force estimation from fingernail images, with a synthetic ground-truth
oracle, camera tracking simulation and grasp-trial statistics."""

__version__ = "0.1.0"
