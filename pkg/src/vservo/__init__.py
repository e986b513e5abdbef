"""Desk-scale visual servoing lab.

Implements a pose-based visual servo loop driven by learned relative-pose
estimators, the LSD/SSD dataset scheme, six training regimes (including
meta-learned head switching), and a batch comparison harness.
"""

from vservo.kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
