"""Visual-kinematics instrument tip segmentation toolkit.

Pipeline pieces: kinematics streams and pose math, labeled instrument
meshes with QEM decimation, a deterministic silhouette rasterizer, a small
reverse-mode autodiff core, the part-graph segmentation model with its
cross-modal contrastive objective, a synthetic multi-procedure scene
generator, and the leave-one-family-out evaluation harness.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND
