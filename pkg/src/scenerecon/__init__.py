"""Non-pixel-aligned 3D scene reconstruction at desk scale.

A flow-matching point-cloud autoencoder (stage 1), an image-to-scene-token
transformer that conditions its frozen decoder (stage 2), a procedural
scene/data pipeline with exact analytic oracles, and a full geometric
evaluation suite.
"""

__version__ = "0.1.0"

from .geometry import CameraView, PointCloud

__all__ = ["CameraView", "PointCloud", "__version__"]
