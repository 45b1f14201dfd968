"""Two-stream video accident detection.

A from-scratch spatiotemporal classifier for traffic camera and dashcam
footage: a mini inflated-3D convolutional backbone feeds stacked
ConvLSTM2D layers over parallel RGB and dense-optical-flow streams, with
global average pooling, feature fusion and a softmax accident head.
"""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
