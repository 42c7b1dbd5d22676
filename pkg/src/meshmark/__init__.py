"""meshmark: blind robust 3D mesh watermarking.

A graph-convolutional embedder writes a bit string into vertex coordinates;
a pooling extractor reads it back from the (possibly attacked) mesh alone.
Both are trained jointly through differentiable attack layers.
"""

from .kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
