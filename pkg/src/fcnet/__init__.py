"""fcnet: a desk-scale occlusion-aware pedestrian detector built around
feature calibration driven by the classifier's own weights.
"""

__version__ = "0.1.0"

from ._kernels import available_backends, backend, set_backend

__all__ = ["available_backends", "backend", "set_backend", "__version__"]
