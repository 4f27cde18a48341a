"""Waypoint-conditioned human-object interaction synthesis: a diffusion
denoiser with a waypoint-branch adapter (zero-initialized injection) and a
terminal geometry adapter (distance-biased cross-attention), plus the
geometry/metric/probe tooling around it."""

import os

# single-threaded BLAS: the model's matrices are small enough that thread
# fan-out costs more than it saves, and fixed threading keeps outputs
# byte-reproducible. Effective only if numpy is not yet loaded.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
