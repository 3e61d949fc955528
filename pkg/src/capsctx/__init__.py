"""Capsule network with trainable routing initialisation, a capsule CRF and a
Cholesky-style correlation combiner, on a small reverse-mode autodiff core."""
import os as _os

# CAPSCTX_THREADS caps the BLAS worker pool; it must be set before numpy loads
_threads = _os.environ.get("CAPSCTX_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .config import ConfigError, ModelConfig, load_config  # noqa: E402
from .model import CapsNet  # noqa: E402

__all__ = ["CapsNet", "ConfigError", "ModelConfig", "load_config"]
__version__ = "0.1.0"
