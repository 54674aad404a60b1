"""Boundary-distance profiling of marker expression around cell nuclei.

Set ``BDPLOT_THREADS`` before import to cap BLAS/OpenMP threads and
``BDPLOT_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) for progress logging.
"""
import os as _os

__version__ = "0.1.0"

_threads = _os.environ.get("BDPLOT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import BDError, BDWarning, ConfigError, DataError, NumericalError  # noqa: E402

__all__ = ["BDError", "BDWarning", "ConfigError", "DataError", "NumericalError", "__version__"]
