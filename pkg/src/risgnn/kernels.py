"""Backend selection for the WMMSE hot loop.

The compiled extension is used when it was built; set ``RISGNN_PURE_PYTHON=1``
to force the numpy implementation.
"""
import os

from . import _wmmse_py

if os.environ.get("RISGNN_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _wmmse_ext as _ext
    except ImportError:  # extension not built
        _ext = None

if _ext is not None:
    BACKEND = "cython"
    wmmse, wmmse_batch, initial_beamformer = _ext.wmmse, _ext.wmmse_batch, _ext.initial_beamformer
else:
    BACKEND = "python"
    wmmse, wmmse_batch, initial_beamformer = (
        _wmmse_py.wmmse, _wmmse_py.wmmse_batch, _wmmse_py.initial_beamformer)

__all__ = ["BACKEND", "wmmse", "wmmse_batch", "initial_beamformer"]
