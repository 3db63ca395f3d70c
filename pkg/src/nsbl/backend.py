"""Import-time selection of the state-space kernel implementation.

The compiled extension is preferred; the pure-NumPy twin is used when
the extension is unavailable (or when ``NSBL_FORCE_PYTHON=1`` is set,
which the benchmark uses to time both sides).
"""

import os

if os.environ.get("NSBL_FORCE_PYTHON") == "1":
    from . import _sde_ekf_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _sde_ekf as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _sde_ekf_py as _impl
        BACKEND = "python"

sde_path = _impl.sde_path
ekf_loglik = _impl.ekf_loglik


def backend_name():
    return BACKEND
