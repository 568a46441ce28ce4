"""Hot numeric kernels with two interchangeable backends.

``NLCODEC_BACKEND`` selects the implementation at import time:

* ``auto`` (default) - numba-compiled loops when numba imports, else numpy
* ``numba``          - require numba, fail otherwise
* ``numpy``          - force the pure-numpy reference path

Forward kernels are bit-identical across backends (same accumulation
order, no fastmath); see benchmarks/bench_kernels.py for the speed gap.
"""

import os

from ..errors import ConfigError

_CHOICE = os.environ.get("NLCODEC_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ConfigError(f"NLCODEC_BACKEND must be auto|numba|numpy, got {_CHOICE!r}")

if _CHOICE in ("auto", "numba"):
    try:
        from . import jit as _impl
        BACKEND = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise
        from . import reference as _impl
        BACKEND = "numpy"
else:
    from . import reference as _impl
    BACKEND = "numpy"

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd_input = _impl.conv2d_bwd_input
conv2d_bwd_weight = _impl.conv2d_bwd_weight
deconv2d_fwd = _impl.deconv2d_fwd
deconv2d_bwd_input = _impl.deconv2d_bwd_input
deconv2d_bwd_weight = _impl.deconv2d_bwd_weight
conv3d_fwd = _impl.conv3d_fwd
conv3d_bwd_input = _impl.conv3d_bwd_input
conv3d_bwd_weight = _impl.conv3d_bwd_weight
matmul_fwd = _impl.matmul_fwd
ctx_predict_at = _impl.ctx_predict_at
