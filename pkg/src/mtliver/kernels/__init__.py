"""Backend selection for the convolution/pooling hot kernels.

At import time the compiled Cython extension is preferred; the pure-numpy
module is used when the extension is unavailable or when the environment
variable MTLIVER_KERNELS is set to "numpy" (any value other than "auto",
"compiled" or "numpy" is rejected).
"""

import os

from ..errors import ConfigError
from . import _numpy_kernels

_choice = os.environ.get("MTLIVER_KERNELS", "auto").lower()

if _choice in ("auto", "compiled", ""):
    try:
        from . import _convops as _impl
        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _numpy_kernels
        BACKEND = "numpy"
elif _choice in ("numpy", "python"):
    _impl = _numpy_kernels
    BACKEND = "numpy"
else:
    raise ConfigError(f"MTLIVER_KERNELS={_choice!r} is not one of auto/compiled/numpy")

conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
convt4x4_forward = _impl.convt4x4_forward
convt4x4_backward = _impl.convt4x4_backward
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
