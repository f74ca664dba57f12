"""Hot-kernel backend selection.

Prefers the compiled extension (_fastops) when importable; otherwise the
numpy fallback (_reference). Set VALIDMARK_NO_EXT=1 to force the fallback.
Both backends honor identical contracts, including the max-pool tie rule,
so results differ at most in floating-point summation order.
"""

import os

from . import _reference

BACKEND = "reference"
_impl = _reference

if os.environ.get("VALIDMARK_NO_EXT", "") != "1":
    try:
        from . import _fastops as _compiled

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        pass

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
