"""Hot per-pixel kernels with a compiled core and a pure-numpy fallback.

The compiled backend is preferred when importable. Set CLOTHKIT_BACKEND to
"pure" or "ext" to force one (forcing "ext" raises if the extension is
missing). Both backends are output-identical; see tests/test_kernels.py.
"""

import os

from . import _pure

_choice = os.environ.get("CLOTHKIT_BACKEND", "").strip().lower()

if _choice == "pure":
    _impl = _pure
elif _choice == "ext":
    from . import _hot as _impl
else:
    try:
        from . import _hot as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
lbp_hist = _impl.lbp_hist
zhang_suen_pass = _impl.zhang_suen_pass
majority_filter = _impl.majority_filter

__all__ = ["BACKEND", "lbp_hist", "zhang_suen_pass", "majority_filter"]
