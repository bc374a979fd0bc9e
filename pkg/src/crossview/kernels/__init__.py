"""Hot-kernel dispatch.

The toolkit's inner loops (attention, layer norm, optimizer update,
LCS) exist twice: a numba ``@njit`` build and a pure-numpy reference.
The active backend is chosen once at import time:

* ``CROSSVIEW_KERNELS=numba`` — require numba (ImportError surfaces).
* ``CROSSVIEW_KERNELS=numpy`` — force the reference path.
* unset — numba when importable, numpy otherwise.

Both backends implement identical contracts; ``benchmarks/`` compares
their throughput and tests compare their outputs.
"""

from __future__ import annotations

import os

from . import numpy_ref

_requested = os.environ.get("CROSSVIEW_KERNELS", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"CROSSVIEW_KERNELS={_requested!r}: expected 'numba' or 'numpy'"
    )

if _requested == "numpy":
    _impl = numpy_ref
elif _requested == "numba":
    from . import numba_impl as _impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:  # pragma: no cover - depends on environment
        _impl = numpy_ref

attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward
adamw_update = _impl.adamw_update
lcs_length = _impl.lcs_length


def backend_name() -> str:
    """Name of the active backend: 'numba' or 'numpy'."""
    return "numpy" if _impl is numpy_ref else "numba"
