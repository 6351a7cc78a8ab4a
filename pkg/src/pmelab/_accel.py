"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``PMELAB_BACKEND=python`` to force the fallback.
"""

import os

from pmelab import _core_py

_forced = os.environ.get("PMELAB_BACKEND", "").lower()

if _forced == "python":
    core = _core_py
else:
    try:
        from pmelab import _core as core
    except ImportError:
        if _forced == "cython":
            raise
        core = _core_py

BACKEND = core.BACKEND
