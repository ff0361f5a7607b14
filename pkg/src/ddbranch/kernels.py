"""Backend selection for the offspring-summation kernel.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Setting ``DDBRANCH_KERNEL=numpy`` forces the fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"numpy": _pykernels.coupled_generation}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels.coupled_generation

_requested = os.environ.get("DDBRANCH_KERNEL", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"DDBRANCH_KERNEL={_requested!r} is not available; have {sorted(BACKENDS)}")

BACKEND = _requested or ("cython" if "cython" in BACKENDS else "numpy")
coupled_generation = BACKENDS[BACKEND]


def get_kernel(name=None):
    """Return the kernel for ``name`` (default: the active backend)."""
    return BACKENDS[name or BACKEND]
