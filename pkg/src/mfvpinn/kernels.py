"""Backend selection for the hot activation kernels.

The compiled extension is used when importable; ``MFVPINN_BACKEND=numpy``
forces the pure-numpy fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"numpy": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def default_backend_name() -> str:
    return os.environ.get("MFVPINN_BACKEND") or ("cython" if _ckernels is not None else "numpy")


def get_backend(name: str | None = None):
    if name is None:
        name = default_backend_name()
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None

