"""Backend selection for the convolution kernels.

The compiled extension is used when importable; ``CSI2Q_PURE_PYTHON=1`` forces
the numpy fallback.  Both expose ``conv_forward`` and ``conv_backward``.
"""

import os

from . import _conv_py

try:
    from . import _conv_ext
except ImportError:  # extension not built
    _conv_ext = None

_force_py = os.environ.get("CSI2Q_PURE_PYTHON", "").strip() not in ("", "0")

if _conv_ext is not None and not _force_py:
    backend = _conv_ext
    BACKEND = "compiled"
else:
    backend = _conv_py
    BACKEND = "python"

BACKENDS = {"python": _conv_py}
if _conv_ext is not None:
    BACKENDS["compiled"] = _conv_ext


def get_backend(name=None):
    """Kernel module by name; ``None`` gives the active one."""
    if name is None:
        return backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available (have {sorted(BACKENDS)})") from None
