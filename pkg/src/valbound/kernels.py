"""Backend selection for the tabular hot loops.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Set ``VALBOUND_PURE_PYTHON=1`` to force the fallback.
"""

import os

from valbound import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("VALBOUND_PURE_PYTHON") != "1":
    try:
        from valbound import _ckernels as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "compiled":
        from valbound import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


state_values = _impl.state_values
backup = _impl.backup
value_iteration = _impl.value_iteration
