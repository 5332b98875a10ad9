"""Tree-growing and tree-traversal kernels.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
numpy implementation in ``_pykernels`` is selected.  Setting the environment
variable ``ETHMERGE_PURE_PYTHON=1`` forces the fallback.  Both backends
produce identical trees.
"""
from __future__ import annotations

import importlib
import os
from types import ModuleType

from . import _pykernels


def _load_compiled() -> ModuleType | None:
    try:
        return importlib.import_module("ethmerge.kernels._ckernels")
    except ImportError:
        return None


compiled = _load_compiled()
python = _pykernels

if compiled is not None and not os.environ.get("ETHMERGE_PURE_PYTHON"):
    active = compiled
else:
    active = _pykernels

BACKEND: str = active.NAME


def get_backend(name: str | None = None) -> ModuleType:
    """Return a kernel module by name (``"cython"``/``"python"``) or the active one."""
    if name is None:
        return active
    if name == "python":
        return _pykernels
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def build_tree(*args, **kwargs):
    return active.build_tree(*args, **kwargs)


def predict_tree(*args, **kwargs):
    return active.predict_tree(*args, **kwargs)


def presort(X, idx):
    return active.presort(X, idx)
