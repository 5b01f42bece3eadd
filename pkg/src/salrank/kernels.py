"""Backend selection for the seam-carving hot loop.

The compiled extension ``salrank._seamkernel`` is used when it was built;
otherwise the numpy implementation in ``salrank._seam_py`` is used.  Both
produce identical results.
"""
from . import _seam_py

try:
    from . import _seamkernel as _compiled
except ImportError:  # extension not built
    _compiled = None

AVAILABLE = ("cython", "python") if _compiled is not None else ("python",)
_active = _compiled if _compiled is not None else _seam_py


def backend() -> str:
    return "cython" if _active is _compiled and _compiled is not None else "python"


def use_backend(name: str) -> None:
    global _active
    if name == "python":
        _active = _seam_py
    elif name == "cython":
        if _compiled is None:
            raise RuntimeError("the compiled seam kernel is not built")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


def cumulative_cost(energy):
    return _active.cumulative_cost(energy)


def backtrack(cost):
    return _active.backtrack(cost)


def remove_seam(image, seam):
    return _active.remove_seam(image, seam)
