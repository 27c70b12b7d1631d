"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise (or when
``GSR_PURE_PYTHON=1``) the numpy/pure-Python twins are used.
"""

import os

from gsr import _kernels_py

_NAMES = (
    "attention_forward",
    "attention_backward",
    "segment_softmax_forward",
    "segment_softmax_backward",
    "node2vec_walks",
    "sgns_train",
    "brandes",
    "rewire_undirected",
)

try:
    from gsr import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("gsr._kernels extension is not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("GSR_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
        return "python"
    return "compiled"


BACKEND = _select()
_impl = get_backend(BACKEND)

attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
segment_softmax_forward = _impl.segment_softmax_forward
segment_softmax_backward = _impl.segment_softmax_backward
node2vec_walks = _impl.node2vec_walks
sgns_train = _impl.sgns_train
brandes = _impl.brandes
rewire_undirected = _impl.rewire_undirected
