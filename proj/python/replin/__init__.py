"""Representation learning robust to interventional distribution shifts."""

try:
    from ._core import *  # noqa: F401,F403  (installed layout)
except ImportError:  # build-tree layout: _core.so sits on PYTHONPATH
    from _core import *  # noqa: F401,F403
