"""Kernel backend selection.

The hot numeric loops (CART split search, tree routing, proximity
accumulation) exist in two interchangeable modules: ``numba_backend``
(JIT-compiled, used by default when numba is importable) and
``numpy_backend`` (vectorized pure numpy). Both expose the same functions
and produce bit-identical output; ``tests/test_kernels.py`` asserts the
equivalence and ``benchmarks/bench_kernels.py`` compares their speed.

Set ``FORESTCASE_NUMBA=0`` (or ``false``/``off``/``no``) to force the pure
numpy path.
"""

import os

from . import numpy_backend

_FLAG = os.environ.get("FORESTCASE_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in {"0", "false", "off", "no"}

if _WANT_NUMBA:
    try:
        from . import numba_backend as _active

        BACKEND = "numba"
    except ImportError:
        _active = numpy_backend
        BACKEND = "numpy"
else:
    _active = numpy_backend
    BACKEND = "numpy"

best_split_node = _active.best_split_node
apply_tree = _active.apply_tree
prox_original_counts = _active.prox_original_counts
prox_oob_counts = _active.prox_oob_counts
prox_gap_sums = _active.prox_gap_sums
extend_original_counts = _active.extend_original_counts
extend_oob_counts = _active.extend_oob_counts
extend_gap_sums = _active.extend_gap_sums


def backend_name() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return BACKEND
