"""Backend selection for the hot loops.

The compiled extension ``omnibev._kernels`` is used when it imports; the
numpy implementation in ``omnibev._pykernels`` is the fallback. Set
``OMNIBEV_BACKEND=python`` to force the fallback.
"""
import os
from concurrent.futures import ThreadPoolExecutor

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _pykernels}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = _pykernels if os.environ.get("OMNIBEV_BACKEND") == "python" or _compiled is None else _compiled

_threads = None


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return "compiled" if _active is _compiled else "python"


def set_backend(name):
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


def get_backend():
    return _active


def set_threads(n):
    """Cap the worker count used by chunked kernels (``None`` = all cores)."""
    global _threads
    if n is not None and n < 1:
        raise ValueError("threads must be >= 1")
    _threads = n


def thread_count():
    return _threads or os.cpu_count() or 1


def run_chunked(fn, total, *args, min_chunk=4096):
    """Call ``fn(*args, start, stop)`` over disjoint row ranges.

    Each chunk writes only its own output rows, so the result does not
    depend on the number of workers.
    """
    n = max(1, min(thread_count(), total // min_chunk))
    if n == 1:
        fn(*args, 0, total)
        return
    bounds = [total * i // n for i in range(n + 1)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, *args, bounds[i], bounds[i + 1]) for i in range(n)]
        for f in futures:
            f.result()
