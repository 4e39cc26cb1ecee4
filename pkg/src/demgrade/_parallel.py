import os
from concurrent.futures import ThreadPoolExecutor


def max_workers():
    """Worker cap from ``DEMGRADE_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("DEMGRADE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def ordered_map(fn, items):
    """Map ``fn`` over ``items``, possibly in threads; results keep input order."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
