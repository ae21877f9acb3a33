"""Pass/fail log of the acceptance criteria, printed at the end of the run."""

import time
from contextlib import contextmanager

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record ``criterion N: PASS|FAIL title (details)`` for the block.

    The block may append short strings to the yielded list; they are shown
    in parentheses together with the elapsed time.
    """
    details: list[str] = []
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield details
        status = "PASS"
    except BaseException as exc:
        details.append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    finally:
        details.append(f"{time.perf_counter() - start:.1f} s")
        line = f"criterion {number}: {status} {title} ({'; '.join(details)})"
        RESULTS[number] = line
        print(line)
