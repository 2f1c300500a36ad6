"""Matmul FLOP accounting, grouped by a named scope."""

from __future__ import annotations

import contextlib
from collections import defaultdict

_active: list["FlopCounter"] = []
_scope: list[str] = ["other"]


class FlopCounter:
    """Collects ``2*m*k*n`` per matrix product executed while active."""

    def __init__(self):
        self.by_scope: dict[str, int] = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def __enter__(self) -> "FlopCounter":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)


@contextlib.contextmanager
def flop_scope(name: str):
    _scope.append(name)
    try:
        yield
    finally:
        _scope.pop()


def record(flops: int) -> None:
    if _active:
        scope = _scope[-1]
        for counter in _active:
            counter.by_scope[scope] += flops
