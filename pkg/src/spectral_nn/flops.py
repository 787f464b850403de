"""Flop accounting for the reflector kernels.

Convention: one multiply or one add is one flop. Divisions, square roots
and comparisons are not counted.
"""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager


class FlopCounter:
    """Cumulative flop tally with named per-kernel sub-totals.

    Kernels call :meth:`add` with their own name. :meth:`scope` records the
    total accumulated inside a ``with`` block under another name, which is
    how composite kernels (a full spectral forward pass, say) get a tally
    without double counting in ``total``.
    """

    def __init__(self):
        self.total = 0
        self.tallies = defaultdict(int)

    def add(self, kernel: str, flops: int) -> None:
        if flops < 0:
            raise ValueError("flop counts only grow")
        self.total += int(flops)
        self.tallies[kernel] += int(flops)

    @contextmanager
    def scope(self, name: str):
        start = self.total
        try:
            yield self
        finally:
            self.tallies[name] += self.total - start

    def merge(self, other: "FlopCounter") -> None:
        self.total += other.total
        for key, value in other.tallies.items():
            self.tallies[key] += value

    def reset(self) -> None:
        self.total = 0
        self.tallies.clear()

    def __getitem__(self, kernel: str) -> int:
        return self.tallies.get(kernel, 0)

    def __repr__(self):
        return f"FlopCounter(total={self.total}, tallies={dict(self.tallies)})"


def _reflector_band(n: int, m: int) -> int:
    # sum of k for k = n - m + 1 .. n
    return m * n - m * (m - 1) // 2


def predicted_flops(kernel: str, n: int = 0, m1: int = 0, m2: int = 0, k: int = 0) -> float:
    """Closed-form flop counts from the complexity table.

    ``kernel`` is one of ``hprod``, ``hgrad``, ``spectral_fp``,
    ``spectral_bp``, ``ornn_fp``, ``ornn_bp``. The ``O(n)`` terms are
    dropped. For the oRNN rows ``m1`` is the reflector count.
    """
    if kernel == "hprod":
        return 4 * k
    if kernel == "hgrad":
        return 3 * n + 6 * k
    if kernel == "spectral_fp":
        return 4 * n * (m1 + m2) - 2 * m1**2 - 2 * m2**2
    if kernel == "spectral_bp":
        return 6 * n * (m1 + m2) - 1.5 * m1**2 - 1.5 * m2**2
    if kernel == "ornn_fp":
        return 4 * n * m1 - m1**2
    if kernel == "ornn_bp":
        return 7 * n * m1 - 2 * m1**2
    raise ValueError(f"unknown kernel {kernel!r}")


def leading_flops(kernel: str, n: int = 0, m1: int = 0, m2: int = 0, k: int = 0) -> float:
    """Only the highest-order term of :func:`predicted_flops`."""
    if kernel == "hprod":
        return 4 * k
    if kernel == "hgrad":
        return 3 * n + 6 * k
    if kernel == "spectral_fp":
        return 4 * n * (m1 + m2)
    if kernel == "spectral_bp":
        return 6 * n * (m1 + m2)
    raise ValueError(f"unknown kernel {kernel!r}")
