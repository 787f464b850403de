"""Synthetic long-range-memory benchmarks: addition and copy."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

N_SYMBOLS = 10
N_PAYLOAD = 10
BLANK = 8
DELIMITER = 9


@dataclass
class AdditionBatch:
    inputs: np.ndarray   # (batch, L, 2): value row, marker row
    targets: np.ndarray  # (batch,)

    def model_inputs(self) -> np.ndarray:
        """Time-major ``(L, 2, batch)`` layout used by the RNN."""
        return np.transpose(self.inputs, (1, 2, 0))


@dataclass
class CopyBatch:
    inputs: np.ndarray   # (batch, T + 20) symbol ids
    targets: np.ndarray  # (batch, T + 20) symbol ids

    @property
    def lag(self) -> int:
        return self.inputs.shape[1] - 2 * N_PAYLOAD

    def model_inputs(self) -> np.ndarray:
        """One-hot, time-major ``(T + 20, 10, batch)``."""
        return np.transpose(one_hot(self.inputs), (1, 2, 0))


def one_hot(symbols, depth: int = N_SYMBOLS) -> np.ndarray:
    symbols = np.asarray(symbols)
    return np.eye(depth)[symbols]


def gen_addition(L: int, batch: int, rng) -> AdditionBatch:
    """First marker uniform in the first half, second uniform in the second half."""
    if L < 2:
        raise ValueError("addition sequences need L >= 2")
    rng = np.random.default_rng(rng)
    values = rng.uniform(0.0, 1.0, size=(batch, L))
    half = L // 2
    first = rng.integers(0, half, size=batch)
    second = rng.integers(half, L, size=batch)
    markers = np.zeros((batch, L))
    rows = np.arange(batch)
    markers[rows, first] = 1.0
    markers[rows, second] = 1.0
    inputs = np.stack([values, markers], axis=2)
    targets = np.sum(values * markers, axis=1)
    return AdditionBatch(inputs, targets)


def baseline_mse() -> float:
    """MSE of always answering 1: the variance of a sum of two U[0,1]."""
    return 1.0 / 6.0


def gen_copy(T: int, batch: int, rng) -> CopyBatch:
    """10 payload symbols, T blanks, the delimiter, 9 blanks.

    The delimiter sits at 0-based index ``T + 10``; targets are blank except
    the last 10 positions, which repeat the payload.
    """
    if T < 1:
        raise ValueError("copy task needs lag T >= 1")
    rng = np.random.default_rng(rng)
    length = T + 2 * N_PAYLOAD
    payload = rng.integers(0, BLANK, size=(batch, N_PAYLOAD))
    inputs = np.full((batch, length), BLANK, dtype=np.int64)
    inputs[:, :N_PAYLOAD] = payload
    inputs[:, T + N_PAYLOAD] = DELIMITER
    targets = np.full((batch, length), BLANK, dtype=np.int64)
    targets[:, -N_PAYLOAD:] = payload
    return CopyBatch(inputs, targets)


def baseline_ce(T: int) -> float:
    """Cross-entropy of the memoryless strategy, averaged over all T + 20 positions."""
    return N_PAYLOAD * math.log(BLANK) / (T + 2 * N_PAYLOAD)


def dump_addition_csv(batch: AdditionBatch, path) -> None:
    """One sample per line: ``target, v_1..v_L, m_1..m_L``."""
    L = batch.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target"] + [f"v{i}" for i in range(L)] + [f"m{i}" for i in range(L)])
        for x, y in zip(batch.inputs, batch.targets):
            writer.writerow([repr(float(y))] + [repr(float(v)) for v in x[:, 0]]
                            + [int(m) for m in x[:, 1]])


def dump_copy_csv(batch: CopyBatch, path) -> None:
    """One sample per line: ``x_0..x_{T+19}, y_0..y_{T+19}``."""
    length = batch.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(length)] + [f"y{i}" for i in range(length)])
        for x, y in zip(batch.inputs, batch.targets):
            writer.writerow(list(map(int, x)) + list(map(int, y)))
