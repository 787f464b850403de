"""Householder reflector kernels.

A reflector of index ``k`` in ambient dimension ``n`` is stored as a raw
vector ``u`` of length ``k``; it acts only on the last ``k`` coordinates:

    H_k(u) h = h - 2 (u^T h[n-k:]) / (u^T u) * pad(u)

A zero (or numerically negligible) ``u`` stands for the identity.

All kernels accept a single vector of shape ``(n,)`` or a batch of shape
``(n, B)`` whose columns are independent vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flops import FlopCounter

# ||u||^2 at or below this is treated as the zero vector (identity reflector)
ZERO_NORM_SQ = 1e-24


class FactorizationError(ArithmeticError):
    """Raised when a matrix cannot be factorized (singular column)."""


def _ncols(h: np.ndarray) -> int:
    return 1 if h.ndim == 1 else h.shape[1]


def _check(h: np.ndarray, u: np.ndarray) -> int:
    k = u.shape[0]
    n = h.shape[0]
    if u.ndim != 1 or k == 0:
        raise ValueError("reflector vector must be a non-empty 1-D array")
    if k > n:
        raise ValueError(f"reflector of length {k} does not fit dimension {n}")
    return n - k


def norm_sq(u: np.ndarray) -> float:
    return float(u @ u)


def is_identity(nu: float) -> bool:
    return nu <= ZERO_NORM_SQ


def hprod(h, u, *, nu=None, counter: FlopCounter | None = None, return_alpha=False):
    """Apply ``H_k(u)`` to ``h``.

    ``nu`` is the cached squared norm of ``u``. With ``return_alpha`` the
    inner products ``u^T h[n-k:]`` are returned too, so the backward pass
    can reuse them.
    """
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    off = _check(h, u)
    if nu is None:
        nu = norm_sq(u)
    if is_identity(nu):
        out = h.copy()
        alpha = np.zeros(h.shape[1:]) if h.ndim > 1 else 0.0
        return (out, alpha) if return_alpha else out
    k = u.shape[0]
    tail = h[off:]
    alpha = u @ tail
    out = h.copy()
    out[off:] = tail - np.multiply.outer(u, (2.0 / nu) * alpha)
    if counter is not None:
        # dot: 2k, scaled update: 2k, coefficient: 1
        counter.add("hprod", (4 * k + 1) * _ncols(h))
    return (out, alpha) if return_alpha else out


def hgrad(h_ref, u, g, ref_is_output=False, *, nu=None, alpha=None,
          counter: FlopCounter | None = None):
    """Gradients through one reflector ``h_out = H_k(u) h_in``.

    ``g`` is dL/dh_out. ``h_ref`` is ``h_in`` when ``ref_is_output`` is
    false and ``h_out`` otherwise. ``alpha`` optionally supplies
    ``u^T h_ref[n-k:]`` (per column) so it is not recomputed.

    Returns ``(dL/dh_in, dL/du)``; for a batch the ``u`` gradient is summed
    over columns.
    """
    h_ref = np.asarray(h_ref, dtype=float)
    g = np.asarray(g, dtype=float)
    u = np.asarray(u, dtype=float)
    off = _check(h_ref, u)
    if h_ref.shape != g.shape:
        raise ValueError(f"shape mismatch: h {h_ref.shape} vs g {g.shape}")
    if nu is None:
        nu = norm_sq(u)
    k = u.shape[0]
    if is_identity(nu):
        return g.copy(), np.zeros(k)

    B = _ncols(g)
    g_tail = g[off:]
    h_tail = h_ref[off:]
    flops = 0
    if alpha is None:
        alpha = u @ h_tail
        flops += 2 * k * B
    beta = u @ g_tail
    c_beta = (2.0 / nu) * beta

    dh = g.copy()
    dh[off:] = g_tail - np.multiply.outer(u, c_beta)

    c_alpha = (2.0 / nu) * alpha
    flops += 4 * k * B  # beta and dh
    if k == 1:
        # H_1(u) is the same sign flip for every nonzero u
        du = np.zeros(1)
    elif ref_is_output:
        # u^T h_in = -u^T h_out collapses the three-term expression
        du = np.dot(g_tail, c_alpha) - np.dot(h_tail, c_beta)
        flops += 4 * k * B - k
    else:
        # -(2/nu)(alpha g + beta h) + (4 alpha beta / nu^2) u, folded through dh
        du = -np.dot(dh[off:], c_alpha) - np.dot(h_tail, c_beta)
        flops += 4 * k * B - k
    if counter is not None:
        counter.add("hgrad", flops + 2 * B)
    return dh, du


@dataclass
class ReflectorStack:
    """Product ``H_n(u_n) ... H_{k_min}(u_{k_min})`` in dimension ``n``.

    ``vectors[i]`` is the reflector of index ``k_min + i`` and has that
    length. Vectors are stored raw, never normalized.
    """

    n: int
    k_min: int
    vectors: list = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.k_min <= self.n + 1:
            raise ValueError(f"k_min={self.k_min} outside [1, {self.n + 1}]")
        if not self.vectors:
            self.vectors = [np.zeros(k) for k in range(self.k_min, self.n + 1)]
        self.vectors = [np.asarray(v, dtype=float) for v in self.vectors]
        if len(self.vectors) != self.n - self.k_min + 1:
            raise ValueError("wrong number of reflector vectors")
        for k, v in zip(self.indices, self.vectors):
            if v.shape != (k,):
                raise ValueError(f"reflector {k} has shape {v.shape}, expected ({k},)")

    @classmethod
    def random(cls, n: int, count: int | None = None, rng=None) -> "ReflectorStack":
        """Stack of ``count`` Gaussian reflectors (the ``count`` largest indices)."""
        rng = np.random.default_rng(rng)
        count = n if count is None else count
        k_min = n - count + 1
        return cls(n, k_min, [rng.standard_normal(k) for k in range(k_min, n + 1)])

    @property
    def size(self) -> int:
        return self.n - self.k_min + 1

    @property
    def indices(self):
        return range(self.k_min, self.n + 1)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.vectors[k - self.k_min]

    def __setitem__(self, k: int, value) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != (k,):
            raise ValueError(f"reflector {k} must have shape ({k},)")
        self.vectors[k - self.k_min] = value

    def norms(self) -> np.ndarray:
        return np.array([norm_sq(v) for v in self.vectors])

    def copy(self) -> "ReflectorStack":
        return ReflectorStack(self.n, self.k_min, [v.copy() for v in self.vectors])

    def truncated(self, k_min: int) -> "ReflectorStack":
        """Keep only reflectors with index >= ``k_min``."""
        if k_min < self.k_min:
            raise ValueError("cannot extend a stack by truncation")
        return ReflectorStack(self.n, k_min, [self[k].copy() for k in range(k_min, self.n + 1)])

    def num_params(self) -> int:
        return sum(self.indices)


def stack_apply(s: ReflectorStack, h, transpose=False, *, norms=None,
                counter: FlopCounter | None = None):
    """Apply the stack product (or its transpose) to ``h`` without forming it.

    ``transpose=False`` applies ``H_{k_min}`` first and ``H_n`` last.
    """
    h = np.asarray(h, dtype=float)
    if h.shape[0] != s.n:
        raise ValueError(f"vector of length {h.shape[0]} for stack of dimension {s.n}")
    if norms is None:
        norms = s.norms()
    order = range(s.size - 1, -1, -1) if transpose else range(s.size)
    for i in order:
        h = hprod(h, s.vectors[i], nu=norms[i], counter=counter)
    return h


def stack_materialize(s: ReflectorStack) -> np.ndarray:
    return stack_apply(s, np.eye(s.n))


def _reflector_for(x: np.ndarray) -> np.ndarray:
    """``u = x - ||x|| e_1`` computed without cancellation."""
    tail_sq = float(x[1:] @ x[1:])
    norm = np.sqrt(x[0] ** 2 + tail_sq)
    u = x.copy()
    if x[0] > 0:
        u[0] = -tail_sq / (x[0] + norm)
    else:
        u[0] = x[0] - norm
    return u


def householder_qr(B) -> tuple[ReflectorStack, np.ndarray]:
    """Factor square ``B = H_n(u_n) ... H_1(u_1) R`` with ``diag(R) > 0``.

    The reflector of index ``k`` zeroes column ``n - k`` below the
    diagonal, mapping it onto a positive multiple of ``e_1``. Columns
    already in that form get ``u = 0``.
    """
    R = np.array(B, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"householder_qr needs a square matrix, got shape {R.shape}")
    n = R.shape[0]
    scale = np.linalg.norm(R) if R.size else 0.0
    if scale == 0.0:
        raise FactorizationError("zero matrix")
    vectors = [None] * n
    for j in range(n):
        k = n - j
        x = R[j:, j]
        col_norm = np.linalg.norm(x)
        if col_norm <= n * np.finfo(float).eps * scale:
            raise FactorizationError(f"column {j} is numerically dependent")
        u = _reflector_for(x)
        if is_identity(norm_sq(u)) or not np.any(u):
            u = np.zeros(k)
        else:
            R = hprod(R, u)
        # clean the annihilated entries
        R[j + 1:, j] = 0.0
        vectors[k - 1] = u
    return ReflectorStack(n, 1, vectors), R
