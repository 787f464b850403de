"""SVD parameterization of a weight matrix by two reflector stacks.

An m x n matrix is stored as

    W = H_m(u_m) ... H_{k1}(u_{k1}) Sigma_hat H_{k2}(v_{k2}) ... H_n(v_n)

with ``k1 = m - m1 + 1`` and ``k2 = n - m2 + 1``. ``Sigma_hat`` is
``diag(sigma)`` padded with zero columns (m < n) or zero rows (m > n).
The singular values are reparameterized through a sigmoid so that each lies
in ``(sigma_star - r, sigma_star + r)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .householder import ReflectorStack, householder_qr, stack_apply, stack_materialize
from .oracle import complete_orthonormal, jacobi_svd

LOGIT_CLAMP = 30.0


class SigmaRangeError(ValueError):
    """A singular value cannot be represented for the given center and radius."""

    def __init__(self, message, suggested_sigma_star=None, suggested_r=None):
        super().__init__(message)
        self.suggested_sigma_star = suggested_sigma_star
        self.suggested_r = suggested_r


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class SigmaParam:
    sigma_hat: np.ndarray
    r: float = 0.01
    sigma_star: float = 1.0

    def __post_init__(self):
        self.sigma_hat = np.asarray(self.sigma_hat, dtype=float)
        if self.r < 0:
            raise ValueError("radius r must be nonnegative")

    def copy(self) -> "SigmaParam":
        return SigmaParam(self.sigma_hat.copy(), self.r, self.sigma_star)


def sigma_from_hat(p: SigmaParam) -> np.ndarray:
    return 2.0 * p.r * (sigmoid(p.sigma_hat) - 0.5) + p.sigma_star


def sigma_hat_grad(p: SigmaParam, dL_dsigma) -> np.ndarray:
    dL_dsigma = np.asarray(dL_dsigma, dtype=float)
    if dL_dsigma.shape != p.sigma_hat.shape:
        raise ValueError("gradient length does not match sigma_hat")
    f = sigmoid(p.sigma_hat)
    return dL_dsigma * (2.0 * p.r) * f * (1.0 - f)


def sigma_hat_from_sigma(sigma, r: float, sigma_star: float, atol: float = 1e-12) -> np.ndarray:
    """Invert the sigmoid map; boundary values are clamped to +-30."""
    sigma = np.asarray(sigma, dtype=float)
    if r == 0.0:
        if np.any(np.abs(sigma - sigma_star) > atol * max(1.0, abs(sigma_star))):
            raise SigmaRangeError("r = 0 requires every singular value to equal sigma_star")
        return np.zeros_like(sigma)
    q = (sigma - sigma_star + r) / (2.0 * r)
    slack = atol * max(1.0, abs(sigma_star) + r) / (2.0 * r)
    if np.any(q < -slack) or np.any(q > 1.0 + slack):
        raise SigmaRangeError(
            f"singular values [{sigma.min():.6g}, {sigma.max():.6g}] fall outside "
            f"[{sigma_star - r:.6g}, {sigma_star + r:.6g}]")
    with np.errstate(divide="ignore"):
        hat = np.log(q) - np.log1p(-q)
    return np.clip(np.nan_to_num(hat, nan=0.0, posinf=LOGIT_CLAMP, neginf=-LOGIT_CLAMP),
                   -LOGIT_CLAMP, LOGIT_CLAMP)


def suggest_range(sigma) -> tuple[float, float]:
    """Center and radius that place every value strictly inside the interval."""
    sigma = np.asarray(sigma, dtype=float)
    lo, hi = float(sigma.min()), float(sigma.max())
    center = 0.5 * (lo + hi)
    radius = 1.1 * 0.5 * (hi - lo) + 1e-3 * max(1.0, abs(hi))
    return center, radius


@dataclass
class SpectralMatrix:
    m: int
    n: int
    u: ReflectorStack
    v: ReflectorStack
    sigma: SigmaParam

    def __post_init__(self):
        if self.u.n != self.m or self.v.n != self.n:
            raise ValueError("reflector stack dimensions do not match the matrix shape")
        if self.sigma.sigma_hat.shape != (min(self.m, self.n),):
            raise ValueError(f"sigma_hat must have length {min(self.m, self.n)}")

    @classmethod
    def random(cls, m, n=None, m1=None, m2=None, r=0.01, sigma_star=1.0, rng=None,
               sigma_hat_scale=0.0) -> "SpectralMatrix":
        """Gaussian reflectors and ``sigma_hat = 0`` (all singular values at the center).

        Defaults: ``m1 = m``, ``m2 = min(m, n)``.
        """
        rng = np.random.default_rng(rng)
        n = m if n is None else n
        m1 = m if m1 is None else m1
        m2 = min(m, n) if m2 is None else m2
        if not 0 <= m1 <= m or not 0 <= m2 <= n:
            raise ValueError(f"reflector counts m1={m1}, m2={m2} out of range for {m}x{n}")
        u = ReflectorStack.random(m, m1, rng)
        v = ReflectorStack.random(n, m2, rng)
        sigma_hat = sigma_hat_scale * rng.standard_normal(min(m, n))
        return cls(m, n, u, v, SigmaParam(sigma_hat, r, sigma_star))

    @property
    def m1(self) -> int:
        return self.u.size

    @property
    def m2(self) -> int:
        return self.v.size

    @property
    def p(self) -> int:
        return min(self.m, self.n)

    def singular_values(self) -> np.ndarray:
        return sigma_from_hat(self.sigma)

    def parameters(self) -> dict:
        """Named views of every trainable array (updated in place by optimizers)."""
        params = {f"u{k}": self.u[k] for k in self.u.indices}
        params.update({f"v{k}": self.v[k] for k in self.v.indices})
        params["sigma_hat"] = self.sigma.sigma_hat
        return params

    def num_params(self) -> int:
        return self.u.num_params() + self.v.num_params() + self.p

    def copy(self) -> "SpectralMatrix":
        return SpectralMatrix(self.m, self.n, self.u.copy(), self.v.copy(), self.sigma.copy())


def apply_sigma(W: SpectralMatrix, z, sigma=None):
    """Multiply by ``Sigma_hat``: keep the first p coordinates, pad to length m."""
    sigma = W.singular_values() if sigma is None else sigma
    z = np.asarray(z, dtype=float)
    out = np.zeros((W.m,) + z.shape[1:])
    p = W.p
    if z.ndim == 1:
        out[:p] = sigma * z[:p]
    else:
        out[:p] = sigma[:, None] * z[:p]
    return out


def materialize(W: SpectralMatrix) -> np.ndarray:
    """Dense m x n matrix, built by pushing the identity through the chain."""
    Z = stack_apply(W.v, np.eye(W.n), transpose=True)
    Z = apply_sigma(W, Z)
    return stack_apply(W.u, Z)


def spectral_margin(W: SpectralMatrix) -> float:
    return float(np.max(np.abs(W.singular_values() - 1.0))) if W.p else 0.0


def _orthogonal_stack(Q: np.ndarray) -> ReflectorStack:
    # for orthogonal Q the triangular factor is I up to rounding
    stack, _ = householder_qr(Q)
    return stack


def decompose(W, m1=None, m2=None, sigma_star=None, r=None) -> SpectralMatrix:
    """Spectral parameters whose materialization reproduces ``W``.

    Pipeline: Jacobi SVD, Householder QR of the (completed) singular
    vector bases, then inversion of the sigmoid map. Without ``m1``/``m2``
    the minimal reflector counts that still cover every matrix are used:
    ``n`` for a square matrix, ``min(m, n)`` on both sides otherwise.
    Fewer reflectors than that are rejected.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError("decompose expects a 2-D matrix")
    m, n = W.shape
    need_u = m if m <= n else n
    need_v = n if n <= m else m
    m1 = need_u if m1 is None else m1
    m2 = need_v if m2 is None else m2
    if m1 < need_u or m2 < need_v or m1 > m or m2 > n:
        raise ValueError(
            f"decomposition of a {m}x{n} matrix needs m1 in [{need_u}, {m}] and "
            f"m2 in [{need_v}, {n}]")

    U, s, V = jacobi_svd(W)
    if sigma_star is None or r is None:
        c, rad = suggest_range(s)
        if sigma_star is None and r is None:
            sigma_star, r = c, rad
        elif sigma_star is None:
            sigma_star = c
        else:
            r = 1.1 * float(np.max(np.abs(s - sigma_star))) + 1e-3 * max(1.0, abs(sigma_star))
    try:
        sigma_hat = sigma_hat_from_sigma(s, r, sigma_star)
    except SigmaRangeError as err:
        c, rad = suggest_range(s)
        raise SigmaRangeError(str(err), c, rad) from None

    u_stack = _orthogonal_stack(complete_orthonormal(U))
    v_stack = _orthogonal_stack(complete_orthonormal(V))
    return SpectralMatrix(m, n, u_stack.truncated(m - m1 + 1), v_stack.truncated(n - m2 + 1),
                          SigmaParam(sigma_hat, r, sigma_star))


def decompose_square(W, m1=None, m2=None, sigma_star=None, r=None) -> SpectralMatrix:
    """Full-expressivity decomposition of a square matrix (``m1 = m2 = n``)."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"decompose_square needs a square matrix, got shape {W.shape}")
    n = W.shape[0]
    m1 = n if m1 is None else m1
    m2 = n if m2 is None else m2
    if m1 != n or m2 != n:
        raise ValueError("decompose_square requires m1 = m2 = n")
    return decompose(W, m1, m2, sigma_star, r)


def _pad(vec: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros(length)
    out[length - vec.shape[0]:] = vec
    return out


def embed_orthogonal(a_stack: ReflectorStack, k1: int, k2: int) -> SpectralMatrix:
    """Re-express the orthogonal ``A = H_n(a_n)...H_1(a_1)`` with index floors k1, k2.

    Works whenever ``k1 + k2 <= n + 2``. If ``k2 >= k1 - 1`` the low
    reflectors ``a_{k1-1}, ..., a_1`` move to the right-hand stack in
    reverse order (zero-padded to their new lengths); otherwise the same is
    done with the stack of ``A^T``, whose reflectors are laid out on the
    right and spill over to the left.
    """
    n = a_stack.n
    if not (1 <= k1 <= n + 1 and 1 <= k2 <= n + 1):
        raise ValueError("k1 and k2 must lie in [1, n + 1]")
    if k1 + k2 > n + 2:
        raise ValueError(f"k1 + k2 = {k1 + k2} exceeds n + 2 = {n + 2}")
    if a_stack.k_min != 1:
        a_full = ReflectorStack(n, 1, [np.zeros(k) for k in range(1, a_stack.k_min)]
                                + [v.copy() for v in a_stack.vectors])
    else:
        a_full = a_stack

    u = ReflectorStack(n, k1)
    v = ReflectorStack(n, k2)
    if k2 >= k1 - 1:
        for k in range(n, k1 - 1, -1):
            u[k] = a_full[k].copy()
        for k in range(k1 - 1, 0, -1):
            j = k2 + k1 - k - 1
            v[j] = _pad(a_full[k], j)
    else:
        # stack of A^T; A = H_1(b_1) ... H_n(b_n)
        b_full, _ = householder_qr(stack_materialize(a_full).T)
        for k in range(n, k2 - 1, -1):
            v[k] = b_full[k].copy()
        for k in range(k2 - 1, 0, -1):
            j = k2 + k1 - k - 1
            u[j] = _pad(b_full[k], j)
    return SpectralMatrix(n, n, u, v, SigmaParam(np.zeros(n), 0.0, 1.0))


# plain-text serialization -------------------------------------------------

FORMAT_TAG = "spectral-matrix v1"


def _fmt(values) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(values))


def dumps_spectral(W: SpectralMatrix) -> str:
    lines = [
        FORMAT_TAG,
        f"shape {W.m} {W.n}",
        f"reflectors {W.m1} {W.m2}",
        f"r {W.sigma.r!r}",
        f"sigma_star {W.sigma.sigma_star!r}",
        f"sigma_hat {_fmt(W.sigma.sigma_hat)}".rstrip(),
    ]
    lines += [f"u {k} {_fmt(W.u[k])}" for k in W.u.indices]
    lines += [f"v {k} {_fmt(W.v[k])}" for k in W.v.indices]
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_spectral(lines) -> SpectralMatrix:
    """Parse a block written by :func:`dumps_spectral` from an iterator of lines."""
    it = iter(lines)
    head = next(it).strip()
    if head != FORMAT_TAG:
        raise ValueError(f"not a spectral matrix record: {head!r}")
    fields, u_vecs, v_vecs = {}, {}, {}
    for raw in it:
        parts = raw.split()
        if not parts:
            continue
        key = parts[0]
        if key == "end":
            break
        if key in ("u", "v"):
            target = u_vecs if key == "u" else v_vecs
            target[int(parts[1])] = np.array([float(x) for x in parts[2:]])
        else:
            fields[key] = parts[1:]
    m, n = (int(x) for x in fields["shape"])
    m1, m2 = (int(x) for x in fields["reflectors"])
    u = ReflectorStack(m, m - m1 + 1, [u_vecs[k] for k in range(m - m1 + 1, m + 1)])
    v = ReflectorStack(n, n - m2 + 1, [v_vecs[k] for k in range(n - m2 + 1, n + 1)])
    sigma = SigmaParam(np.array([float(x) for x in fields.get("sigma_hat", [])]),
                       float(fields["r"][0]), float(fields["sigma_star"][0]))
    return SpectralMatrix(m, n, u, v, sigma)


def loads_spectral(text: str) -> SpectralMatrix:
    return parse_spectral(text.splitlines())
