"""Gradient checking, parameter counting and the norm-based bounds.

The finite-difference oracles here rebuild every model densely from the
raw parameters (see :mod:`spectral_nn.oracle`) and run in extended
precision, so they share no code with the reflector kernels they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flops import FlopCounter, leading_flops, predicted_flops  # noqa: F401  (re-export)
from .layers import Activation, RnnCell, SpectralDenseLayer
from .oracle import dense_spectral, jacobi_svd, spectral_norm

EXTENDED = np.longdouble


# ------------------------------------------------------------ packing


class ParamPacker:
    """Flatten a dict of arrays to one vector and back, in a fixed key order."""

    def __init__(self, params: dict):
        self.keys = list(params)
        self.shapes = [np.shape(params[k]) for k in self.keys]
        self.sizes = [int(np.prod(s)) for s in self.shapes]

    @property
    def size(self) -> int:
        return sum(self.sizes)

    def flatten(self, params: dict, dtype=float) -> np.ndarray:
        if not self.keys:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([np.ravel(np.asarray(params[k], dtype=dtype)) for k in self.keys])

    def unflatten(self, flat) -> dict:
        out, pos = {}, 0
        for key, shape, size in zip(self.keys, self.shapes, self.sizes):
            out[key] = np.reshape(flat[pos:pos + size], shape)
            pos += size
        return out

    def locate(self, index: int) -> str:
        """Human-readable name of flat coordinate ``index``."""
        pos = 0
        for key, shape, size in zip(self.keys, self.shapes, self.sizes):
            if index < pos + size:
                sub = np.unravel_index(index - pos, shape) if shape else ()
                return f"{key}[{','.join(map(str, sub))}]" if sub else key
            pos += size
        raise IndexError(index)


# ------------------------------------------------------- finite differences


def finite_diff_gradient(f, params, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``params``, computed in ``params.dtype``."""
    theta = np.array(params, copy=True)
    numeric = np.zeros(theta.shape, dtype=theta.dtype)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        fp = f(theta)
        theta[i] = orig - step
        fm = f(theta)
        theta[i] = orig
        numeric[i] = (fp - fm) / (2 * step)
    return numeric


def relative_errors(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=EXTENDED)
    numeric = np.asarray(numeric, dtype=EXTENDED)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.asarray(np.abs(analytic - numeric) / denom, dtype=float)


def finite_diff_check(f, params, analytic, step: float = 1e-5) -> float:
    """Max over coordinates of ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``f`` maps a flat parameter vector to a scalar. Pass ``params`` as an
    extended-precision array to run the differences in that precision.
    """
    numeric = finite_diff_gradient(f, params, step)
    errs = relative_errors(analytic, numeric)
    return float(errs.max()) if errs.size else 0.0


@dataclass
class GradcheckRow:
    name: str
    analytic: float
    numeric: float
    rel_err: float


def gradcheck_report(f, params, analytic, names=None, step: float = 1e-5):
    """Per-coordinate rows sorted by decreasing relative error."""
    numeric = finite_diff_gradient(f, params, step)
    errs = relative_errors(analytic, numeric)
    rows = [GradcheckRow(names(i) if names else str(i), float(a), float(nv), float(e))
            for i, (a, nv, e) in enumerate(zip(np.ravel(analytic), np.ravel(numeric), errs))]
    rows.sort(key=lambda r: -r.rel_err)
    return rows


def format_report(rows, limit: int | None = None) -> str:
    lines = [f"{'coordinate':<16} {'analytic':>16} {'numeric':>16} {'rel-err':>10}"]
    for row in rows[:limit]:
        lines.append(f"{row.name:<16} {row.analytic:>16.9e} {row.numeric:>16.9e} "
                     f"{row.rel_err:>10.3e}")
    return "\n".join(lines)


# ------------------------------------------------ dense reference models


def _sigma_ext(sigma_hat, r, sigma_star):
    sigma_hat = np.asarray(sigma_hat, dtype=EXTENDED)
    return 2 * EXTENDED(r) * (1 / (1 + np.exp(-sigma_hat)) - EXTENDED(0.5)) + EXTENDED(sigma_star)


def _act_ext(act: Activation, x):
    if act.kind == "identity":
        return x
    if act.kind == "relu":
        return np.maximum(x, 0)
    if act.kind == "leaky_relu":
        return np.where(x >= 0, x, EXTENDED(act.alpha) * x)
    if act.kind == "sigmoid":
        return 1 / (1 + np.exp(-x))
    return np.tanh(x)


def reference_transition(cell_or_W, p: dict, dtype=EXTENDED):
    """Dense transition matrix rebuilt from parameter dict ``p``."""
    W = cell_or_W.W if isinstance(cell_or_W, RnnCell) else cell_or_W
    if isinstance(W, np.ndarray):
        return np.asarray(p["W"], dtype=dtype)
    us = [p[f"u{k}"] for k in W.u.indices]
    vs = [p[f"v{k}"] for k in W.v.indices]
    sigma = _sigma_ext(p["sigma_hat"], W.sigma.r, W.sigma.sigma_star)
    return dense_spectral(W.m, W.n, us, vs, sigma, dtype)


def reference_rnn_outputs(cell: RnnCell, p: dict, xs):
    """Unrolled outputs of ``cell`` with parameters ``p``, in extended precision."""
    Wd = reference_transition(cell, p)
    M = np.asarray(p["M"], dtype=EXTENDED)
    Y = np.asarray(p["Y"], dtype=EXTENDED)
    b = np.asarray(p["b"], dtype=EXTENDED)
    xs = np.asarray(xs, dtype=EXTENDED)
    h = np.zeros((cell.n,) + xs.shape[2:], dtype=EXTENDED)
    if xs.ndim == 3:
        b = b[:, None]
    ys = []
    for x in xs:
        h = _act_ext(cell.activation, Wd @ h + M @ x + b)
        ys.append(Y @ h)
    return ys


def reference_dense_layer(layer: SpectralDenseLayer, p: dict, h):
    Wd = reference_transition(layer.W, p)
    b = np.asarray(p["b"], dtype=EXTENDED)
    h = np.asarray(h, dtype=EXTENDED)
    return _act_ext(layer.activation, Wd @ h + (b if h.ndim == 1 else b[:, None]))


# ---------------------------------------------------------- counting


def param_count(n: int, n_i: int, n_y: int, m1: int = 0, m2: int = 0, kind: str = "spectral") -> int:
    """Trainable scalars of an RNN with hidden size n (closed form)."""
    if kind == "spectral":
        total2 = 2 * (n_y + n_i + m1 + m2 + 2) * n - (m1 * m1 + m2 * m2 - m1 - m2)
        return total2 // 2
    if kind == "vanilla":
        return (n_y + n_i + n + 1) * n
    if kind == "transition":
        # spectral transition alone: reflectors plus sigma_hat
        return ((m1 + m2 + 1) * 2 * n - (m1 * m1 + m2 * m2 - m1 - m2)) // 2
    raise ValueError(f"unknown model kind {kind!r}")


def measure_spectral_flops(n: int, m1: int, m2: int, rng=None) -> dict:
    """Run one forward and one backward spectral matvec under a counter."""
    from .layers import spectral_apply, spectral_backward
    from .svd_param import SpectralMatrix

    rng = np.random.default_rng(rng)
    W = SpectralMatrix.random(n, n, m1, m2, rng=rng)
    counter = FlopCounter()
    h = rng.standard_normal(n)
    _, tape = spectral_apply(W, h, counter)
    spectral_backward(W, tape, rng.standard_normal(n), counter)
    return {"spectral_fp": counter["spectral_fp"], "spectral_bp": counter["spectral_bp"],
            "hprod": counter["hprod"], "hgrad": counter["hgrad"]}


# ------------------------------------------------------------ bounds


@dataclass
class BoundInputs:
    W_spec: float
    M_spec: float
    Y_spec: float
    W_fro: float
    M_fro: float
    Y_fro: float
    B: float
    t: int
    n: int
    gamma: float

    def __post_init__(self):
        norms = (self.W_spec, self.M_spec, self.Y_spec, self.W_fro, self.M_fro, self.Y_fro)
        if min(norms) < 0:
            raise ValueError("norms must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("margin gamma must be positive")
        if self.t < 1 or self.n < 1:
            raise ValueError("depth t and width n must be at least 1")

    @classmethod
    def from_matrices(cls, W, M, Y, B: float, t: int, gamma: float) -> "BoundInputs":
        W, M, Y = (np.asarray(a, dtype=float) for a in (W, M, Y))
        return cls(spectral_norm(W), spectral_norm(M), spectral_norm(Y),
                   float(np.linalg.norm(W)), float(np.linalg.norm(M)), float(np.linalg.norm(Y)),
                   B, t, W.shape[0], gamma)


def generalization_bound(inp: BoundInputs) -> float:
    """Norm-based complexity term ``B(w)`` of the RNN margin bound.

    Returns 0 for ``n = 1`` (the ``ln n`` factor vanishes); callers can test
    :func:`bound_is_degenerate`.
    """
    if inp.n == 1:
        return 0.0
    t = inp.t
    growth = max(inp.W_spec ** (2 * t - 2), 1.0)
    ratio_m = inp.M_fro ** 2 / inp.M_spec ** 2 if inp.M_spec > 0 else 0.0
    ratio_y = inp.Y_fro ** 2 / inp.Y_spec ** 2 if inp.Y_spec > 0 else 0.0
    scale = (inp.B ** 2 * t ** 2 * inp.n * math.log(inp.n) * growth
             * inp.M_spec ** 2 * inp.Y_spec ** 2)
    return scale * (t ** 2 * inp.W_fro ** 2 + ratio_m + ratio_y) / inp.gamma ** 2


def bound_is_degenerate(inp: BoundInputs) -> bool:
    return inp.n == 1


def corollary_bound(B: float, t: int, n: int, r: float, M_spec: float, Y_spec: float,
                    gamma: float) -> float:
    """Spectral-RNN specialization: ``B^2 t^4 n^2 ln(n) (1 + r)^(2t) ||M||^2 ||Y||^2 / gamma^2``."""
    if n == 1:
        return 0.0
    return (B ** 2 * t ** 4 * n ** 2 * math.log(n) * (1.0 + r) ** (2 * t)
            * M_spec ** 2 * Y_spec ** 2 / gamma ** 2)


def corollary_growth(r: float, t: int) -> float:
    """The depth factor that replaces ``max{||W||^(2t-2), 1}`` when ``||W|| <= 1 + r``."""
    return (1.0 + r) ** (2 * t)


@dataclass
class Lemma4Result:
    ok: bool
    max_ratio: float
    ratios: np.ndarray


def lemma4_check(cell: RnnCell, xs, B: float | None = None) -> Lemma4Result:
    """Check ``||h^(i)|| <= B ||M|| i max{||W||^(i-1), 1}`` along a rollout.

    ``xs`` has shape ``(t, n_i)`` or ``(t, n_i, batch)``; ``B`` defaults to
    the largest input norm. A nonzero bias is absorbed into ``M`` as an
    extra input column fed the constant 1.
    """
    act = cell.activation
    if act.kind not in ("relu", "leaky_relu") or (act.kind == "leaky_relu" and abs(act.alpha) > 1):
        raise ValueError("the norm bound needs a 1-Lipschitz activation that fixes 0")
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 2:
        xs = xs[:, :, None]
    M = cell.M
    aug = bool(np.any(cell.b != 0))
    if aug:
        M = np.hstack([M, cell.b[:, None]])
        xs = np.concatenate([xs, np.ones((xs.shape[0], 1, xs.shape[2]))], axis=1)
    if B is None:
        B = float(np.max(np.linalg.norm(xs, axis=1))) if xs.size else 0.0
    elif aug:
        B = math.sqrt(B * B + 1.0)
    W = cell.transition_matrix()
    w_norm = jacobi_svd(W)[1][0]
    m_norm = spectral_norm(M)
    h = np.zeros((cell.n, xs.shape[2]))
    ratios = []
    for i, x in enumerate(xs, start=1):
        h = act(W @ h + M @ x)
        bound = B * m_norm * i * max(w_norm ** (i - 1), 1.0)
        norms = np.linalg.norm(h, axis=0)
        if bound == 0.0:
            ratios.append(0.0 if np.all(norms == 0) else np.inf)
        else:
            ratios.append(float(norms.max() / bound))
    ratios = np.array(ratios)
    max_ratio = float(ratios.max()) if ratios.size else 0.0
    # tiny slack for rounding in the norms themselves
    return Lemma4Result(bool(max_ratio <= 1.0 + 1e-12), max_ratio, ratios)


# ------------------------------------------------------- rnn gradcheck


@dataclass
class RnnGradcheck:
    max_error: float
    worst: str
    rows: list


def rnn_gradcheck(cell: RnnCell, xs, weights, step: float = 1e-5,
                  break_gradient: bool = False) -> RnnGradcheck:
    """Compare BPTT gradients with extended-precision central differences.

    The loss is the linear probe ``sum_t <weights[t], y_hat^(t)>``, so any
    error in the backward pass shows up directly. ``break_gradient`` doubles
    the largest analytic coordinate (checker sanity).
    """
    from .layers import rnn_backward_through_time, rnn_forward

    xs = np.asarray(xs, dtype=float)
    weights = [np.asarray(w, dtype=float) for w in weights]
    _, tapes = rnn_forward(cell, xs)
    grads, _ = rnn_backward_through_time(cell, tapes, weights)
    params = cell.parameters()
    packer = ParamPacker(params)
    analytic = packer.flatten(grads, EXTENDED)
    if break_gradient and analytic.size:
        analytic[np.argmax(np.abs(analytic))] *= 2
    w_ext = [np.asarray(w, dtype=EXTENDED) for w in weights]

    def loss(theta):
        ys = reference_rnn_outputs(cell, packer.unflatten(theta), xs)
        return sum(np.sum(w * y) for w, y in zip(w_ext, ys))

    rows = gradcheck_report(loss, packer.flatten(params, EXTENDED), analytic,
                            names=packer.locate, step=step)
    if not rows:
        return RnnGradcheck(0.0, "-", rows)
    return RnnGradcheck(rows[0].rel_err, rows[0].name, rows)
