"""Spectral RNN cell and spectral dense layer with hand-written backprop.

Batches are matrices whose columns are independent samples: hidden states
have shape ``(n, B)``, inputs ``(n_i, B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flops import FlopCounter
from .householder import hgrad, hprod
from .svd_param import (SpectralMatrix, apply_sigma, materialize, sigma_hat_grad, sigmoid)

# ---------------------------------------------------------------- activations

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid", "tanh")


@dataclass(frozen=True)
class Activation:
    kind: str = "leaky_relu"
    alpha: float = 0.01

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.kind!r}; choose from {ACTIVATIONS}")

    @classmethod
    def parse(cls, spec) -> "Activation":
        """``"tanh"``, ``"leaky_relu"`` or ``"leaky_relu:0.2"``."""
        if isinstance(spec, Activation):
            return spec
        kind, _, arg = str(spec).partition(":")
        return cls(kind, float(arg)) if arg else cls(kind)

    def __str__(self):
        return f"leaky_relu:{self.alpha:g}" if self.kind == "leaky_relu" else self.kind

    def __call__(self, x):
        if self.kind == "identity":
            return np.array(x, dtype=float)
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "leaky_relu":
            return np.where(x >= 0, x, self.alpha * x)
        if self.kind == "sigmoid":
            return sigmoid(x)
        return np.tanh(x)

    def grad(self, x, g):
        """dL/dx given the pre-activation ``x`` and dL/dy ``g``.

        At exactly 0 the (leaky) ReLU takes its positive-side slope.
        """
        if self.kind == "identity":
            return np.array(g, dtype=float)
        if self.kind == "relu":
            return np.where(x >= 0, g, 0.0)
        if self.kind == "leaky_relu":
            return np.where(x >= 0, g, self.alpha * g)
        if self.kind == "sigmoid":
            s = sigmoid(x)
            return g * s * (1.0 - s)
        return g * (1.0 - np.tanh(x) ** 2)


def activation(kind, x):
    return Activation.parse(kind)(x)


def activation_grad(kind, x, g):
    return Activation.parse(kind).grad(x, g)


# ------------------------------------------------------- spectral matvec


@dataclass
class ForwardTape:
    """Intermediates of one spectral matvec.

    ``hv[0]`` is the input and ``hv[i]`` the vector after the i-th V
    reflector (``H_n`` first). ``hu[0]`` is ``Sigma_hat z`` and ``hu[i]``
    the vector after the i-th U reflector (``H_{k1}`` first); ``hu[-1]``
    is the output. ``alpha_*`` are the forward inner products against the
    reflector inputs.
    """

    shape: tuple
    hv: list
    alpha_v: list
    hu: list
    alpha_u: list
    norms_u: np.ndarray
    norms_v: np.ndarray
    sigma: np.ndarray

    @property
    def output(self):
        return self.hu[-1]


@dataclass
class SpectralGrads:
    du: dict
    dv: dict
    d_sigma: np.ndarray
    d_sigma_hat: np.ndarray
    dh: np.ndarray

    def as_params(self) -> dict:
        out = {f"u{k}": g for k, g in self.du.items()}
        out.update({f"v{k}": g for k, g in self.dv.items()})
        out["sigma_hat"] = self.d_sigma_hat
        return out


def spectral_apply(W: SpectralMatrix, h, counter: FlopCounter | None = None):
    """``C = W h`` through the reflector chain; returns ``(C, tape)``."""
    h = np.asarray(h, dtype=float)
    if h.shape[0] != W.n:
        raise ValueError(f"input of length {h.shape[0]} for a {W.m}x{W.n} matrix")
    norms_u, norms_v = W.u.norms(), W.v.norms()
    sigma = W.singular_values()
    ctx = counter.scope("spectral_fp") if counter is not None else _null()
    with ctx:
        hv, alpha_v = [h], []
        for i in range(W.v.size - 1, -1, -1):
            out, a = hprod(hv[-1], W.v.vectors[i], nu=norms_v[i], counter=counter,
                           return_alpha=True)
            hv.append(out)
            alpha_v.append(a)
        hu = [apply_sigma(W, hv[-1], sigma)]
        if counter is not None:
            counter.add("sigma", W.p * (1 if h.ndim == 1 else h.shape[1]))
        alpha_u = []
        for i in range(W.u.size):
            out, a = hprod(hu[-1], W.u.vectors[i], nu=norms_u[i], counter=counter,
                           return_alpha=True)
            hu.append(out)
            alpha_u.append(a)
    tape = ForwardTape((W.m, W.n, W.m1, W.m2), hv, alpha_v, hu, alpha_u, norms_u, norms_v, sigma)
    return hu[-1], tape


def spectral_backward(W: SpectralMatrix, tape: ForwardTape, g,
                      counter: FlopCounter | None = None) -> SpectralGrads:
    """Reverse the chain recorded in ``tape`` given ``g = dL/dC``.

    U-side reflectors are differentiated against their cached outputs, V-side
    ones against their cached inputs, reusing the forward inner products.
    """
    g = np.asarray(g, dtype=float)
    if tape.shape != (W.m, W.n, W.m1, W.m2):
        raise ValueError(f"tape recorded for shape {tape.shape}, matrix is "
                         f"{(W.m, W.n, W.m1, W.m2)}")
    if g.shape != tape.output.shape:
        raise ValueError(f"gradient shape {g.shape} does not match output {tape.output.shape}")
    p = W.p
    ctx = counter.scope("spectral_bp") if counter is not None else _null()
    with ctx:
        du = {}
        for i in range(W.u.size - 1, -1, -1):
            k = W.u.k_min + i
            # u^T h_out = -u^T h_in
            g, du[k] = hgrad(tape.hu[i + 1], W.u.vectors[i], g, ref_is_output=True,
                             nu=tape.norms_u[i], alpha=-tape.alpha_u[i], counter=counter)
        z = tape.hv[-1]
        d_sigma = g[:p] * z[:p]
        if d_sigma.ndim > 1:
            d_sigma = d_sigma.sum(axis=1)
        g_z = np.zeros((W.n,) + g.shape[1:])
        g_z[:p] = tape.sigma[:, None] * g[:p] if g.ndim > 1 else tape.sigma * g[:p]
        d_sigma_hat = sigma_hat_grad(W.sigma, d_sigma)
        if counter is not None:
            B = 1 if g.ndim == 1 else g.shape[1]
            counter.add("sigma", 3 * p * B + 4 * p)
        g = g_z
        dv = {}
        n_v = W.v.size
        for i in range(n_v):
            # slot i was the (n_v - 1 - i)-th reflector applied going forward
            step = n_v - 1 - i
            g, dv[W.v.k_min + i] = hgrad(tape.hv[step], W.v.vectors[i], g, ref_is_output=False,
                                         nu=tape.norms_v[i], alpha=tape.alpha_v[step],
                                         counter=counter)
    return SpectralGrads(dict(sorted(du.items())), dict(sorted(dv.items())),
                         d_sigma, d_sigma_hat, g)


class _null:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


# ------------------------------------------------------------------ RNN


@dataclass
class RnnCell:
    """``h' = act(W h + M x + b)``, ``y = Y h'``.

    ``W`` is a :class:`SpectralMatrix` (Spectral-RNN) or a dense array
    (vanilla RNN). ``mode`` picks how a spectral transition is evaluated:
    ``"local"`` runs the reflector chain at every timestep, ``"materialized"``
    forms ``W`` once per sequence and maps the accumulated dense gradient
    back through the chain once. Both give the same gradients.
    """

    W: object
    M: np.ndarray
    Y: np.ndarray
    b: np.ndarray
    activation: Activation = field(default_factory=Activation)
    mode: str = "local"

    def __post_init__(self):
        self.activation = Activation.parse(self.activation)
        self.M = np.asarray(self.M, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = self.n
        if self.spectral:
            if self.W.m != self.W.n:
                raise ValueError("transition matrix must be square")
        else:
            self.W = np.asarray(self.W, dtype=float)
            if self.W.shape != (n, n):
                raise ValueError("transition matrix must be square")
        if self.M.ndim != 2 or self.M.shape[0] != n:
            raise ValueError(f"M must have {n} rows")
        if self.Y.ndim != 2 or self.Y.shape[1] != n:
            raise ValueError(f"Y must have {n} columns")
        if self.b.shape != (n,):
            raise ValueError(f"b must have length {n}")
        if self.mode not in ("local", "materialized"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def spectral(self) -> bool:
        return isinstance(self.W, SpectralMatrix)

    @property
    def n(self) -> int:
        return self.W.n if isinstance(self.W, SpectralMatrix) else np.shape(self.W)[0]

    @property
    def n_i(self) -> int:
        return self.M.shape[1]

    @property
    def n_y(self) -> int:
        return self.Y.shape[0]

    @classmethod
    def spectral_random(cls, n, n_i, n_y, m1, m2, r=0.01, sigma_star=1.0,
                        activation="leaky_relu", rng=None, mode="local") -> "RnnCell":
        rng = np.random.default_rng(rng)
        W = SpectralMatrix.random(n, n, m1, m2, r, sigma_star, rng)
        M = rng.standard_normal((n, n_i)) / np.sqrt(n_i)
        Y = rng.standard_normal((n_y, n)) / np.sqrt(n)
        return cls(W, M, Y, np.zeros(n), activation, mode)

    @classmethod
    def vanilla_random(cls, n, n_i, n_y, activation="leaky_relu", rng=None,
                       w_scale=1.0) -> "RnnCell":
        """Dense Gaussian transition with entry std ``w_scale / sqrt(n)``."""
        rng = np.random.default_rng(rng)
        W = w_scale * rng.standard_normal((n, n)) / np.sqrt(n)
        M = rng.standard_normal((n, n_i)) / np.sqrt(n_i)
        Y = rng.standard_normal((n_y, n)) / np.sqrt(n)
        return cls(W, M, Y, np.zeros(n), activation)

    def parameters(self) -> dict:
        params = self.W.parameters() if self.spectral else {"W": self.W}
        params.update(M=self.M, Y=self.Y, b=self.b)
        return params

    def num_params(self) -> int:
        return sum(np.size(v) for v in self.parameters().values())

    def transition_matrix(self) -> np.ndarray:
        return materialize(self.W) if self.spectral else self.W

    def copy(self) -> "RnnCell":
        W = self.W.copy()
        return RnnCell(W, self.M.copy(), self.Y.copy(), self.b.copy(), self.activation, self.mode)


@dataclass
class StepTape:
    x: np.ndarray
    h_prev: np.ndarray
    pre: np.ndarray
    h: np.ndarray
    transition: ForwardTape | None = None


def _bias(b, like):
    return b if like.ndim == 1 else b[:, None]


def _ncols(a):
    return 1 if a.ndim == 1 else a.shape[1]


def rnn_step(cell: RnnCell, h_prev, x, counter: FlopCounter | None = None, dense_W=None):
    """One recurrence step; returns ``(h, y_hat, tape)``.

    ``dense_W`` is a pre-materialized transition used by the materialized
    mode (the tape then carries no reflector intermediates).
    """
    h_prev = np.asarray(h_prev, dtype=float)
    x = np.asarray(x, dtype=float)
    if h_prev.shape[0] != cell.n or x.shape[0] != cell.n_i:
        raise ValueError(f"expected h of length {cell.n} and x of length {cell.n_i}, "
                         f"got {h_prev.shape} and {x.shape}")
    trans_tape = None
    if cell.spectral and dense_W is None:
        C, trans_tape = spectral_apply(cell.W, h_prev, counter)
    else:
        Wd = cell.W if dense_W is None else dense_W
        C = Wd @ h_prev
        if counter is not None:
            counter.add("dense_fp", 2 * cell.n * cell.n * _ncols(h_prev))
    pre = C + cell.M @ x + _bias(cell.b, C)
    h = cell.activation(pre)
    y_hat = cell.Y @ h
    if counter is not None:
        B = _ncols(h_prev)
        counter.add("io", (2 * cell.n * cell.n_i + 2 * cell.n + 2 * cell.n_y * cell.n) * B)
    return h, y_hat, StepTape(x, h_prev, pre, h, trans_tape)


def rnn_forward(cell: RnnCell, xs, h0=None, counter: FlopCounter | None = None):
    """Unroll over ``xs`` (shape ``(T, n_i)`` or ``(T, n_i, B)``).

    Returns ``(ys, tapes)`` with ``ys[t]`` the output after consuming
    ``xs[t]``.
    """
    xs = np.asarray(xs, dtype=float)
    shape = (cell.n,) + xs.shape[2:]
    h = np.zeros(shape) if h0 is None else np.asarray(h0, dtype=float)
    dense_W = None
    if cell.spectral and cell.mode == "materialized":
        dense_W = materialize(cell.W)
    ys, tapes = [], []
    for x in xs:
        h, y, tape = rnn_step(cell, h, x, counter, dense_W)
        ys.append(y)
        tapes.append(tape)
    return ys, tapes


def _zeros_like_params(cell: RnnCell) -> dict:
    return {k: np.zeros_like(v) for k, v in cell.parameters().items()}


def rnn_backward_through_time(cell: RnnCell, tapes, loss_grads,
                              counter: FlopCounter | None = None):
    """BPTT over a forward unroll.

    ``loss_grads[t]`` is dL/dy_hat for step ``t`` (``None`` for steps with
    no loss). Shared-weight gradients are summed over timesteps. Returns
    ``(grads, hidden_norms)`` where ``hidden_norms[t]`` is the norm of
    dL/dh^(t) for t = 0..T (h^(0) is the initial state; Frobenius norm
    over the batch).
    """
    if len(tapes) != len(loss_grads):
        raise ValueError(f"{len(tapes)} tapes but {len(loss_grads)} loss gradients")
    grads = _zeros_like_params(cell)
    T = len(tapes)
    norms = np.zeros(T + 1)
    if T == 0:
        return grads, norms
    materialized = cell.spectral and cell.mode == "materialized"
    if materialized:
        dense_W = materialize(cell.W)
        dW = np.zeros((cell.n, cell.n))
    dh_next = np.zeros_like(tapes[-1].h)
    for t in range(T - 1, -1, -1):
        tape = tapes[t]
        dh = dh_next
        dy = loss_grads[t]
        if dy is not None:
            dy = np.asarray(dy, dtype=float)
            dh = dh + cell.Y.T @ dy
            grads["Y"] += np.outer(dy, tape.h) if dy.ndim == 1 else dy @ tape.h.T
        norms[t + 1] = np.linalg.norm(dh)
        dpre = cell.activation.grad(tape.pre, dh)
        if dpre.ndim == 1:
            grads["b"] += dpre
            grads["M"] += np.outer(dpre, tape.x)
        else:
            grads["b"] += dpre.sum(axis=1)
            grads["M"] += dpre @ tape.x.T
        if cell.spectral and not materialized:
            sg = spectral_backward(cell.W, tape.transition, dpre, counter)
            for k, v in sg.as_params().items():
                grads[k] += v
            dh_next = sg.dh
        else:
            Wd = dense_W if materialized else cell.W
            outer = np.outer(dpre, tape.h_prev) if dpre.ndim == 1 else dpre @ tape.h_prev.T
            if materialized:
                dW += outer
            else:
                grads["W"] += outer
            dh_next = Wd.T @ dpre
            if counter is not None:
                counter.add("dense_bp", 4 * cell.n * cell.n * _ncols(dpre))
    norms[0] = np.linalg.norm(dh_next)
    if materialized:
        # W = W I, so dL/dW pulled back through the chain gives the parameter grads
        _, wtape = spectral_apply(cell.W, np.eye(cell.n), counter)
        sg = spectral_backward(cell.W, wtape, dW, counter)
        for k, v in sg.as_params().items():
            grads[k] += v
    return grads, norms


# ------------------------------------------------------------ dense layer


@dataclass
class SpectralDenseLayer:
    """Fully connected layer ``out = act(W h + b)`` with ``W`` spectral (m x n)."""

    W: SpectralMatrix
    b: np.ndarray
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        self.activation = Activation.parse(self.activation)
        self.b = np.asarray(self.b, dtype=float)
        if self.b.shape != (self.W.m,):
            raise ValueError(f"bias must have length {self.W.m}")
        if self.W.m1 > self.W.m or self.W.m2 > self.W.n:
            raise ValueError("too many reflectors for the layer shape")

    @classmethod
    def random(cls, m, n, m1=None, m2=None, r=0.01, sigma_star=1.0,
               activation="leaky_relu", rng=None) -> "SpectralDenseLayer":
        W = SpectralMatrix.random(m, n, m1, m2, r, sigma_star, rng)
        return cls(W, np.zeros(m), activation)

    def parameters(self) -> dict:
        params = self.W.parameters()
        params["b"] = self.b
        return params


@dataclass
class DenseTape:
    pre: np.ndarray
    transition: ForwardTape


def dense_layer_step(layer: SpectralDenseLayer, h, counter: FlopCounter | None = None):
    C, ttape = spectral_apply(layer.W, h, counter)
    pre = C + _bias(layer.b, C)
    return layer.activation(pre), DenseTape(pre, ttape)


def dense_layer_backward(layer: SpectralDenseLayer, tape: DenseTape, g,
                         counter: FlopCounter | None = None):
    """Returns ``(grads, dL/dh)``."""
    g = np.asarray(g, dtype=float)
    if g.shape != tape.pre.shape:
        raise ValueError(f"gradient shape {g.shape} does not match output {tape.pre.shape}")
    dpre = layer.activation.grad(tape.pre, g)
    sg = spectral_backward(layer.W, tape.transition, dpre, counter)
    grads = sg.as_params()
    grads["b"] = dpre if dpre.ndim == 1 else dpre.sum(axis=1)
    return grads, sg.dh
