"""Minimal neural kernels: peephole LSTM with exact BPTT, dense layers,
gradient checking and a clipped gradient-descent optimizer.

Everything is float64 numpy so finite-difference checks stay tight.
Forward passes never mutate parameters; tapes carry the activations the
backward pass needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes do not line up."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# LSTM

LSTM_PARAM_NAMES = [
    "W_xi", "W_hi", "w_ci", "W_xf", "W_hf", "w_cf",
    "W_xc", "W_hc", "W_xo", "W_ho", "w_co",
    "b_i", "b_f", "b_c", "b_o",
]


@dataclass
class LstmParams:
    """Gate weights for a peephole LSTM.

    Peephole weights w_ci, w_cf, w_co act diagonally on the cell vector and
    are stored as vectors of length hidden_size.
    """

    input_size: int
    hidden_size: int
    W_xi: np.ndarray
    W_hi: np.ndarray
    w_ci: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    w_cf: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @classmethod
    def init(cls, input_size: int, hidden_size: int,
             rng: np.random.Generator) -> "LstmParams":
        scale = 1.0 / np.sqrt(hidden_size)

        def mat(rows, cols):
            return rng.uniform(-scale, scale, size=(rows, cols))

        def vec(size):
            return rng.uniform(-scale, scale, size=size)

        params = cls(
            input_size=input_size, hidden_size=hidden_size,
            W_xi=mat(input_size, hidden_size), W_hi=mat(hidden_size, hidden_size),
            w_ci=vec(hidden_size),
            W_xf=mat(input_size, hidden_size), W_hf=mat(hidden_size, hidden_size),
            w_cf=vec(hidden_size),
            W_xc=mat(input_size, hidden_size), W_hc=mat(hidden_size, hidden_size),
            W_xo=mat(input_size, hidden_size), W_ho=mat(hidden_size, hidden_size),
            w_co=vec(hidden_size),
            b_i=vec(hidden_size), b_f=vec(hidden_size) + 1.0,
            b_c=vec(hidden_size), b_o=vec(hidden_size),
        )
        return params

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        z = lambda *shape: np.zeros(shape)
        return cls(
            input_size=input_size, hidden_size=hidden_size,
            W_xi=z(input_size, hidden_size), W_hi=z(hidden_size, hidden_size),
            w_ci=z(hidden_size),
            W_xf=z(input_size, hidden_size), W_hf=z(hidden_size, hidden_size),
            w_cf=z(hidden_size),
            W_xc=z(input_size, hidden_size), W_hc=z(hidden_size, hidden_size),
            W_xo=z(input_size, hidden_size), W_ho=z(hidden_size, hidden_size),
            w_co=z(hidden_size),
            b_i=z(hidden_size), b_f=z(hidden_size), b_c=z(hidden_size),
            b_o=z(hidden_size),
        )

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in LSTM_PARAM_NAMES]

    def set_arrays(self, arrays: list[np.ndarray]):
        for name, arr in zip(LSTM_PARAM_NAMES, arrays):
            setattr(self, name, arr)

    def copy(self) -> "LstmParams":
        clone = LstmParams.zeros(self.input_size, self.hidden_size)
        clone.set_arrays([a.copy() for a in self.arrays()])
        return clone


@dataclass
class LstmTape:
    """Per-step activations cached by the forward pass for BPTT."""

    xs: np.ndarray  # (N, B, input)
    i: list[np.ndarray]
    f: list[np.ndarray]
    g: list[np.ndarray]  # cell candidate tanh(...)
    o: list[np.ndarray]
    c: list[np.ndarray]  # c_1..c_N
    h: list[np.ndarray]
    c0: np.ndarray
    h0: np.ndarray


def lstm_forward(params: LstmParams, xs: np.ndarray,
                 h0: np.ndarray | None = None,
                 c0: np.ndarray | None = None):
    """Run the gate recurrences over a sequence.

    xs has shape (N, input) or (N, B, input). Returns (hs, tape) with hs the
    per-step hidden states in the matching shape.
    """
    xs = np.asarray(xs, dtype=float)
    squeeze = xs.ndim == 2
    if squeeze:
        xs = xs[:, None, :]
    if xs.ndim != 3:
        raise ShapeError("input sequence must be (N, input) or (N, B, input)")
    n_steps, batch, input_size = xs.shape
    if n_steps == 0:
        raise ShapeError("input sequence is empty")
    if input_size != params.input_size:
        raise ShapeError(f"input size {input_size} != params input_size "
                         f"{params.input_size}")
    hidden = params.hidden_size
    h = np.zeros((batch, hidden)) if h0 is None else np.asarray(h0, dtype=float)
    c = np.zeros((batch, hidden)) if c0 is None else np.asarray(c0, dtype=float)
    tape = LstmTape(xs=xs, i=[], f=[], g=[], o=[], c=[], h=[], c0=c.copy(),
                    h0=h.copy())
    for t in range(n_steps):
        x = xs[t]
        i = sigmoid(x @ params.W_xi + h @ params.W_hi + c * params.w_ci + params.b_i)
        f = sigmoid(x @ params.W_xf + h @ params.W_hf + c * params.w_cf + params.b_f)
        g = np.tanh(x @ params.W_xc + h @ params.W_hc + params.b_c)
        c = f * c + i * g
        o = sigmoid(x @ params.W_xo + h @ params.W_ho + c * params.w_co + params.b_o)
        h = o * np.tanh(c)
        tape.i.append(i)
        tape.f.append(f)
        tape.g.append(g)
        tape.o.append(o)
        tape.c.append(c)
        tape.h.append(h)
    hs = np.stack(tape.h)
    if squeeze:
        hs = hs[:, 0, :]
    return hs, tape


def lstm_backward(params: LstmParams, tape: LstmTape, dh_out: np.ndarray):
    """Exact BPTT through the tape.

    dh_out holds dLoss/dh_t per step, shaped like the forward hs output
    ((N, hidden) or (N, B, hidden)). Returns (grads, dx) where grads is an
    LstmParams of gradients and dx matches the input sequence shape.
    """
    dh_out = np.asarray(dh_out, dtype=float)
    squeeze = dh_out.ndim == 2
    if squeeze:
        dh_out = dh_out[:, None, :]
    n_steps, batch, _ = tape.xs.shape
    if dh_out.shape != (n_steps, batch, params.hidden_size):
        raise ShapeError("output gradient shape does not match the tape")
    grads = LstmParams.zeros(params.input_size, params.hidden_size)
    dx = np.zeros_like(tape.xs)
    dh_rec = np.zeros((batch, params.hidden_size))
    dc_rec = np.zeros((batch, params.hidden_size))
    for t in range(n_steps - 1, -1, -1):
        x = tape.xs[t]
        i, f, g, o = tape.i[t], tape.f[t], tape.g[t], tape.o[t]
        c = tape.c[t]
        c_prev = tape.c[t - 1] if t > 0 else tape.c0
        h_prev = tape.h[t - 1] if t > 0 else tape.h0
        tanh_c = np.tanh(c)
        dh = dh_out[t] + dh_rec
        da_o = dh * tanh_c * o * (1 - o)
        dc = dh * o * (1 - tanh_c ** 2) + dc_rec + da_o * params.w_co
        da_i = dc * g * i * (1 - i)
        da_f = dc * c_prev * f * (1 - f)
        da_g = dc * i * (1 - g ** 2)
        grads.W_xi += x.T @ da_i
        grads.W_hi += h_prev.T @ da_i
        grads.w_ci += (da_i * c_prev).sum(axis=0)
        grads.b_i += da_i.sum(axis=0)
        grads.W_xf += x.T @ da_f
        grads.W_hf += h_prev.T @ da_f
        grads.w_cf += (da_f * c_prev).sum(axis=0)
        grads.b_f += da_f.sum(axis=0)
        grads.W_xc += x.T @ da_g
        grads.W_hc += h_prev.T @ da_g
        grads.b_c += da_g.sum(axis=0)
        grads.W_xo += x.T @ da_o
        grads.W_ho += h_prev.T @ da_o
        grads.w_co += (da_o * c).sum(axis=0)
        grads.b_o += da_o.sum(axis=0)
        dx[t] = (da_i @ params.W_xi.T + da_f @ params.W_xf.T
                 + da_g @ params.W_xc.T + da_o @ params.W_xo.T)
        dh_rec = (da_i @ params.W_hi.T + da_f @ params.W_hf.T
                  + da_g @ params.W_hc.T + da_o @ params.W_ho.T)
        dc_rec = dc * f + da_i * params.w_ci + da_f * params.w_cf
    if squeeze:
        dx = dx[:, 0, :]
    return grads, dx


# ---------------------------------------------------------------------------
# Dense layers

_ACTIVATIONS = {
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z, a: 1 - a ** 2),
}


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    @classmethod
    def init(cls, sizes: list[int], activations: list[str],
             rng: np.random.Generator) -> "MlpParams":
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need one activation per layer")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, activations=list(activations))

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def set_arrays(self, arrays: list[np.ndarray]):
        k = len(self.weights)
        self.weights = list(arrays[:k])
        self.biases = list(arrays[k:])

    def copy(self) -> "MlpParams":
        return MlpParams(weights=[w.copy() for w in self.weights],
                         biases=[b.copy() for b in self.biases],
                         activations=list(self.activations))


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Forward through the dense stack. x is (B, in) or (in,)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    pre, post = [], [x]
    out = x
    for W, b, act in zip(params.weights, params.biases, params.activations):
        if out.shape[1] != W.shape[0]:
            raise ShapeError(f"layer input {out.shape[1]} != weight rows {W.shape[0]}")
        z = out @ W + b
        out = _ACTIVATIONS[act][0](z)
        pre.append(z)
        post.append(out)
    tape = (pre, post)
    if squeeze:
        return out[0], tape
    return out, tape


def mlp_backward(params: MlpParams, tape, dout: np.ndarray):
    """Returns (grads, dx) for the forward tape."""
    pre, post = tape
    dout = np.asarray(dout, dtype=float)
    squeeze = dout.ndim == 1
    if squeeze:
        dout = dout[None, :]
    grads = MlpParams(weights=[np.zeros_like(w) for w in params.weights],
                      biases=[np.zeros_like(b) for b in params.biases],
                      activations=list(params.activations))
    d = dout
    for layer in range(len(params.weights) - 1, -1, -1):
        act = params.activations[layer]
        dz = d * _ACTIVATIONS[act][1](pre[layer], post[layer + 1])
        grads.weights[layer] = post[layer].T @ dz
        grads.biases[layer] = dz.sum(axis=0)
        d = dz @ params.weights[layer].T
    if squeeze:
        d = d[0]
    return grads, d


# ---------------------------------------------------------------------------
# Gradient checking and optimization

def grad_check(loss_fn, params: list[np.ndarray],
               analytic: list[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_fn() must recompute the loss from the (mutated) parameter arrays.
    The relative-error denominator is max(|a|, |fd|, 1e-8).
    """
    base = loss_fn()
    if not np.isfinite(base):
        raise ValueError("loss is not finite")
    worst = 0.0
    for arr, grad in zip(params, analytic):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn()
            flat[idx] = orig - eps
            down = loss_fn()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            denom = max(abs(gflat[idx]), abs(fd), 1e-8)
            worst = max(worst, abs(gflat[idx] - fd) / denom)
    return worst


@dataclass
class OptimizerConfig:
    step_size: float = 0.01
    clip_norm: float = 0.0  # 0 disables clipping


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g ** 2)) for g in grads)))


def optimizer_step(params: list[np.ndarray], grads: list[np.ndarray],
                   config: OptimizerConfig) -> list[np.ndarray]:
    """In-place gradient descent with optional global-norm clipping."""
    if len(params) != len(grads):
        raise ShapeError("params/grads length mismatch")
    scale = 1.0
    if config.clip_norm > 0:
        norm = global_norm(grads)
        if norm > config.clip_norm:
            scale = config.clip_norm / norm
    for p, g in zip(params, grads):
        if p.shape != np.asarray(g).shape:
            raise ShapeError("params/grads shape mismatch")
        p -= config.step_size * scale * np.asarray(g)
    return params


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, named_arrays: dict[str, np.ndarray],
                    meta: dict | None = None):
    doc = {"version": CHECKPOINT_VERSION, "meta": meta or {}, "arrays": {}}
    for name, arr in named_arrays.items():
        arr = np.asarray(arr, dtype=float)
        doc["arrays"][name] = {"shape": list(arr.shape),
                               "data": arr.reshape(-1).tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    arrays = {}
    for name, entry in doc["arrays"].items():
        arrays[name] = np.array(entry["data"], dtype=float).reshape(entry["shape"])
    return arrays, doc.get("meta", {})
