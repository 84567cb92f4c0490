"""Hand-rolled differentiable blocks: dense, LSTM, autoencoder, Adam.

No autodiff framework: every backward pass is derived by hand and checked
against central finite differences (see grad_check). Parameters live in plain
numpy arrays; containers expose them as name->array dicts so the optimizer and
checkpoint code stay generic. 64-bit floats are the default (and required for
gradient checking); 32-bit is an option for speed.

Tensors are numpy ndarrays throughout. check_finite guards module boundaries
where garbage could silently propagate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ShapeMismatch


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains NaN or Inf")
    return x


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (saturates cleanly at 0 and 1)."""
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# activation -> (f, df-in-terms-of-output)
ACTIVATIONS = {
    "linear": (lambda x: x, lambda y: np.ones_like(y)),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (sigmoid, lambda y: y * (1.0 - y)),
    "relu": (lambda x: np.maximum(0.0, x), lambda y: (y > 0).astype(y.dtype)),
}


# ---- dense layer ---------------------------------------------------------------


@dataclass
class DenseParams:
    w: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)
    activation: str = "linear"

    def arrays(self) -> dict:
        return {"w": self.w, "b": self.b}

    def with_arrays(self, d: dict) -> "DenseParams":
        return DenseParams(d["w"], d["b"], self.activation)


def dense_init(rng: np.random.Generator, n_in: int, n_out: int,
               activation: str = "linear", dtype=np.float64) -> DenseParams:
    """Xavier-uniform weights, zero bias."""
    limit = math.sqrt(6.0 / (n_in + n_out))
    w = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
    return DenseParams(w, np.zeros(n_out, dtype=dtype), activation)


def dense_forward(params: DenseParams, x: np.ndarray) -> np.ndarray:
    """y = activation(x @ w + b); x is (batch, in) or (in,)."""
    if x.shape[-1] != params.w.shape[0]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != {params.w.shape[0]}")
    act, _ = ACTIVATIONS[params.activation]
    return act(x @ params.w + params.b)


def dense_backward(params: DenseParams, x: np.ndarray, upstream: np.ndarray,
                   y: Optional[np.ndarray] = None):
    """Gradients of a scalar loss given dL/dy; returns ({w, b}, dL/dx).

    Pass y to reuse an already-computed forward output."""
    if y is None:
        y = dense_forward(params, x)
    if upstream.shape != y.shape:
        raise ShapeMismatch(f"upstream {upstream.shape} != output {y.shape}")
    _, dact = ACTIVATIONS[params.activation]
    da = upstream * dact(y)
    x2 = x.reshape(-1, x.shape[-1])
    da2 = da.reshape(-1, da.shape[-1])
    grads = {"w": x2.T @ da2, "b": da2.sum(axis=0)}
    return grads, da @ params.w.T


# ---- LSTM ----------------------------------------------------------------------

GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """Canonical four-gate cell: i,f,o = sigmoid(xW + hU + b), g = tanh(xW + hU + b),
    c' = f*c + i*g, h' = o*tanh(c'). No peepholes, no normalization."""

    w_i: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_g: np.ndarray
    u_i: np.ndarray
    u_f: np.ndarray
    u_o: np.ndarray
    u_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @property
    def input_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[1]

    def arrays(self) -> dict:
        return {f"{kind}_{g}": getattr(self, f"{kind}_{g}")
                for kind in ("w", "u", "b") for g in GATES}

    def with_arrays(self, d: dict) -> "LstmParams":
        return LstmParams(**{k: d[k] for k in self.arrays()})


def lstm_init(rng: np.random.Generator, input_size: int, hidden_size: int,
              dtype=np.float64) -> LstmParams:
    """uniform(-k, k) with k = 1/sqrt(hidden); forget bias starts at 1 so early
    training does not erase the cell state."""
    k = 1.0 / math.sqrt(hidden_size)

    def u(shape):
        return rng.uniform(-k, k, size=shape).astype(dtype)

    params = {}
    for g in GATES:
        params[f"w_{g}"] = u((input_size, hidden_size))
        params[f"u_{g}"] = u((hidden_size, hidden_size))
        params[f"b_{g}"] = np.zeros(hidden_size, dtype=dtype)
    params["b_f"] = np.ones(hidden_size, dtype=dtype)
    return LstmParams(**params)


class LstmForward(NamedTuple):
    hidden_seq: np.ndarray  # (B, T, H) or (T, H) matching input
    final_h: np.ndarray
    final_c: np.ndarray
    cache: dict


def _packed(params: LstmParams):
    """Gate blocks concatenated to (D, 4H), (H, 4H), (4H,) in i,f,o,g order."""
    w = np.concatenate([params.w_i, params.w_f, params.w_o, params.w_g], axis=1)
    u = np.concatenate([params.u_i, params.u_f, params.u_o, params.u_g], axis=1)
    b = np.concatenate([params.b_i, params.b_f, params.b_o, params.b_g])
    return w, u, b


def lstm_forward(params: LstmParams, seq: np.ndarray,
                 h0: Optional[np.ndarray] = None,
                 c0: Optional[np.ndarray] = None) -> LstmForward:
    """Run the recurrence over seq of shape (T, input) or (B, T, input)."""
    squeeze = seq.ndim == 2
    x = seq[None] if squeeze else seq
    if x.ndim != 3 or x.shape[-1] != params.input_size:
        raise ShapeMismatch(f"seq shape {seq.shape} incompatible with input_size "
                            f"{params.input_size}")
    if x.shape[1] == 0:
        raise ShapeMismatch("empty sequence")
    bsz, steps, _ = x.shape
    hidden = params.hidden_size
    h = np.zeros((bsz, hidden), dtype=x.dtype) if h0 is None else np.broadcast_to(
        h0, (bsz, hidden)).copy()
    c = np.zeros((bsz, hidden), dtype=x.dtype) if c0 is None else np.broadcast_to(
        c0, (bsz, hidden)).copy()
    if h.shape != (bsz, hidden) or c.shape != (bsz, hidden):
        raise ShapeMismatch("h0/c0 shape mismatch")

    w_all, u_all, b_all = _packed(params)
    # Input projections for every step in one matmul; only the hidden-state
    # projection stays inside the sequential loop.
    xproj = (x.reshape(bsz * steps, -1) @ w_all + b_all).reshape(bsz, steps, 4 * hidden)
    hs = np.empty((bsz, steps, hidden), dtype=x.dtype)
    cache = {"sig": np.empty((bsz, steps, 3 * hidden), dtype=x.dtype)}
    cache.update({k: np.empty((bsz, steps, hidden), dtype=x.dtype)
                  for k in ("g", "tc", "h_prev", "c_prev")})
    for t in range(steps):
        a = xproj[:, t] + h @ u_all
        sig = sigmoid(a[:, :3 * hidden])  # i, f, o gates side by side
        gg = np.tanh(a[:, 3 * hidden:])
        gi, gf, go = (sig[:, n * hidden:(n + 1) * hidden] for n in range(3))
        cache["h_prev"][:, t] = h
        cache["c_prev"][:, t] = c
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        cache["sig"][:, t] = sig
        cache["g"][:, t] = gg
        cache["tc"][:, t] = tc
        hs[:, t] = h
    if squeeze:
        return LstmForward(hs[0], h[0], c[0], cache)
    return LstmForward(hs, h, c, cache)


def lstm_backward(params: LstmParams, seq: np.ndarray, fwd: LstmForward,
                  upstream_hidden: np.ndarray):
    """Backpropagation through time.

    upstream_hidden is dL/dh_t for every step, shaped like fwd.hidden_seq.
    Returns (param_grads dict for the 12 blocks, dL/dseq).
    """
    squeeze = seq.ndim == 2
    x = seq[None] if squeeze else seq
    up = upstream_hidden[None] if squeeze else upstream_hidden
    bsz, steps, _ = x.shape
    hidden = params.hidden_size
    if up.shape != (bsz, steps, hidden):
        raise ShapeMismatch(f"upstream shape {upstream_hidden.shape} != hidden sequence")
    cache = fwd.cache
    w_all, u_all, _ = _packed(params)
    # Sequential part: pre-activation gradients per step. Parameter and input
    # gradients fall out of batched matmuls over all steps afterwards.
    da_all = np.empty((bsz, steps, 4 * hidden), dtype=x.dtype)
    dh_next = np.zeros((bsz, hidden), dtype=x.dtype)
    dc_next = np.zeros_like(dh_next)
    for t in range(steps - 1, -1, -1):
        sig = cache["sig"][:, t]
        gi, gf, go = (sig[:, n * hidden:(n + 1) * hidden] for n in range(3))
        gg, tc, c_prev = cache["g"][:, t], cache["tc"][:, t], cache["c_prev"][:, t]
        dh = up[:, t] + dh_next
        dc = dh * go * (1.0 - tc * tc) + dc_next
        dsig = sig * (1.0 - sig)
        da_t = da_all[:, t]
        da_t[:, :hidden] = dc * gg * dsig[:, :hidden]
        da_t[:, hidden:2 * hidden] = dc * c_prev * dsig[:, hidden:2 * hidden]
        da_t[:, 2 * hidden:3 * hidden] = dh * tc * dsig[:, 2 * hidden:]
        da_t[:, 3 * hidden:] = dc * gi * (1.0 - gg * gg)
        dh_next = da_t @ u_all.T
        dc_next = dc * gf
    da2 = da_all.reshape(bsz * steps, 4 * hidden)
    dw_all = x.reshape(bsz * steps, -1).T @ da2
    du_all = cache["h_prev"].reshape(bsz * steps, hidden).T @ da2
    db_all = da2.sum(axis=0)
    dx = (da2 @ w_all.T).reshape(x.shape)
    grads = {}
    for n, g in enumerate(GATES):
        block = slice(n * hidden, (n + 1) * hidden)
        grads[f"w_{g}"] = dw_all[:, block]
        grads[f"u_{g}"] = du_all[:, block]
        grads[f"b_{g}"] = db_all[block]
    return grads, dx[0] if squeeze else dx


# ---- autoencoder ---------------------------------------------------------------


@dataclass
class AutoencoderParams:
    """Mirrored dense stacks; `activation` applies everywhere except the
    decoder's output layer, which stays linear so reconstructions are unbounded."""

    encoder: list
    decoder: list
    activation: str = "tanh"

    @property
    def latent_size(self) -> int:
        return self.encoder[-1].w.shape[1]

    @property
    def input_size(self) -> int:
        return self.encoder[0].w.shape[0]

    def arrays(self) -> dict:
        out = {}
        for tag, stack in (("enc", self.encoder), ("dec", self.decoder)):
            for k, layer in enumerate(stack):
                out[f"{tag}{k}.w"] = layer.w
                out[f"{tag}{k}.b"] = layer.b
        return out

    def with_arrays(self, d: dict) -> "AutoencoderParams":
        enc = [DenseParams(d[f"enc{k}.w"], d[f"enc{k}.b"], layer.activation)
               for k, layer in enumerate(self.encoder)]
        dec = [DenseParams(d[f"dec{k}.w"], d[f"dec{k}.b"], layer.activation)
               for k, layer in enumerate(self.decoder)]
        return AutoencoderParams(enc, dec, self.activation)


def autoencoder_init(rng: np.random.Generator, sizes: Sequence[int],
                     activation: str = "tanh", dtype=np.float64) -> AutoencoderParams:
    """sizes runs input -> ... -> latent; the decoder mirrors it back."""
    if len(sizes) < 2:
        raise ShapeMismatch(f"need at least (input, latent), got {sizes}")
    if activation not in ACTIVATIONS:
        raise ShapeMismatch(f"unknown activation {activation!r}")
    enc = [dense_init(rng, a, b, activation, dtype) for a, b in zip(sizes, sizes[1:])]
    mirror = list(reversed(sizes))
    dec = [dense_init(rng, a, b, activation, dtype) for a, b in zip(mirror, mirror[1:])]
    dec[-1] = replace(dec[-1], activation="linear")
    return AutoencoderParams(enc, dec, activation)


class AeForward(NamedTuple):
    reconstruction: np.ndarray
    latent: np.ndarray
    cache: list  # input to each layer, encoder then decoder


def autoencoder_forward(params: AutoencoderParams, x: np.ndarray) -> AeForward:
    cache = []
    h = x
    for layer in params.encoder:
        cache.append(h)
        h = dense_forward(layer, h)
    latent = h
    for layer in params.decoder:
        cache.append(h)
        h = dense_forward(layer, h)
    return AeForward(h, latent, cache)


def autoencoder_backward(params: AutoencoderParams, x: np.ndarray,
                         fwd: AeForward) -> dict:
    """Gradients of the mean-squared reconstruction loss w.r.t. all layers."""
    upstream = mse_grad(fwd.reconstruction, x)
    layers = list(params.encoder) + list(params.decoder)
    tags = [f"enc{k}" for k in range(len(params.encoder))] + \
           [f"dec{k}" for k in range(len(params.decoder))]
    outputs = list(fwd.cache[1:]) + [fwd.reconstruction]
    grads = {}
    for layer, tag, inp, out in zip(reversed(layers), reversed(tags),
                                    reversed(fwd.cache), reversed(outputs)):
        layer_grads, upstream = dense_backward(layer, inp, upstream, y=out)
        grads[f"{tag}.w"] = layer_grads["w"]
        grads[f"{tag}.b"] = layer_grads["b"]
    return grads


def encode(params: AutoencoderParams, x: np.ndarray) -> np.ndarray:
    h = x
    for layer in params.encoder:
        h = dense_forward(layer, h)
    return h


# ---- loss ----------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} != target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} != target {target.shape}")
    return 2.0 * (pred - target) / pred.size


# ---- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: dict
    v: dict


def adam_init(params: dict, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr, beta1, beta2, eps, 0,
                     {k: np.zeros_like(p) for k, p in params.items()},
                     {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict, grads: dict):
    """One bias-corrected update; returns (new_params, new_state), inputs untouched."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatch("parameter/gradient/state key sets differ")
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{k}: grad {g.shape} != param {p.shape}")
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new_p[k] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, replace(state, step=t, m=new_m, v=new_v)


# ---- gradient verification -------------------------------------------------------


GRAD_CHECK_FLOOR = 1e-4  # relative-error denominator floor; keeps finite-difference
# round-off on near-zero gradients from registering as failures


def grad_check(loss_fn: Callable[[dict], float], params: dict, analytic: dict,
               eps: float = 1e-5, max_coords: int = 10_000, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    Checks every parameter coordinate, or a seeded subsample when the model
    exceeds max_coords coordinates. Relative error uses
    |fd - analytic| / max(GRAD_CHECK_FLOOR, |fd| + |analytic|).
    """
    coords = [(k, idx) for k, p in sorted(params.items()) for idx in range(p.size)]
    if not coords:
        return 0.0
    if len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords,
                                                  replace=False)
        coords = [coords[int(j)] for j in pick]
    work = {k: p.copy() for k, p in params.items()}
    worst = 0.0
    for key, idx in coords:
        flat = work[key].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        hi = loss_fn(work)
        flat[idx] = orig - eps
        lo = loss_fn(work)
        flat[idx] = orig
        fd = (hi - lo) / (2.0 * eps)
        an = float(analytic[key].reshape(-1)[idx])
        err = abs(fd - an) / max(GRAD_CHECK_FLOOR, abs(fd) + abs(an))
        worst = max(worst, err)
    return worst
