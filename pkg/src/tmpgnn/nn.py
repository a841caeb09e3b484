"""Neural network layers, the Adam optimizer and binary checkpoints."""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .autograd import Tensor, concat, matmul, parameter, sigmoid, stack, tanh
from .validation import check_random_state


class Module:
    """Base class; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = check_random_state(rng)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = parameter(_uniform(rng, in_features, (in_features, out_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class GRUCell(Module):
    """Gated recurrent unit.

    ``z = sigmoid(x Wz + h Uz + bz)``, ``r = sigmoid(x Wr + h Ur + br)``,
    ``c = tanh(x Wh + (r*h) Uh + bh)``, ``h' = (1 - z) * h + z * c``.
    The three gate matrices are stored side by side as ``W`` (in, 3H) and
    ``U`` (H, 3H), in the order update, reset, candidate.
    """

    def __init__(self, input_size, hidden_size, rng=None):
        rng = check_random_state(rng)
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.W = parameter(_uniform(rng, input_size, (input_size, 3 * H)))
        self.U = parameter(_uniform(rng, H, (H, 3 * H)))
        self.b = parameter(np.zeros(3 * H))

    def _check(self, x, h):
        if x.shape[-1] != self.input_size:
            raise ValueError(f"input width {x.shape[-1]} != {self.input_size}")
        if h.shape[-1] != self.hidden_size:
            raise ValueError(f"hidden width {h.shape[-1]} != {self.hidden_size}")

    def forward(self, x, h):
        self._check(x, h)
        return self.step(x @ self.W + self.b, h, self.U[:, : 2 * self.hidden_size],
                         self.U[:, 2 * self.hidden_size:])

    def step(self, xw, h, U_zr, U_h):
        """One update from a precomputed input projection ``x @ W + b``."""
        H = self.hidden_size
        zr = sigmoid(xw[..., : 2 * H] + h @ U_zr)
        z, r = zr[..., :H], zr[..., H:]
        cand = tanh(xw[..., 2 * H:] + (r * h) @ U_h)
        return h + z * (cand - h)

    def run(self, xs, h0=None, reverse=False):
        """Hidden states for a (T, B, in) input; returned in time order."""
        if xs.ndim != 3:
            raise ValueError("expected input of shape (T, B, in)")
        T, B, _ = xs.shape
        if T == 0:
            raise ValueError("empty sequence")
        h = Tensor(np.zeros((B, self.hidden_size))) if h0 is None else h0
        self._check(xs, h)
        xw = xs @ self.W + self.b
        U_zr = self.U[:, : 2 * self.hidden_size]
        U_h = self.U[:, 2 * self.hidden_size:]
        steps = range(T - 1, -1, -1) if reverse else range(T)
        out = [None] * T
        for t in steps:
            h = self.step(xw[t], h, U_zr, U_h)
            out[t] = h
        return out


class BiGRU(Module):
    """Forward and backward GRU over one sequence; outputs are concatenated per step."""

    def __init__(self, input_size, hidden_size, rng=None):
        rng = check_random_state(rng)
        self.hidden_size = hidden_size
        self.fwd = GRUCell(input_size, hidden_size, rng)
        self.bwd = GRUCell(input_size, hidden_size, rng)

    def forward(self, xs):
        """``xs`` of shape (T, B, in) -> tensor of shape (T, B, 2H)."""
        hf = self.fwd.run(xs)
        hb = self.bwd.run(xs, reverse=True)
        return stack([concat([f, b], axis=-1) for f, b in zip(hf, hb)], axis=0)


def bigru(xs, fwd, bwd):
    """Functional form: run ``fwd`` left to right and ``bwd`` right to left."""
    hf = fwd.run(xs)
    hb = bwd.run(xs, reverse=True)
    return [concat([f, b], axis=-1) for f, b in zip(hf, hb)]


# --------------------------------------------------------------------------
# optimizer


def optimizer_step(params, grads, state, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns the new parameter arrays.

    ``state`` is a dict updated in place with keys ``t``, ``m`` and ``v``;
    an empty dict starts from zero moments. ``params`` and ``grads`` map
    names to arrays.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    if not state:
        state.update(t=0, m={k: np.zeros_like(v) for k, v in params.items()},
                     v={k: np.zeros_like(v) for k, v in params.items()})
    state["t"] += 1
    t = state["t"]
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        m = state["m"][name] = beta1 * state["m"][name] + (1 - beta1) * g
        v = state["v"][name] = beta2 * state["v"][name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


class Adam:
    def __init__(self, named_params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = OrderedDict(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        values = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        new = optimizer_step(values, grads, self.state, self.lr, self.betas[0],
                             self.betas[1], self.eps)
        for k, p in self.params.items():
            p.data = new[k]


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"TMPG"
VERSION = 1


def save_checkpoint(path, state):
    """Write named float64 arrays: header (magic, version, count), then
    per tensor name, shape and little-endian payload."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(state)))
        for name, arr in state.items():
            arr = np.asarray(arr, dtype="<f8")
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    out = OrderedDict()
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (klen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(klen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    return out
