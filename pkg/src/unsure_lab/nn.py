"""A small fully-connected tanh network with hand-written backpropagation."""
from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class MLP:
    """``g_theta``: tanh hidden layers, linear output.

    With ``residual=True`` the network computes ``y + g_theta(y)`` (needs
    ``n_in == n_out``). ``zero_last`` starts the output layer at zero, which
    makes a residual net start as the identity map. ``pixelwise=True`` ties
    the weights across pixels: one scalar-to-scalar stack is applied to every
    entry of the last axis (a 1x1 convolution).
    """

    def __init__(self, n_in: int, n_out: Optional[int] = None, hidden: Sequence[int] = (64, 64),
                 residual: bool = True, seed: int = 0, zero_last: bool = True, init_scale: float = 1.0,
                 pixelwise: bool = False):
        n_out = n_in if n_out is None else n_out
        if (residual or pixelwise) and n_in != n_out:
            raise ValueError("residual and pixelwise networks need n_in == n_out")
        self.n_in, self.n_out = n_in, n_out
        self.hidden = tuple(hidden)
        self.residual = residual
        self.pixelwise = pixelwise
        rng = np.random.default_rng(seed)
        sizes = ((1,) + self.hidden + (1,)) if pixelwise else ((n_in,) + self.hidden + (n_out,))
        self.params = []
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            if last and zero_last:
                W = np.zeros((a, b))
            else:
                W = init_scale * rng.standard_normal((a, b)) / np.sqrt(a)
            self.params += [W, np.zeros(b)]

    # -- flat parameter vector helpers
    @property
    def size(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, theta: np.ndarray) -> None:
        k = 0
        for p in self.params:
            p[...] = theta[k:k + p.size].reshape(p.shape)
            k += p.size

    @staticmethod
    def flatten(grads) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    # -- forward / backward
    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if self.pixelwise:
            out, acts = self._forward(x[..., None])
            return out[..., 0], acts
        return self._forward(x)

    def _forward(self, x):
        acts = [x]
        h = x
        nl = len(self.params) // 2
        for k in range(nl):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            h = h @ W + b
            if k < nl - 1:
                h = np.tanh(h)
            acts.append(h)
        out = x + h if self.residual else h
        return out, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, dout):
        """Gradients of ``sum(dout * out)`` w.r.t. the parameters and the input."""
        nl = len(self.params) // 2
        grads = [None] * len(self.params)
        d = np.asarray(dout, dtype=float)
        if self.pixelwise:
            d = d[..., None]
        dx_skip = d if self.residual else 0.0
        for k in range(nl - 1, -1, -1):
            W = self.params[2 * k]
            inp = acts[k]
            grads[2 * k] = inp.reshape(-1, inp.shape[-1]).T @ d.reshape(-1, d.shape[-1])
            grads[2 * k + 1] = d.reshape(-1, d.shape[-1]).sum(axis=0)
            d = d @ W.T
            if k > 0:
                d = d * (1.0 - acts[k] ** 2)
        dx = d + dx_skip
        return grads, (dx[..., 0] if self.pixelwise else dx)

    # -- persistence
    def config(self) -> dict:
        return {"n_in": self.n_in, "n_out": self.n_out, "hidden": list(self.hidden), "residual": self.residual,
                "pixelwise": self.pixelwise}

    def save(self, path_stem: str, meta: Optional[dict] = None) -> None:
        """Write ``<stem>.npz`` (weights) and ``<stem>.json`` (architecture and metadata)."""
        np.savez(path_stem + ".npz", version=CHECKPOINT_VERSION, theta=self.get_flat())
        side = {"version": CHECKPOINT_VERSION, "architecture": self.config()}
        side.update(meta or {})
        with open(path_stem + ".json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True, default=_jsonable)

    @classmethod
    def load(cls, path_stem: str) -> tuple["MLP", dict]:
        with open(path_stem + ".json") as fh:
            side = json.load(fh)
        blob = np.load(path_stem + ".npz")
        if int(blob["version"]) != CHECKPOINT_VERSION or side.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        arch = side["architecture"]
        net = cls(arch["n_in"], arch["n_out"], arch["hidden"], arch["residual"],
                  pixelwise=arch.get("pixelwise", False))
        net.set_flat(blob["theta"])
        return net, side


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o)}")


class Adam:
    def __init__(self, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
