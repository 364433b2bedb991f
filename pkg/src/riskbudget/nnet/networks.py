"""Recurrent actor and critic networks.

All three networks share one layout: a stack of GRU layers reads the state
sequence, and at time t a feed-forward head sees the hidden states of every
layer after y_0..y_{t-1} (zeros at t = 0) next to the current state y_t.
The heads differ only in their output transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

HEADS = ("softplus-positive", "sigmoid-unit", "linear", "risk-triple")


@dataclass
class NetParams:
    """Architecture plus a flat parameter vector with named views.

    ``input_shift`` / ``input_scale`` are a fixed affine normalization of
    the raw state; ``output_scale`` multiplies the softplus head. ``z_dim``
    is 1 for the cdf critic, which also receives the loss level z.
    """

    input_dim: int
    output_dim: int
    output_head: str
    gru_layers: int = 5
    gru_hidden: int = 2
    ffn_layers: int = 5
    ffn_width: int = 32
    z_dim: int = 0
    eps: float = 1e-6
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    z_shift: float = 0.0
    z_scale: float = 1.0
    output_scale: np.ndarray | None = None
    values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")
        for name in ("input_dim", "output_dim", "gru_layers", "gru_hidden", "ffn_layers", "ffn_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.output_head == "risk-triple" and self.output_dim != 3:
            raise ValueError("the risk-triple head has exactly three outputs")
        self.input_shift = np.zeros(self.input_dim) if self.input_shift is None else np.asarray(self.input_shift, float)
        self.input_scale = np.ones(self.input_dim) if self.input_scale is None else np.asarray(self.input_scale, float)
        self.output_scale = np.ones(self.output_dim) if self.output_scale is None else np.asarray(self.output_scale, float)
        self.layout = self._layout()
        size = sum(int(np.prod(s)) for _, s in self.layout)
        if self.values is None:
            self.values = np.zeros(size)
        else:
            self.values = np.asarray(self.values, dtype=float).copy()
            if self.values.size != size:
                raise ValueError(f"parameter vector has {self.values.size} entries, architecture needs {size}")

    def _layout(self):
        H = self.gru_hidden
        out = []
        d = self.input_dim
        for k in range(self.gru_layers):
            out += [(f"gru{k}.w_in", (d, 3 * H)), (f"gru{k}.w_hid", (H, 3 * H)),
                    (f"gru{k}.b_in", (3 * H,)), (f"gru{k}.b_hid", (3 * H,))]
            d = H
        d = self.gru_layers * H + self.input_dim
        for k in range(self.ffn_layers):
            out += [(f"ffn{k}.w", (d, self.ffn_width)), (f"ffn{k}.b", (self.ffn_width,))]
            if k == 0 and self.z_dim:
                out.append(("ffn0.w_z", (self.z_dim, self.ffn_width)))
            d = self.ffn_width
        out += [("head.w", (d, self.output_dim)), ("head.b", (self.output_dim,))]
        return out

    @property
    def n_params(self) -> int:
        return self.values.size

    def views(self) -> dict:
        """Name -> array view into the flat parameter vector."""
        out, off = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = self.values[off:off + size].reshape(shape)
            off += size
        return out

    def slices(self) -> dict:
        out, off = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = slice(off, off + size)
            off += size
        return out

    def init(self, rng: np.random.Generator, head_gain: float = 1.0) -> "NetParams":
        """Uniform fan-in initialization; the output layer is scaled by ``head_gain``."""
        for name, view in self.views().items():
            if name.startswith("gru"):
                bound = 1.0 / np.sqrt(self.gru_hidden)
            elif name == "ffn0.w_z":
                bound = 1.0 / np.sqrt(self.layout_fan_in("ffn0.w"))
            else:
                bound = 1.0 / np.sqrt(self.layout_fan_in(name))
            view[...] = rng.uniform(-bound, bound, view.shape)
            if name.startswith("head"):
                view *= head_gain
        return self

    def layout_fan_in(self, name: str) -> int:
        layer = name.split(".")[0]
        shape = dict(self.layout)[f"{layer}.w"]
        return shape[0]

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim, "output_dim": self.output_dim, "output_head": self.output_head,
            "gru_layers": self.gru_layers, "gru_hidden": self.gru_hidden, "ffn_layers": self.ffn_layers,
            "ffn_width": self.ffn_width, "z_dim": self.z_dim, "eps": self.eps,
            "input_shift": self.input_shift.tolist(), "input_scale": self.input_scale.tolist(),
            "z_shift": self.z_shift, "z_scale": self.z_scale, "output_scale": self.output_scale.tolist(),
        }

    @classmethod
    def from_architecture(cls, arch: dict, values=None) -> "NetParams":
        return cls(**arch, values=values)

    def copy(self) -> "NetParams":
        return NetParams.from_architecture(self.architecture(), self.values)

    # -- forward pieces ----------------------------------------------------------

    def leaves(self) -> dict:
        """Fresh gradient-tracking tensors over the current parameter values."""
        return {name: ad.Tensor(v, requires_grad=True) for name, v in self.views().items()}

    def constants(self) -> dict:
        return {name: ad.Tensor(v) for name, v in self.views().items()}

    def gradient(self, leaves: dict) -> np.ndarray:
        """Flat gradient from leaves after a backward pass; untouched entries are zero."""
        grad = np.zeros_like(self.values)
        for name, sl in self.slices().items():
            g = leaves[name].grad
            if g is not None:
                grad[sl] = g.ravel()
        return grad

    def normalize(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=float) - self.input_shift) / self.input_scale


def _check(t: ad.Tensor, where: str):
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in forward pass at layer {where}")
    return t


def gru_step(net: NetParams, p: dict, hidden: list, y: ad.Tensor) -> list:
    """Advance every GRU layer by one input; returns the new hidden list."""
    out, x = [], y
    for k in range(net.gru_layers):
        h = ad.gru_cell(x, hidden[k], p[f"gru{k}.w_in"], p[f"gru{k}.w_hid"], p[f"gru{k}.b_in"], p[f"gru{k}.b_hid"])
        out.append(_check(h, f"gru{k}"))
        x = h
    return out


def hidden_sequence(net: NetParams, p: dict, ys: ad.Tensor) -> ad.Tensor:
    """Stacked hidden states before each time step: (B, T+1, layers * H)."""
    B, steps, _ = ys.shape
    zero = ad.Tensor(np.zeros((B, net.gru_hidden)))
    hidden = [zero] * net.gru_layers
    seq = [ad.Tensor(np.zeros((B, net.gru_layers * net.gru_hidden)))]
    for t in range(steps - 1):
        hidden = gru_step(net, p, hidden, ys[:, t])
        seq.append(ad.concat(hidden, axis=-1))
    return ad.stack(seq, axis=1)


def ffn_hidden(net: NetParams, p: dict, features: ad.Tensor, z: ad.Tensor | None = None) -> ad.Tensor:
    """SiLU trunk; ``z`` (shape (..., m)) adds a trailing axis of loss levels."""
    a = ad.linear(features, p["ffn0.w"], p["ffn0.b"])
    if net.z_dim:
        if z is None:
            raise ValueError("this network needs loss levels z")
        zt = (z - net.z_shift) * (1.0 / net.z_scale)
        a = ad.reshape(a, a.shape[:-1] + (1, a.shape[-1])) + ad.reshape(zt, zt.shape + (1,)) * p["ffn0.w_z"][0]
    x = _check(ad.silu(a), "ffn0")
    for k in range(1, net.ffn_layers):
        x = _check(ad.silu(ad.linear(x, p[f"ffn{k}.w"], p[f"ffn{k}.b"])), f"ffn{k}")
    return x


def apply_head(net: NetParams, raw: ad.Tensor):
    if net.output_head == "softplus-positive":
        return ad.softplus(raw) * net.output_scale + net.eps
    if net.output_head == "sigmoid-unit":
        return ad.sigmoid(raw)
    if net.output_head == "linear":
        return raw
    var = raw[..., 0]
    es = var + ad.softplus(raw[..., 1])
    return var, es, raw[..., 2]


def forward(net: NetParams, states, z=None, params: dict | None = None):
    """Teacher-forced forward pass over a full state sequence (B, T+1, d).

    Returns the head output at every time step. Pass ``params`` from
    :meth:`NetParams.leaves` to differentiate with respect to the weights.
    """
    p = params if params is not None else net.constants()
    ys = states if isinstance(states, ad.Tensor) else ad.Tensor(net.normalize(states))
    h = hidden_sequence(net, p, ys)
    feats = ad.concat([h, ys], axis=-1)
    x = ffn_hidden(net, p, feats, z)
    raw = _check(ad.linear(x, p["head.w"], p["head.b"]), "head")
    if net.z_dim:
        raw = raw[..., 0]
    return apply_head(net, raw)


def actor_forward(net: NetParams, states, params=None) -> ad.Tensor:
    """Holdings theta_t > 0 for every t of a (B, T+1, n+2) state sequence."""
    if net.output_head != "softplus-positive":
        raise ValueError("actor needs the softplus-positive head")
    return forward(net, states, params=params)


def risk_critic_forward(net: NetParams, states, params=None):
    """(VaR_t, ES_t, R_t), each (B, T+1)."""
    if net.output_head != "risk-triple":
        raise ValueError("risk critic needs the risk-triple head")
    return forward(net, states, params=params)


def cdf_critic_forward(net: NetParams, states, z, params=None) -> ad.Tensor:
    """F_t(z) in (0, 1) with z of shape (B, T+1, m); returns (B, T+1, m)."""
    if net.output_head != "sigmoid-unit" or not net.z_dim:
        raise ValueError("cdf critic needs the sigmoid-unit head and a z input")
    return forward(net, states, z=ad.as_tensor(z), params=params)


class ActorStepper:
    """Runs the actor one decision at a time (no gradient), for simulation."""

    def __init__(self, net: NetParams, batch: int):
        self.net = net
        self.p = net.constants()
        self.hidden = [ad.Tensor(np.zeros((batch, net.gru_hidden)))] * net.gru_layers

    def __call__(self, state: np.ndarray) -> np.ndarray:
        net = self.net
        y = ad.Tensor(net.normalize(state))
        feats = ad.concat(self.hidden + [y], axis=-1)
        x = ffn_hidden(net, self.p, feats)
        theta = apply_head(net, _check(ad.linear(x, self.p["head.w"], self.p["head.b"]), "head"))
        self.hidden = gru_step(net, self.p, self.hidden, y)
        return theta.data
