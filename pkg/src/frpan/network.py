"""Compact residual pansharpening CNN and its Adam optimizer."""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .resample import expand

CHECKPOINT_MAGIC = b"PZNW"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite values met during optimization."""


@dataclass(frozen=True)
class NetworkArch:
    layers: tuple[tuple[int, int], ...]   # (kernel size, output channels)
    in_channels: int
    residual: bool = True
    # radiometric scale: inputs are divided by it, the residual multiplied back
    input_scale: float = 2048.0

    def __post_init__(self):
        for k, _ in self.layers:
            if k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd, got {k}")
        if self.layers[-1][1] != self.bands:
            raise ValueError("last layer must output one channel per MS band")

    @property
    def bands(self) -> int:
        return self.in_channels - 1

    @classmethod
    def default(cls, bands: int = 4, input_scale: float = 2048.0) -> "NetworkArch":
        return cls(((9, 64), (5, 32), (5, bands)), bands + 1, True, input_scale)

    def param_count(self) -> int:
        total, cin = 0, self.in_channels
        for k, cout in self.layers:
            total += k * k * cin * cout + cout
            cin = cout
        return total


@dataclass
class NetworkParams:
    arch: NetworkArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.seed)

    def with_arrays(self, arrays) -> "NetworkParams":
        return NetworkParams(self.arch, list(arrays[0::2]), list(arrays[1::2]), self.seed)

    def count(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(arch: NetworkArch, seed: int = 0, dtype=np.float32,
                zero_last: bool = True) -> NetworkParams:
    """Normal weights scaled by 1/sqrt(fan-in), zero biases.

    With ``zero_last`` the final layer starts at zero, so a residual network
    initially returns the interpolated MS unchanged.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    cin = arch.in_channels
    for i, (k, cout) in enumerate(arch.layers):
        fan_in = cin * k * k
        w = rng.standard_normal((cout, cin, k, k)) / np.sqrt(fan_in)
        if zero_last and i == len(arch.layers) - 1:
            w[:] = 0.0
        weights.append(w.astype(dtype))
        biases.append(np.zeros(cout, dtype=dtype))
        cin = cout
    return NetworkParams(arch, weights, biases, seed)


def network_input(m1, p0, ratio: int):
    m1, p0 = np.asarray(m1), np.asarray(p0)
    if p0.shape != (1, m1.shape[1] * ratio, m1.shape[2] * ratio):
        raise ValueError(f"PAN {p0.shape} does not match MS {m1.shape} at ratio {ratio}")
    up = expand(m1.astype(np.float64), ratio)
    return up, np.concatenate([up, p0.astype(np.float64)], axis=0)


def forward_graph(params: NetworkParams, m1, p0, ratio: int = 4, nodes=None) -> ad.Node:
    """Build the forward graph; returns a float64 (B, H, W) node.

    ``nodes`` optionally supplies parameter nodes (in ``params.arrays()``
    order) so gradients can be collected for them.
    """
    arch = params.arch
    if np.asarray(m1).shape[0] != arch.bands:
        raise ValueError(f"network expects {arch.bands} MS bands")
    up, stacked = network_input(m1, p0, ratio)
    dtype = params.dtype
    if nodes is None:
        nodes = [ad.constant(a) for a in params.arrays()]
    h = ad.constant((stacked / arch.input_scale).astype(dtype))
    last = len(arch.layers) - 1
    for i in range(len(arch.layers)):
        h = ad.conv2d(h, nodes[2 * i], nodes[2 * i + 1], padding="replicate")
        if i < last:
            h = ad.relu(h)
    out = ad.scale(h, arch.input_scale, dtype=np.float64)
    if arch.residual:
        out = ad.add(out, up)
    return out


def forward(params: NetworkParams, m1, p0, ratio: int = 4) -> np.ndarray:
    return forward_graph(params, m1, p0, ratio).value


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParams, beta1=0.9, beta2=0.99, eps=1e-8) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, beta1, beta2, eps)


def adam_step(arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_arrays, ms, vs = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        g = g.astype(a.dtype, copy=False)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_arrays.append((a - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(a.dtype))
        ms.append(m.astype(a.dtype))
        vs.append(v.astype(a.dtype))
    return new_arrays, AdamState(ms, vs, t, b1, b2, state.eps)


# ---------------------------------------------------------------- checkpoint

def params_to_bytes(params: NetworkParams) -> bytes:
    arch = params.arch
    head = [CHECKPOINT_MAGIC,
            struct.pack("<IIIIf", CHECKPOINT_VERSION, len(arch.layers), arch.in_channels,
                        int(arch.residual), arch.input_scale)]
    head += [struct.pack("<II", k, c) for k, c in arch.layers]
    body = [a.astype("<f4").tobytes() for a in params.arrays()]
    return b"".join(head + body)


def params_from_bytes(data: bytes) -> NetworkParams:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    version, n_layers, in_ch, residual, scale = struct.unpack_from("<IIIIf", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 24
    layers = []
    for _ in range(n_layers):
        layers.append(struct.unpack_from("<II", data, off))
        off += 8
    arch = NetworkArch(tuple(layers), in_ch, bool(residual), float(scale))
    weights, biases = [], []
    cin = in_ch
    for k, cout in layers:
        for shape, out in (((cout, cin, k, k), weights), ((cout,), biases)):
            n = int(np.prod(shape))
            if off + 4 * n > len(data):
                raise ValueError("truncated checkpoint")
            out.append(np.frombuffer(data, "<f4", n, off).reshape(shape).astype(np.float32))
            off += 4 * n
        cin = cout
    if off != len(data):
        raise ValueError("checkpoint has trailing bytes")
    return NetworkParams(arch, weights, biases)


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(path, params: NetworkParams):
    atomic_write(path, params_to_bytes(params))


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
