"""Tensor files, PPM previews and flat key = value run configurations.

Tensor layout (little-endian)::

    offset  size  field
    0       4     magic b"PZT1"
    4       4     u32 version (1)
    8       4     u32 bands
    12      4     u32 height
    16      4     u32 width
    20      4     u32 dtype code: 0 = float32, 1 = float64
    24      ...   band-major samples, bands * height * width values
"""
from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import AdaptConfig, DEFAULT_ADAPT_ITERS, DEFAULT_PRETRAIN_ITERS, FULL_RESOLUTION
from .network import atomic_write
from .resample import SensorProfile

TENSOR_MAGIC = b"PZT1"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    """A tensor file that does not follow the documented layout."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


def tensor_to_bytes(t, dtype=None) -> bytes:
    t = np.asarray(t)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise ValueError(f"expected a (bands, height, width) array, got shape {t.shape}")
    dtype = np.dtype(dtype or (t.dtype if t.dtype in _CODES else np.float64))
    if dtype not in _CODES:
        raise ValueError(f"unsupported tensor dtype {dtype}; use float32 or float64")
    code = _CODES[dtype]
    head = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, *t.shape, code)
    return head + np.ascontiguousarray(t, dtype=_DTYPES[code]).tobytes()


def tensor_from_bytes(data: bytes, expect_dtype=None, source="<bytes>") -> np.ndarray:
    if len(data) < _HEADER.size:
        raise TensorFormatError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, bands, height, width, code = _HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"{source}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"{source}: unsupported version {version}")
    if code not in _DTYPES:
        raise TensorFormatError(f"{source}: unknown dtype code {code}")
    dtype = _DTYPES[code]
    if expect_dtype is not None and np.dtype(expect_dtype) != dtype.newbyteorder("="):
        raise TensorFormatError(f"{source}: stored as {dtype.name}, expected {np.dtype(expect_dtype).name}")
    expected = _HEADER.size + bands * height * width * dtype.itemsize
    if len(data) != expected:
        kind = "truncated payload" if len(data) < expected else "trailing bytes"
        raise TensorFormatError(f"{source}: {kind}: {len(data)} bytes, header implies {expected}")
    arr = np.frombuffer(data, dtype, bands * height * width, _HEADER.size)
    return arr.reshape(bands, height, width).astype(dtype.newbyteorder("="))


def write_tensor(path, t, dtype=None):
    """Atomically store ``t``; ``dtype`` (float32/float64) converts on the way."""
    atomic_write(path, tensor_to_bytes(t, dtype))


def read_tensor(path, expect_dtype=None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tensor file not found: {path}")
    return tensor_from_bytes(path.read_bytes(), expect_dtype, str(path))


# ---------------------------------------------------------------- preview

def stretch(band, low=1.0, high=99.0) -> np.ndarray:
    """Map the low/high percentiles to 0/255; a flat band maps to mid gray."""
    band = np.asarray(band, dtype=np.float64)
    lo, hi = np.percentile(band, [low, high])
    if hi <= lo:
        return np.full(band.shape, 128, dtype=np.uint8)
    return np.round(np.clip((band - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)


def preview_bytes(t, bands=(2, 1, 0)) -> bytes:
    t = np.asarray(t)
    if len(bands) != 3:
        raise ValueError("a preview needs exactly three bands")
    for b in bands:
        if not 0 <= b < t.shape[0]:
            raise IndexError(f"band {b} out of range for {t.shape[0]} bands")
    rgb = np.stack([stretch(t[b]) for b in bands], axis=-1)
    h, w = t.shape[1:]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def export_preview(t, bands, path):
    """8-bit binary PPM of three bands with a 1-99 percentile stretch."""
    atomic_write(path, preview_bytes(t, bands))


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], np.uint8, h * w * 3).reshape(h, w, 3)


# ---------------------------------------------------------------- run config

def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _path(text):
    return text


# key -> (parser, required)
_SCHEMA = {
    "ratio": (int, True),
    "sigma": (int, True),
    "beta": (float, True),
    "lr": (float, True),
    "iters": (int, True),
    "seed": (int, True),
    "mode": (str, True),
    "gains": (_floats, False),
    "pan_gain": (float, False),
    "kernel_size": (int, False),
    "dynamic_range": (float, False),
    "pretrain_iters": (int, False),
    "shifts": (str, False),
    "pan": (_path, False),
    "ms": (_path, False),
    "weights": (_path, False),
    "out": (_path, False),
    "log": (_path, False),
    "truth": (_path, False),
}


@dataclass
class RunConfig:
    ratio: int = 4
    sigma: int = 4
    beta: float = 0.36
    lr: float = 1e-5
    iters: int = DEFAULT_ADAPT_ITERS
    seed: int = 0
    mode: str = FULL_RESOLUTION
    gains: tuple[float, ...] | None = None
    pan_gain: float = 0.15
    kernel_size: int = 41
    dynamic_range: float = 2048.0
    pretrain_iters: int = DEFAULT_PRETRAIN_ITERS
    shifts: str = "pre-estimated"
    paths: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values, paths = {}, {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in values or key in paths:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            parser, _ = _SCHEMA[key]
            try:
                parsed = parser(value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from exc
            (paths if parser is _path else values)[key] = parsed
        missing = [k for k, (_, req) in _SCHEMA.items() if req and k not in values]
        if missing:
            raise ConfigError(f"{source}: missing required keys {missing}")
        try:
            cfg = cls(**values, paths=paths)
            AdaptConfig(cfg.mode, cfg.iters, cfg.lr, cfg.seed, cfg.shifts)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.parse(path.read_text(), str(path))

    def profile(self, bands: int) -> SensorProfile:
        gains = self.gains or (0.29,) * bands
        if len(gains) != bands:
            raise ConfigError(f"{len(gains)} gains given for {bands} bands")
        try:
            return SensorProfile(ratio=self.ratio, ms_nyquist_gains=gains,
                                 pan_nyquist_gain=self.pan_gain, kernel_size=self.kernel_size,
                                 sigma=self.sigma, beta=self.beta, learning_rate=self.lr,
                                 adapt_iters=self.iters, pretrain_iters=self.pretrain_iters,
                                 dynamic_range=self.dynamic_range)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def adapt_config(self, iterations: int | None = None) -> AdaptConfig:
        return AdaptConfig(self.mode, self.iters if iterations is None else iterations,
                           self.lr, self.seed, self.shifts)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["gains"] = list(self.gains) if self.gains else None
        return out

    def to_text(self) -> str:
        lines = []
        for key in _SCHEMA:
            if key in self.paths:
                lines.append(f"{key} = {self.paths[key]}")
            elif hasattr(self, key) and getattr(self, key) is not None:
                value = getattr(self, key)
                if isinstance(value, tuple):
                    value = ",".join(repr(v) for v in value)
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"
