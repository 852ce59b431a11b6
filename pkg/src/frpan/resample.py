"""MTF-matched degradation, plain interpolation and band realignment."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter
from scipy.optimize import brentq

from . import autodiff as ad

# Sensor-like presets: (beta, learning rate). WorldView-2/3 vs GeoEye-1.
WORLDVIEW = "worldview"
GEOEYE = "geoeye"
_PRESETS = {WORLDVIEW: (0.36, 1e-5), GEOEYE: (0.25, 5e-5)}


@dataclass
class SensorProfile:
    ratio: int = 4
    ms_nyquist_gains: tuple[float, ...] = (0.29, 0.29, 0.29, 0.29)
    pan_nyquist_gain: float = 0.15
    kernel_size: int = 41
    sigma: int = 4
    beta: float = 0.36
    learning_rate: float = 1e-5
    adapt_iters: int = 100
    pretrain_iters: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    dynamic_range: float = 2048.0

    def __post_init__(self):
        self.ms_nyquist_gains = tuple(float(g) for g in self.ms_nyquist_gains)
        self.validate()

    def validate(self):
        r = self.ratio
        if r < 2:
            raise ValueError(f"ratio must be >= 2, got {r}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 4 * r + 1:
            raise ValueError(f"kernel_size must be odd and >= {4 * r + 1}")
        for g in (*self.ms_nyquist_gains, self.pan_nyquist_gain):
            if not 0 < g < 1:
                raise ValueError(f"Nyquist gains must lie in (0, 1), got {g}")
        if self.sigma < 2:
            raise ValueError("sigma must be >= 2")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def bands(self) -> int:
        return len(self.ms_nyquist_gains)

    @classmethod
    def preset(cls, name: str = WORLDVIEW, bands: int = 4, **overrides) -> "SensorProfile":
        beta, lr = _PRESETS[name]
        kwargs = dict(ms_nyquist_gains=(0.29,) * bands, beta=beta, learning_rate=lr)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass(frozen=True)
class Kernel:
    taps: np.ndarray       # 2-D, odd side, sums to 1
    taps_1d: np.ndarray    # separable factor: taps = outer(taps_1d, taps_1d)
    gain: float
    ratio: int

    @property
    def size(self) -> int:
        return self.taps_1d.size


@dataclass
class BandShifts:
    """Per-band (dx, dy) at the high-resolution grid.

    A band with shift (dx, dy) holds, at grid site (i, j), the content that
    the PAN-aligned image has at (i + dy, j + dx).
    """

    shifts: list[tuple[int, int]]
    degenerate: list[int] = field(default_factory=list)  # bands flagged constant

    @classmethod
    def zeros(cls, bands: int) -> "BandShifts":
        return cls([(0, 0)] * bands)

    def check(self, ratio: int):
        for dx, dy in self.shifts:
            if abs(dx) > ratio or abs(dy) > ratio:
                raise ValueError(f"band shift ({dx}, {dy}) outside [-{ratio}, {ratio}]")

    def __len__(self):
        return len(self.shifts)


def _gaussian_1d(size, s):
    n = np.arange(size) - size // 2
    g = np.exp(-0.5 * (n / s) ** 2)
    return g / g.sum()


def _nyquist_response(taps, ratio):
    n = np.arange(taps.size) - taps.size // 2
    return float(np.sum(taps * np.cos(np.pi * n / ratio)))


@lru_cache(maxsize=64)
def _mtf_taps(gain, size, ratio):
    # std dev whose discrete response at the low-res Nyquist frequency is `gain`
    s0 = np.sqrt(-np.log(gain) * 2 * ratio ** 2) / np.pi
    s = brentq(lambda s: _nyquist_response(_gaussian_1d(size, s), ratio) - gain,
               0.05 * s0, 4 * s0, xtol=1e-14)
    taps = _gaussian_1d(size, s)
    taps = 0.5 * (taps + taps[::-1])
    return taps / taps.sum()


def mtf_kernel(gain_at_nyquist: float, kernel_size: int = 41, ratio: int = 4) -> Kernel:
    """Separable Gaussian low-pass whose gain at the decimated Nyquist is fixed."""
    if not 0 < gain_at_nyquist < 1:
        raise ValueError(f"gain must lie in (0, 1), got {gain_at_nyquist}")
    if kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd")
    t1 = _mtf_taps(float(gain_at_nyquist), int(kernel_size), int(ratio)).copy()
    t1.flags.writeable = False
    taps = np.outer(t1, t1)
    taps.flags.writeable = False
    return Kernel(taps, t1, float(gain_at_nyquist), int(ratio))


def _lowpass(x, gains, kernel_size, ratio):
    """Depthwise replicate-padded MTF filtering of a (B, H, W) node."""
    x = ad.as_node(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = ad.constant(x.value.astype(np.float64))
    bands = x.shape[0]
    if len(gains) != bands:
        raise ValueError(f"{len(gains)} gains for {bands} bands")
    t1 = np.stack([mtf_kernel(g, kernel_size, ratio).taps_1d for g in gains])
    t1 = t1.astype(x.dtype, copy=False)
    vert = t1[:, None, :, None]
    horiz = t1[:, None, None, :]
    x = ad.conv2d(x, vert, padding="replicate", groups=bands)
    return ad.conv2d(x, horiz, padding="replicate", groups=bands)


def _sample_grid(n_low, ratio, shift, n_high):
    # low-res site r reads high-res index r*R + R//2 + shift, clamped (replicate)
    idx = np.arange(n_low) * ratio + ratio // 2 + shift
    return np.clip(idx, 0, n_high - 1)


def _check_divisible(shape, ratio):
    _, h, w = shape
    if h % ratio or w % ratio:
        raise ValueError(f"image size {h}x{w} is not divisible by ratio {ratio}")


def degrade(m, profile: SensorProfile, gains=None) -> ad.Node:
    """Band-wise MTF low-pass followed by decimation at pace R.

    Accepts an array or a graph node and always returns a node. ``gains``
    defaults to the profile's MS gains.
    """
    m = ad.as_node(m)
    return shift_decimate(m, BandShifts.zeros(m.shape[0]), profile, gains)


def shift_decimate(m, shifts: BandShifts, profile: SensorProfile, gains=None) -> ad.Node:
    """Like :func:`degrade`, with each band's sampling grid moved by its shift."""
    m = ad.as_node(m)
    r = profile.ratio
    _check_divisible(m.shape, r)
    shifts.check(r)
    bands, h, w = m.shape
    if len(shifts) != bands:
        raise ValueError(f"{len(shifts)} shifts for {bands} bands")
    gains = profile.ms_nyquist_gains if gains is None else tuple(gains)
    filtered = _lowpass(m, gains, profile.kernel_size, r)
    if all(s == (0, 0) for s in shifts.shifts):
        rows = _sample_grid(h // r, r, 0, h)
        cols = _sample_grid(w // r, r, 0, w)
        return ad.crop(filtered, slice(None), slice(rows[0], None, r), slice(cols[0], None, r))
    parts = []
    for b, (dx, dy) in enumerate(shifts.shifts):
        rows = _sample_grid(h // r, r, dy, h)
        cols = _sample_grid(w // r, r, dx, w)
        parts.append(ad.crop(filtered, [b], rows, cols))
    return ad.concat_bands(parts)


def lowpass_pan(p0, gain: float, kernel_size: int = 41, ratio: int = 4) -> np.ndarray:
    p0 = np.asarray(p0)
    if p0.ndim != 3 or p0.shape[0] != 1:
        raise ValueError("lowpass_pan expects a single-band (1, H, W) image")
    return _lowpass(p0, (gain,), kernel_size, ratio).value


def _cubic(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1, (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1,
        np.where(t < 2, a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a, 0.0))


def interpolation_taps(ratio: int) -> np.ndarray:
    """Cubic-convolution interpolator sampled at 1/R steps; DC gain R."""
    k = np.arange(-2 * ratio + 1, 2 * ratio)
    return _cubic(k / ratio)


def expand(m1, ratio: int) -> np.ndarray:
    """Zero-insertion upsampling + separable cubic interpolation.

    Low-res sample r lands on high-res index r*R + R//2.
    """
    if ratio < 2:
        raise ValueError("ratio must be >= 2")
    m1 = np.asarray(m1)
    taps = interpolation_taps(ratio)
    out = m1
    for axis in (1, 2):
        out = _expand_axis(out, ratio, taps, axis)
    return out


def _expand_axis(x, ratio, taps, axis):
    pad = 2
    widths = [(0, 0)] * 3
    widths[axis] = (pad, pad)
    xp = np.pad(x, widths, mode="edge")
    n = x.shape[axis]
    shape = list(xp.shape)
    shape[axis] = xp.shape[axis] * ratio
    up = np.zeros(shape, dtype=np.result_type(x, np.float64))
    sl = [slice(None)] * 3
    sl[axis] = slice(ratio // 2, None, ratio)
    up[tuple(sl)] = xp
    filt = correlate1d(up, taps, axis=axis, mode="constant")
    sl[axis] = slice(pad * ratio, pad * ratio + n * ratio)
    return np.ascontiguousarray(filt[tuple(sl)]).astype(np.result_type(x.dtype, np.float32), copy=False)


def translate(band: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Sampling shift with replicate fill: out[i, j] = band[i + dy, j + dx]."""
    h, w = band.shape[-2:]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return band[..., rows[:, None], cols[None, :]]


def _high_pass(x, width):
    return x - gaussian_filter(x, (0, width, width), mode="nearest")


def estimate_band_shifts(m1, p0, profile: SensorProfile) -> BandShifts:
    """Integer band-to-PAN shift per band, by exhaustive search in [-R, R]^2.

    Maximizes the global correlation between the interpolated band moved
    by the candidate and the PAN low-passed with that band's MTF gain.
    Both sides are high-passed first (minus a Gaussian blur of width R) so
    smooth band-specific content does not pull the peak; edges decide.
    Constant bands get (0, 0) and are listed in ``degenerate``.
    """
    m1, p0 = np.asarray(m1, dtype=np.float64), np.asarray(p0, dtype=np.float64)
    r = profile.ratio
    if p0.shape[1:] != (m1.shape[1] * r, m1.shape[2] * r):
        raise ValueError("PAN dims must equal MS dims times the ratio")
    exp = _high_pass(expand(m1, r), r)
    margin = 2 * r
    inner = (slice(margin, -margin), slice(margin, -margin))
    # candidates ordered so the first maximum wins the documented tie-break
    cands = sorted(((dx, dy) for dx in range(-r, r + 1) for dy in range(-r, r + 1)),
                   key=lambda s: (abs(s[0]) + abs(s[1]), s))
    result, degenerate = [], []
    pan_lp = {}
    for b in range(m1.shape[0]):
        if np.ptp(m1[b]) == 0:
            degenerate.append(b)
            result.append((0, 0))
            continue
        gain = profile.ms_nyquist_gains[b]
        if gain not in pan_lp:
            pan_lp[gain] = _high_pass(lowpass_pan(p0, gain, profile.kernel_size, r), r)[0][inner]
        ref = pan_lp[gain]
        refc = ref - ref.mean()
        ref_norm = np.sqrt((refc * refc).sum())
        hh, ww = ref.shape
        best, best_score = (0, 0), -np.inf
        for dx, dy in cands:
            # undo a (dx, dy) sampling shift: moved[i, j] = exp[i - dy, j - dx];
            # the margin exceeds R, so the interior never touches the fill
            moved = exp[b, margin - dy:margin - dy + hh, margin - dx:margin - dx + ww]
            centred = moved - moved.mean()
            den = np.sqrt((centred * centred).sum()) * ref_norm
            score = float((centred * refc).sum() / den) if den > 0 else 0.0
            if score > best_score:
                best, best_score = (dx, dy), score
        result.append(best)
    if degenerate:
        warnings.warn(f"constant MS bands {degenerate}: shift fixed to (0, 0)", RuntimeWarning)
    return BandShifts(result, degenerate)
