"""Synthetic ground truth: multiband scenes and the PAN/MS acquisition chain."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .resample import BandShifts, SensorProfile, lowpass_pan, shift_decimate, translate

DEFAULT_MIX = {"smooth": 1.0, "texture": 1.0, "rects": 1.0, "lines": 0.5}

# band gains over normalized wavelength (blue .. near infrared): the response
# of the shared luminance layer, and the vegetation signature added on top
_WAVE = np.array([0.0, 1 / 3, 2 / 3, 1.0])
_GAIN = np.array([0.80, 0.90, 1.00, 0.95])
_VEGETATION = np.array([-0.10, 0.05, -0.20, 0.45])


@dataclass
class SceneSpec:
    seed: int = 0
    size: tuple[int, int] = (256, 256)
    bands: int = 4
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    dynamic_range: float = 2048.0

    def __post_init__(self):
        if self.bands < 1:
            raise ValueError("bands must be >= 1")
        if any(w < 0 for w in self.mix.values()):
            raise ValueError("mix weights must be non-negative")
        unknown = set(self.mix) - set(DEFAULT_MIX)
        if unknown:
            raise ValueError(f"unknown content classes {sorted(unknown)}")


@dataclass
class PanWeights:
    weights: np.ndarray
    boost: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise ValueError("PAN weights must be non-negative and sum to 1")
        if self.boost < 0:
            raise ValueError("detail boost must be >= 0")

    @classmethod
    def uniform(cls, bands: int, boost: float = 0.0) -> "PanWeights":
        return cls(np.full(bands, 1.0 / bands), boost)


class SimulatedPair(NamedTuple):
    p0: np.ndarray
    m1: np.ndarray
    shifts: BandShifts


def _unit(x):
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def _smooth_field(rng, h, w, scale):
    return _unit(gaussian_filter(rng.standard_normal((h, w)), scale, mode="wrap"))


def _rectangles(rng, h, w):
    # dense small blocks: edge energy near the MS Nyquist band
    img = np.full((h, w), 0.5)
    for _ in range(max(8, (h * w) // 160)):
        rh, rw = rng.integers(4, 17, size=2)
        r0, c0 = rng.integers(0, max(1, h - rh + 1)), rng.integers(0, max(1, w - rw + 1))
        img[r0:r0 + rh, c0:c0 + rw] = rng.uniform(0.1, 1.0)
    return img


def _lines(rng, h, w):
    img = np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(max(2, (h + w) // 64)):
        theta = rng.uniform(0, np.pi)
        offset = rng.uniform(-0.5, 0.5) * (h + w) / 2
        dist = np.abs((xx - w / 2) * np.cos(theta) + (yy - h / 2) * np.sin(theta) - offset)
        img = np.maximum(img, (dist < rng.uniform(0.6, 1.6)) * rng.uniform(0.5, 1.0))
    return img


def gen_scene(spec: SceneSpec) -> np.ndarray:
    """Deterministic (B, H, W) scene in [0, dynamic_range).

    Every band is a gain times one shared luminance layer, which holds all
    sharp structure, plus smooth additive fields: a vegetation cover with a
    per-band signature and independent per-band variation. Edges therefore
    sit at the same positions in all bands.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    mix = {**{k: 0.0 for k in DEFAULT_MIX}, **spec.mix}
    scale = max(h, w)

    layers = {
        "smooth": _smooth_field(rng, h, w, scale / 10),
        "texture": _unit(gaussian_filter(rng.standard_normal((h, w)), 1.5)),
        "rects": _rectangles(rng, h, w),
        "lines": _lines(rng, h, w),
    }
    total = sum(mix.values())
    lum = sum(mix[k] * layers[k] for k in layers) / total if total > 0 else np.full((h, w), 0.5)
    spread = max(lum.std(), 0.05)

    wave = np.linspace(0, 1, spec.bands) if spec.bands > 1 else np.array([0.5])
    gain = np.interp(wave, _WAVE, _GAIN)
    signature = np.interp(wave, _WAVE, _VEGETATION)
    cover = _smooth_field(rng, h, w, scale / 10)
    out = np.empty((spec.bands, h, w))
    for b in range(spec.bands):
        own = _smooth_field(rng, h, w, scale / 10) - 0.5
        out[b] = gain[b] * lum + spread * (2 * signature[b] * cover + 0.6 * own)
    out = _fit_band_correlation(out, rng, scale / 10)
    out -= out.min()
    return out / out.max() * 0.9 * spec.dynamic_range


def _offdiag(x):
    c = np.corrcoef(x.reshape(x.shape[0], -1))
    return c[np.triu_indices(x.shape[0], 1)]


def _fit_band_correlation(x, rng, smooth, lo=0.55, hi=0.93, steps=60):
    """Nudge inter-band correlations into [lo, hi].

    Too-weak pairs are pulled toward the band mean; too-strong pairs get
    more independent smooth variation, which leaves edges in place.
    """
    if x.shape[0] < 2:
        return x
    for _ in range(steps):
        c = _offdiag(x)
        if c.max() > hi:
            extra = gaussian_filter(rng.standard_normal(x.shape), (0, smooth, smooth), mode="wrap")
            x = x + 0.2 * x.std() * extra / extra.std(axis=(1, 2), keepdims=True)
        elif c.min() < lo:
            x = 0.9 * x + 0.1 * x.mean(axis=0, keepdims=True)
        else:
            break
    return x


def simulate_pair(m0, profile: SensorProfile, weights: PanWeights | None = None,
                  misalign=None) -> SimulatedPair:
    """PAN by spectral mixing (plus optional detail boost), MS by degradation.

    ``misalign`` gives per-band sampling shifts (see BandShifts) applied
    before decimation; |dx|, |dy| <= R - 1.
    """
    m0 = np.asarray(m0, dtype=np.float64)
    bands = m0.shape[0]
    weights = weights or PanWeights.uniform(bands)
    if weights.weights.size != bands:
        raise ValueError("one PAN weight per band is required")
    r = profile.ratio
    shifts = BandShifts([tuple(int(v) for v in s) for s in misalign]) if misalign is not None \
        else BandShifts.zeros(bands)
    if len(shifts) != bands:
        raise ValueError("one misalignment per band is required")
    for dx, dy in shifts.shifts:
        if abs(dx) > r - 1 or abs(dy) > r - 1:
            raise ValueError(f"misalignment ({dx}, {dy}) outside [-{r - 1}, {r - 1}]")

    pan = np.tensordot(weights.weights, m0, axes=1)[None]
    if weights.boost:
        pan = pan + weights.boost * (pan - lowpass_pan(pan, profile.pan_nyquist_gain,
                                                       profile.kernel_size, r))
    m1 = shift_decimate(m0, shifts, profile).value
    return SimulatedPair(pan, m1, shifts)


def inject_shift(m1, band: int, dx: int, dy: int) -> np.ndarray:
    """Move one band by an integer sampling shift, replicate-filled."""
    m1 = np.asarray(m1)
    if not 0 <= band < m1.shape[0]:
        raise IndexError(f"band {band} out of range for {m1.shape[0]} bands")
    out = m1.copy()
    out[band] = translate(m1[band], dx, dy)
    return out
