"""Full-resolution training loss: spectral L1 after degradation plus a
correlation-field spatial term gated by a reference field."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .resample import BandShifts, SensorProfile, expand, lowpass_pan, shift_decimate

# variance floor, relative to the squared dynamic range
FLOOR_FACTOR = 1e-9


@dataclass
class CorrelationField:
    values: np.ndarray   # (B, H, W), 0 where invalid
    sigma: int
    valid: np.ndarray    # (B, H, W) bool
    floor: float         # variance floor used for the validity test


@dataclass
class LossBreakdown:
    spectral: float
    spatial: float
    total: float
    beta: float
    node: ad.Node | None = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {"spectral": self.spectral, "spatial": self.spatial,
                "total": self.total, "beta": self.beta}


def _floor(dynamic_range):
    return FLOOR_FACTOR * float(dynamic_range) ** 2


def _pad(node, sigma):
    # centred sigma x sigma window; for even sigma it spans [-sigma/2, sigma/2 - 1]
    lo = sigma // 2
    hi = sigma - 1 - lo
    return ad.pad_replicate(node, lo, hi, lo, hi)


def _field_nodes(x, y, sigma, floor):
    """Local correlation between x (1 or B bands) and y, as graph nodes.

    Returns (rho, valid): rho is 0 on invalid sites, where either patch
    variance does not exceed ``floor``.
    """
    vx, vy, cov = ad.window_moments(_pad(ad.as_node(x), sigma), _pad(ad.as_node(y), sigma),
                                    sigma)
    valid = (vx.value > floor) & (vy.value > floor)
    den = ad.sqrt(ad.mul(ad.clamp_min(vx, floor), ad.clamp_min(vy, floor)))
    rho = ad.mul(ad.div(cov, den), valid.astype(cov.dtype))
    return rho, np.broadcast_to(valid, rho.shape)


def _check_pair(p0, m_hat_shape, sigma):
    if sigma < 2:
        raise ValueError("sigma must be >= 2")
    if p0.ndim != 3 or p0.shape[0] != 1:
        raise ValueError("PAN must be a single-band (1, H, W) image")
    if p0.shape[1:] != tuple(m_hat_shape[1:]):
        raise ValueError(f"PAN {p0.shape[1:]} and image {tuple(m_hat_shape[1:])} differ in size")


def correlation_field(p0, m_hat, sigma: int, dynamic_range: float | None = None) -> CorrelationField:
    """Per-pixel, per-band correlation between sigma x sigma PAN and band patches."""
    p0 = np.asarray(p0, dtype=np.float64)
    m_hat = np.asarray(m_hat, dtype=np.float64)
    _check_pair(p0, m_hat.shape, sigma)
    if dynamic_range is None:
        dynamic_range = np.ptp(p0)
    floor = _floor(dynamic_range)
    rho, valid = _field_nodes(p0, m_hat, sigma, floor)
    return CorrelationField(rho.value, sigma, np.array(valid), floor)


def reference_field(p0, m1, profile: SensorProfile) -> CorrelationField:
    """Correlation between the band-wise low-passed PAN and the interpolated MS.

    A constant of the target: no gradient flows through it.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    m1 = np.asarray(m1, dtype=np.float64)
    r = profile.ratio
    if p0.shape[1:] != (m1.shape[1] * r, m1.shape[2] * r):
        raise ValueError("PAN dims must equal MS dims times the ratio")
    if len(profile.ms_nyquist_gains) != m1.shape[0]:
        raise ValueError("profile gains do not match the MS band count")
    gains = profile.ms_nyquist_gains
    if len(set(gains)) == 1:
        pan_lp = lowpass_pan(p0, gains[0], profile.kernel_size, r)
    else:
        pan_lp = np.concatenate([lowpass_pan(p0, g, profile.kernel_size, r) for g in gains])
    floor = _floor(profile.dynamic_range)
    rho, valid = _field_nodes(pan_lp, expand(m1, r), profile.sigma, floor)
    return CorrelationField(rho.value, profile.sigma, np.array(valid), floor)


def spatial_loss(p0, m_hat, ref: CorrelationField, sigma: int) -> ad.Node:
    """Mean over all sites of (1 - rho) where rho falls below the reference, else 0."""
    if ref.sigma != sigma:
        raise ValueError(f"reference field built with sigma={ref.sigma}, not {sigma}")
    p0 = np.asarray(p0, dtype=np.float64)
    m_hat = ad.as_node(m_hat)
    _check_pair(p0, m_hat.shape, sigma)
    rho, valid = _field_nodes(p0, m_hat, sigma, ref.floor)
    gate = valid & (rho.value < ref.values)
    return ad.reduce_mean(ad.mul(ad.sub(1.0, rho), gate.astype(rho.dtype)))


def spectral_loss(m_hat, m1, shifts: BandShifts, profile: SensorProfile) -> ad.Node:
    """Mean absolute difference between the realigned degraded output and the MS."""
    m_hat = ad.as_node(m_hat)
    m1 = np.asarray(m1)
    r = profile.ratio
    if m_hat.shape != (m1.shape[0], m1.shape[1] * r, m1.shape[2] * r):
        raise ValueError(f"output {m_hat.shape} does not match MS {m1.shape} at ratio {r}")
    low = shift_decimate(m_hat, shifts, profile)
    return ad.reduce_mean(ad.abs_(ad.sub(low, m1)))


def total_loss(p0, m1, m_hat, shifts: BandShifts, ref: CorrelationField,
               profile: SensorProfile) -> LossBreakdown:
    """spectral + beta * spatial; the graph node is kept on the breakdown."""
    spec = spectral_loss(m_hat, m1, shifts, profile)
    spat = spatial_loss(p0, m_hat, ref, profile.sigma)
    beta = float(profile.beta)
    total = ad.add(spec, ad.scale(spat, beta))
    s, l = float(spec.value), float(spat.value)
    return LossBreakdown(s, l, s + beta * l, beta, node=total)
