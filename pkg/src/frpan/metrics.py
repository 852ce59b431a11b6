"""Quality indexes: UIQI / Q2n, SAM, ERGAS and the full-resolution
no-reference distortion indexes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .loss import correlation_field
from .resample import SensorProfile, degrade

WINDOW = 32


@dataclass
class QualityReport:
    d_rho: float
    d_s: float
    d_lambda_k: float
    r_sam: float
    r_ergas: float
    r_q2n: float
    r_sam_excluded: int = 0
    full_reference: dict | None = None

    def to_dict(self):
        out = asdict(self)
        if out["full_reference"] is None:
            del out["full_reference"]
        return out

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def _blocks(h, w, window):
    window = min(window, h, w)
    for r in range(0, h - window + 1, window):
        for c in range(0, w - window + 1, window):
            yield slice(r, r + window), slice(c, c + window)


def _as_2d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        if x.shape[0] != 1:
            raise ValueError("expected a single-band image")
        x = x[0]
    return x


def _q_scalar(cov, var_x, var_y, mean_prod, mean_sq):
    """4 cov mx my / ((vx + vy)(mx^2 + my^2)) with degenerate blocks handled.

    Zero contrast denominator: both blocks are flat, only luminance counts.
    Zero luminance denominator: both means are 0, only correlation counts.
    """
    den_c = var_x + var_y
    if den_c == 0 and mean_sq == 0:
        return 1.0
    if den_c == 0:
        return 2 * mean_prod / mean_sq
    if mean_sq == 0:
        return 2 * cov / den_c
    return 4 * cov * mean_prod / (den_c * mean_sq)


def uiqi(x, y, window: int = WINDOW) -> float:
    """Universal image quality index, averaged over non-overlapping blocks."""
    x, y = _as_2d(x), _as_2d(y)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if window < 4:
        raise ValueError("window must be >= 4")
    scores = []
    for rs, cs in _blocks(*x.shape, window):
        a, b = x[rs, cs], y[rs, cs]
        mx, my = a.mean(), b.mean()
        da, db = a - mx, b - my
        scores.append(_q_scalar((da * db).mean(), (da * da).mean(), (db * db).mean(),
                                mx * my, mx * mx + my * my))
    return float(np.mean(scores))


# ---------------------------------------------------------------- hypercomplex

def hc_conj(a):
    out = -a
    out[0] = a[0]
    return out


def hc_mul(a, b):
    """Cayley-Dickson product of hypercomplex arrays with components on axis 0.

    (p, q)(r, s) = (p r - s* q, s p + q r*).
    """
    n = a.shape[0]
    if n == 1:
        return a * b
    h = n // 2
    p, q = a[:h], a[h:]
    r, s = b[:h], b[h:]
    return np.concatenate([hc_mul(p, r) - hc_mul(hc_conj(s), q),
                           hc_mul(s, p) + hc_mul(q, hc_conj(r))])


def _pad_pow2(x):
    bands = x.shape[0]
    n = 1 << (bands - 1).bit_length()
    if n == bands:
        return x
    return np.concatenate([x, np.zeros((n - bands,) + x.shape[1:])])


def q2n(test, ref, window: int = WINDOW) -> float:
    """Multiband UIQI over hypercomplex pixels, averaged over blocks.

    With one band the algebra is the real line and the signed value is
    kept, so the result equals :func:`uiqi`.
    """
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch {test.shape} vs {ref.shape}")
    z2, z1 = _pad_pow2(test), _pad_pow2(ref)
    scores = []
    for rs, cs in _blocks(*test.shape[1:], window):
        a = z1[:, rs, cs].reshape(z1.shape[0], -1)
        b = z2[:, rs, cs].reshape(z2.shape[0], -1)
        scores.append(_q_hypercomplex(a, b))
    return float(np.mean(scores))


def _q_hypercomplex(a, b):
    ma, mb = a.mean(axis=1), b.mean(axis=1)
    da, db = a - ma[:, None], b - mb[:, None]
    var_a = float((da * da).sum(axis=0).mean())
    var_b = float((db * db).sum(axis=0).mean())
    cov = hc_mul(da, hc_conj(db)).mean(axis=1)
    norm_a, norm_b = float(np.linalg.norm(ma)), float(np.linalg.norm(mb))
    if a.shape[0] == 1:
        return _q_scalar(float(cov[0]), var_a, var_b, float(ma[0] * mb[0]),
                         norm_a ** 2 + norm_b ** 2)
    return abs(_q_scalar(float(np.linalg.norm(cov)), var_a, var_b, norm_a * norm_b,
                         norm_a ** 2 + norm_b ** 2))


# ---------------------------------------------------------------- reference

def sam_with_count(test, ref) -> tuple[float, int]:
    """Mean spectral angle in degrees and the number of skipped zero pixels."""
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch {test.shape} vs {ref.shape}")
    a = test.reshape(test.shape[0], -1)
    b = ref.reshape(ref.shape[0], -1)
    na, nb = np.linalg.norm(a, axis=0), np.linalg.norm(b, axis=0)
    keep = (na > 0) & (nb > 0)
    if not keep.any():
        raise ValueError("SAM undefined: all spectral vectors are zero")
    # 2 atan2(|u - v|, |u + v|) on unit vectors stays accurate near 0 and 180
    u, v = a[:, keep] / na[keep], b[:, keep] / nb[keep]
    angles = np.degrees(2 * np.arctan2(np.linalg.norm(u - v, axis=0),
                                       np.linalg.norm(u + v, axis=0)))
    return float(angles.mean()), int((~keep).sum())


def sam(test, ref) -> float:
    return sam_with_count(test, ref)[0]


def ergas(test, ref, ratio: int) -> float:
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch {test.shape} vs {ref.shape}")
    means = ref.reshape(ref.shape[0], -1).mean(axis=1)
    if np.any(means == 0):
        raise ValueError("ERGAS undefined for a zero-mean reference band")
    rmse = np.sqrt(((test - ref) ** 2).reshape(ref.shape[0], -1).mean(axis=1))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / means) ** 2)))


# ---------------------------------------------------------------- no-reference

def _project(m_hat, profile):
    return degrade(np.asarray(m_hat, dtype=np.float64), profile).value


def d_lambda_k(m_hat, m1, profile: SensorProfile, window: int = WINDOW) -> float:
    return 1.0 - q2n(_project(m_hat, profile), m1, window)


def d_s(m_hat, m1, p0, profile: SensorProfile, window: int = WINDOW) -> float:
    """Mean over bands of |Q(band, PAN) - Q(MS band, degraded PAN)|."""
    m_hat = np.asarray(m_hat, dtype=np.float64)
    m1 = np.asarray(m1, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    p_low = degrade(p0, profile, gains=(profile.pan_nyquist_gain,)).value
    diffs = [abs(uiqi(m_hat[b], p0, window) - uiqi(m1[b], p_low, window))
             for b in range(m_hat.shape[0])]
    return float(np.mean(diffs))


def d_rho(m_hat, p0, profile: SensorProfile) -> float:
    """Mean correlation shortfall max(0, 1 - rho) at sigma = R; invalid sites add 0."""
    field = correlation_field(p0, m_hat, profile.ratio, profile.dynamic_range)
    short = np.where(field.valid, np.maximum(0.0, 1.0 - field.values), 0.0)
    return float(short.mean())


def reprojection_indexes(m_hat, m1, profile: SensorProfile, window: int = WINDOW):
    """(R-SAM, R-ERGAS, R-Q2n) between D(m_hat) and the MS."""
    low = _project(m_hat, profile)
    return sam(low, m1), ergas(low, m1, profile.ratio), q2n(low, m1, window)


def evaluate(m_hat, m1, p0, profile: SensorProfile, m0=None) -> QualityReport:
    low = _project(m_hat, profile)
    r_sam, excluded = sam_with_count(low, m1)
    r_q2n = q2n(low, m1)
    full = None
    if m0 is not None:
        full = {"sam": sam(m_hat, m0), "ergas": ergas(m_hat, m0, profile.ratio),
                "q2n": q2n(m_hat, m0)}
    return QualityReport(
        d_rho=d_rho(m_hat, p0, profile),
        d_s=d_s(m_hat, m1, p0, profile),
        d_lambda_k=1.0 - r_q2n,
        r_sam=r_sam,
        r_ergas=ergas(low, m1, profile.ratio),
        r_q2n=r_q2n,
        r_sam_excluded=excluded,
        full_reference=full,
    )
