"""Finite-difference audit of every differentiable op and of the training loss."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .loss import reference_field, spatial_loss, spectral_loss, total_loss
from .network import NetworkArch, forward_graph, init_params
from .resample import BandShifts, SensorProfile, shift_decimate

TOLERANCE = 1e-4


def _away_from_zero(rng, shape, gap=0.2):
    u = rng.uniform(-1, 1, shape)
    return np.sign(u) * (gap + np.abs(u))


def _project(node, weights):
    """Scalar probe sum(w * node) / n with fixed random weights."""
    return ad.reduce_mean(ad.mul(node, weights))


def _cases(rng, size):
    """(name, builder, point) triples for one random instance."""
    b, h, w = 2, size, size
    x = rng.standard_normal((b, h, w))
    pos = rng.uniform(0.5, 2.0, (b, h, w))
    kinked = _away_from_zero(rng, (b, h, w))
    wts = rng.standard_normal((b, h, w))
    other = rng.standard_normal((b, h, w))

    def probe(fn, shape=(b, h, w)):
        weights = rng.standard_normal(shape)
        return lambda v: _project(fn(v), weights)

    kernel = rng.standard_normal((3, b, 3, 3))
    depth = rng.standard_normal((b, 1, 5, 1))
    bias = rng.standard_normal(3)
    rows = rng.integers(0, h, 5)

    yield "add", probe(lambda v: ad.add(v, other)), x
    yield "sub", probe(lambda v: ad.sub(other, v)), x
    yield "mul", probe(lambda v: ad.mul(v, ad.mul(v, wts))), x
    yield "div", probe(lambda v: ad.div(ad.mul(v, other), v * v)), pos
    yield "scale", probe(lambda v: ad.scale(v, -2.5)), x
    yield "relu", probe(ad.relu), kinked
    yield "abs", probe(ad.abs_), kinked
    yield "sqrt", probe(ad.sqrt), pos
    yield "clamp-min", probe(lambda v: ad.clamp_min(v, 0.0)), kinked
    yield "reduce-mean", lambda v: ad.reduce_mean(ad.mul(v, v)), x
    yield "concat-bands", probe(lambda v: ad.concat_bands([v, ad.mul(v, v)]), (2 * b, h, w)), x
    yield "pad-replicate", probe(lambda v: ad.pad_replicate(v, 1, 2, 3, 0), (b, h + 3, w + 3)), x
    yield "crop", probe(lambda v: ad.crop(v, slice(0, 1), rows, slice(2, 9)), (1, 5, 7)), x
    yield "box-sum", probe(lambda v: ad.box_sum(v, 3), (b, h - 2, w - 2)), x
    pan = rng.standard_normal((1, h, w))
    yield "window-var", probe(lambda v: ad.window_moments(pan, v, 3)[1], (b, h - 2, w - 2)), x
    # shared one-band x and multiband y both depend on the input
    yield "window-cov", probe(lambda v: ad.window_moments(ad.crop(v, slice(0, 1)),
                                                          ad.mul(v, other), 3)[2],
                              (b, h - 2, w - 2)), x
    yield "conv2d", probe(lambda v: ad.conv2d(v, kernel, bias), (3, h, w)), x
    yield "conv2d-weight", probe(lambda k: ad.conv2d(x, k, bias), (3, h, w)), kernel
    yield "conv2d-depthwise", probe(lambda v: ad.conv2d(v, depth, padding="valid", groups=b),
                                    (b, h - 4, w)), x


def _loss_cases(rng, size):
    profile = SensorProfile(ms_nyquist_gains=(0.29, 0.35), dynamic_range=4.0)
    r = profile.ratio
    low = size // r
    m_hat = 2.0 + rng.standard_normal((2, size, size))
    p0 = 2.0 + m_hat.mean(axis=0, keepdims=True) + 0.3 * rng.standard_normal((1, size, size))
    m1 = 2.0 + rng.standard_normal((2, low, low))
    shifts = BandShifts([(1, -2), (0, 3)])
    ref = reference_field(p0, m1, profile)
    weights = rng.standard_normal((2, low, low))

    yield ("shift-decimate", lambda v: _project(shift_decimate(v, shifts, profile), weights),
           m_hat)
    yield "spectral-loss", lambda v: spectral_loss(v, m1, shifts, profile), m_hat
    yield "spatial-loss", lambda v: spatial_loss(p0, v, ref, profile.sigma), m_hat
    yield "total-loss", lambda v: total_loss(p0, m1, v, shifts, ref, profile).node, m_hat

    arch = NetworkArch(((3, 4), (3, 2)), 3, True, input_scale=4.0)
    params = init_params(arch, seed=int(rng.integers(1 << 31)), dtype=np.float64,
                         zero_last=False)

    def through_network(k):
        nodes = [ad.constant(a) for a in params.arrays()]
        nodes[0] = k
        out = forward_graph(params, m1, p0, r, nodes)
        return total_loss(p0, m1, out, shifts, ref, profile).node

    yield "network-loss", through_network, params.weights[0]


def run_suite(instances: int = 3, size: int = 16, seed: int = 0, eps: float = 1e-5,
              samples: int = 20) -> list[ad.GradCheckReport]:
    """Worst relative error per op over ``instances`` random size x size cases."""
    if size % 4 or size < 12:
        raise ValueError("size must be a multiple of 4 and at least 12")
    worst: dict[str, ad.GradCheckReport] = {}
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        for name, builder, point in [*_cases(rng, size), *_loss_cases(rng, size)]:
            rep = ad.grad_check(builder, point, eps, op=name, samples=samples, seed=seed + i)
            prev = worst.get(name)
            if prev is None or rep.max_rel_error > prev.max_rel_error:
                worst[name] = ad.GradCheckReport(name, rep.max_rel_error,
                                                 rep.points + (prev.points if prev else 0))
            else:
                worst[name] = ad.GradCheckReport(name, prev.max_rel_error,
                                                 prev.points + rep.points)
    return list(worst.values())


def format_table(reports, tolerance: float = TOLERANCE) -> str:
    lines = [f"{'op':<18} {'max rel error':>14} {'points':>7}  status"]
    for r in reports:
        status = "ok" if r.max_rel_error < tolerance else "FAIL"
        lines.append(f"{r.op:<18} {r.max_rel_error:>14.3e} {r.points:>7}  {status}")
    return "\n".join(lines)
