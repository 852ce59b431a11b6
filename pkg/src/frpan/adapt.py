"""Pretraining, target adaptation and the reduced-resolution baseline."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .loss import LossBreakdown, reference_field, total_loss
from .network import AdamState, NetworkParams, NumericError, adam_step, forward, forward_graph
from .resample import BandShifts, SensorProfile, degrade, estimate_band_shifts

log = logging.getLogger(__name__)

FULL_RESOLUTION = "full-resolution"
REDUCED_WALD = "reduced-resolution-wald"
DEFAULT_ADAPT_ITERS = 100
DEFAULT_PRETRAIN_ITERS = 2000


class NumericAbort(NumericError):
    """Raised when the loss turns non-finite; carries the last good weights."""

    def __init__(self, message, params: NetworkParams, train_log: "TrainLog"):
        super().__init__(message)
        self.params = params
        self.train_log = train_log


@dataclass
class AdaptConfig:
    mode: str = FULL_RESOLUTION
    iterations: int = DEFAULT_ADAPT_ITERS
    learning_rate: float | None = None   # None: use the profile's rate
    seed: int = 0
    shifts: str = "pre-estimated"        # or "off"
    log_every: int = 100
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.mode not in (FULL_RESOLUTION, REDUCED_WALD):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.shifts not in ("off", "pre-estimated"):
            raise ValueError(f"unknown shift handling {self.shifts!r}")


@dataclass
class TrainLog:
    losses: list[LossBreakdown] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    shifts: BandShifts | None = None

    def __len__(self):
        return len(self.losses)

    def records(self):
        return [{"iter": i, **b.as_dict(), "seconds": s}
                for i, (b, s) in enumerate(zip(self.losses, self.seconds))]

    def to_jsonl(self) -> str:
        # beta is constant for the run; keep the documented line schema
        keys = ("iter", "spectral", "spatial", "total", "seconds")
        return "".join(json.dumps({k: r[k] for k in keys}) + "\n" for r in self.records())


def wald_downgrade(m1, p0, profile: SensorProfile):
    """Reduced-resolution pair (M2, P1) = (D(M1), D(P0))."""
    m2 = degrade(np.asarray(m1, dtype=np.float64), profile).value
    p1 = degrade(np.asarray(p0, dtype=np.float64), profile, gains=(profile.pan_nyquist_gain,)).value
    return m2, p1


def _clip(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if max_norm and norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


def _optimize(params, net_m1, net_p0, loss_fn, iterations, lr, profile, clip_norm,
              callback=None):
    arrays = [a.copy() for a in params.arrays()]
    state = AdamState.zeros_like(params, profile.adam_beta1, profile.adam_beta2, profile.adam_eps)
    train_log = TrainLog()
    for it in range(iterations):
        t0 = time.perf_counter()
        nodes = [ad.parameter(a) for a in arrays]
        out = forward_graph(params.with_arrays(arrays), net_m1, net_p0, profile.ratio, nodes)
        breakdown = loss_fn(out)
        if not np.isfinite(breakdown.total):
            raise NumericAbort(f"non-finite loss at iteration {it}",
                               params.with_arrays(arrays), train_log)
        grads = ad.backward(breakdown.node, wrt=nodes)
        grads = _clip([grads[n] for n in nodes], clip_norm)
        try:
            arrays, state = adam_step(arrays, grads, state, lr)
        except NumericError as exc:
            raise NumericAbort(str(exc), params.with_arrays(arrays), train_log) from exc
        breakdown.node = None
        train_log.losses.append(breakdown)
        train_log.seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(it, breakdown, params.with_arrays(arrays))
    return params.with_arrays(arrays), train_log


def target_adapt(params: NetworkParams, m1, p0, profile: SensorProfile,
                 config: AdaptConfig | None = None, callback: Callable | None = None):
    """Fine-tune ``params`` on one target, then pansharpen it.

    Returns (adapted params, TrainLog, pansharpened image). The log holds
    the loss evaluated before each of the ``config.iterations`` updates.
    """
    config = config or AdaptConfig()
    m1 = np.asarray(m1, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    lr = config.learning_rate or profile.learning_rate

    if config.mode == FULL_RESOLUTION:
        if config.shifts == "pre-estimated":
            shifts = estimate_band_shifts(m1, p0, profile)
        else:
            shifts = BandShifts.zeros(m1.shape[0])
        ref = reference_field(p0, m1, profile)

        def loss_fn(out):
            return total_loss(p0, m1, out, shifts, ref, profile)

        net_m1, net_p0 = m1, p0
    else:
        shifts = BandShifts.zeros(m1.shape[0])
        m2, p1 = wald_downgrade(m1, p0, profile)

        def loss_fn(out):
            l1 = ad.reduce_mean(ad.abs_(ad.sub(out, m1)))
            value = float(l1.value)
            return LossBreakdown(value, 0.0, value, float(profile.beta), node=l1)

        net_m1, net_p0 = m2, p1

    adapted, train_log = _optimize(params, net_m1, net_p0, loss_fn, config.iterations, lr,
                                   profile, config.clip_norm, callback)
    train_log.shifts = shifts
    if train_log.losses:
        log.info("adapted %d iterations: total %.4g -> %.4g", config.iterations,
                 train_log.losses[0].total, train_log.losses[-1].total)
    return adapted, train_log, forward(adapted, m1, p0, profile.ratio)


def pretrain(params: NetworkParams, m1, p0, profile: SensorProfile,
             iterations: int | None = None, checkpoint: Callable | None = None,
             log_every: int = 100, callback: Callable | None = None) -> NetworkParams:
    """Full-resolution training on one scene with the pretraining budget.

    ``checkpoint(iteration, params)`` is called every ``log_every`` updates.
    """
    iterations = profile.pretrain_iters if iterations is None else iterations

    def hook(it, breakdown, current):
        if callback is not None:
            callback(it, breakdown, current)
        if checkpoint is not None and (it + 1) % log_every == 0:
            checkpoint(it + 1, current)

    config = AdaptConfig(FULL_RESOLUTION, iterations, profile.learning_rate, log_every=log_every)
    adapted, _, _ = target_adapt(params, m1, p0, profile, config, hook)
    return adapted


def crop_adapt(params: NetworkParams, m1, p0, window, profile: SensorProfile,
               config: AdaptConfig | None = None):
    """Adapt and pansharpen on a PAN-scale window (row, col, height, width).

    Origin and size must lie on the MS grid; at least 8x8 MS pixels.
    """
    r = profile.ratio
    row, col, height, width = (int(v) for v in window)
    p0 = np.asarray(p0)
    m1 = np.asarray(m1)
    if any(v % r for v in (row, col, height, width)):
        raise ValueError(f"window {window} is not aligned to the ratio-{r} grid")
    if height < 8 * r or width < 8 * r:
        raise ValueError(f"window must cover at least 8x8 MS pixels ({8 * r}x{8 * r} PAN)")
    if row < 0 or col < 0 or row + height > p0.shape[1] or col + width > p0.shape[2]:
        raise ValueError("window exceeds the image")
    p0c = p0[:, row:row + height, col:col + width]
    m1c = m1[:, row // r:(row + height) // r, col // r:(col + width) // r]
    adapted, _, out = target_adapt(params, m1c, p0c, profile, config)
    return adapted, out
