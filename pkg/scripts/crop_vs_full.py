"""Adapt on a crop versus the whole scene, scored on the crop against truth."""
from dataclasses import dataclass, field

import _common  # noqa: F401

import time

from frpan import (NetworkArch, SceneSpec, SensorProfile, crop_adapt, ergas, expand, gen_scene,
                   init_params, q2n, sam, simulate_pair, target_adapt)


@dataclass
class Config:
    seeds: list = field(default_factory=lambda: [1])
    size: int = 256
    window: list = field(default_factory=lambda: [64, 64, 128, 128])


def main():
    cfg, out = _common.parse_config(Config, __doc__)
    profile = SensorProfile()
    row, col, h, w = cfg.window
    area = (slice(None), slice(row, row + h), slice(col, col + w))
    runs = []
    for seed in cfg.seeds:
        m0 = gen_scene(SceneSpec(seed=seed, size=(cfg.size, cfg.size)))
        p0, m1, _ = simulate_pair(m0, profile)
        params = init_params(NetworkArch.default(4), seed=0)
        t0 = time.perf_counter()
        full = target_adapt(params, m1, p0, profile)[2][area]
        t_full = time.perf_counter() - t0
        t0 = time.perf_counter()
        crop = crop_adapt(params, m1, p0, cfg.window, profile)[1]
        t_crop = time.perf_counter() - t0
        truth, base = m0[area], expand(m1, profile.ratio)[area]
        row_scores = {name: {"sam": sam(img, truth), "ergas": ergas(img, truth, profile.ratio),
                             "q2n": q2n(img, truth)}
                      for name, img in (("full", full), ("crop", crop), ("baseline", base))}
        rel = abs(row_scores["crop"]["sam"] - row_scores["full"]["sam"]) / row_scores["full"]["sam"]
        print(f"seed {seed}: SAM full {row_scores['full']['sam']:.4f}, crop "
              f"{row_scores['crop']['sam']:.4f}, baseline {row_scores['baseline']['sam']:.4f}; "
              f"relative gap {rel:.1%}; {t_full:.0f} s vs {t_crop:.0f} s")
        runs.append({"seed": seed, "scores": row_scores, "relative_sam_gap": rel,
                     "seconds": {"full": t_full, "crop": t_crop}})
    _common.write_results("crop_vs_full", cfg, {"runs": runs}, out)


if __name__ == "__main__":
    main()
