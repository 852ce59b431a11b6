"""Target adaptation in reduced-resolution (Wald) mode versus full
resolution, from the same start, scored against synthetic truth."""
from dataclasses import dataclass, field

import _common  # noqa: F401

from frpan import (AdaptConfig, FULL_RESOLUTION, REDUCED_WALD, NetworkArch, SceneSpec,
                   SensorProfile, d_rho, ergas, evaluate, expand, gen_scene, init_params, q2n,
                   sam, simulate_pair, target_adapt)


@dataclass
class Config:
    seeds: list = field(default_factory=lambda: [1])
    size: int = 256
    iterations: int = 100
    learning_rate: float = 1e-5


def main():
    cfg, out = _common.parse_config(Config, __doc__)
    profile = SensorProfile()
    runs = []
    for seed in cfg.seeds:
        m0 = gen_scene(SceneSpec(seed=seed, size=(cfg.size, cfg.size)))
        p0, m1, _ = simulate_pair(m0, profile)
        params = init_params(NetworkArch.default(4), seed=0)
        images = {"baseline": expand(m1, profile.ratio)}
        for mode in (REDUCED_WALD, FULL_RESOLUTION):
            config = AdaptConfig(mode, cfg.iterations, cfg.learning_rate)
            images[mode] = target_adapt(params, m1, p0, profile, config)[2]
        scores = {}
        for name, img in images.items():
            report = evaluate(img, m1, p0, profile, m0)
            scores[name] = {**report.to_dict(), "d_rho": d_rho(img, p0, profile)}
            print(f"seed {seed} {name:24s} SAM {sam(img, m0):.4f}  ERGAS "
                  f"{ergas(img, m0, profile.ratio):.4f}  Q4 {q2n(img, m0):.4f}  "
                  f"D_rho {scores[name]['d_rho']:.4f}  D_lambda {report.d_lambda_k:.4f}")
        runs.append({"seed": seed, "scores": scores})
    _common.write_results("wald_vs_full_resolution", cfg, {"runs": runs}, out)


if __name__ == "__main__":
    main()
