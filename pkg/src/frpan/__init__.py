"""Full-resolution pansharpening with target adaptation, on a small
hand-written reverse-mode autodiff core."""
from .adapt import (AdaptConfig, FULL_RESOLUTION, NumericAbort, REDUCED_WALD, TrainLog,
                    crop_adapt, pretrain, target_adapt, wald_downgrade)
from .io import RunConfig, read_tensor, write_tensor, export_preview
from .loss import correlation_field, reference_field, spatial_loss, spectral_loss, total_loss
from .metrics import QualityReport, d_lambda_k, d_rho, d_s, ergas, evaluate, q2n, sam, uiqi
from .network import NetworkArch, NetworkParams, forward, init_params, load_params, save_params
from .resample import (BandShifts, SensorProfile, degrade, estimate_band_shifts, expand,
                       lowpass_pan, mtf_kernel, shift_decimate)
from .synth import PanWeights, SceneSpec, gen_scene, inject_shift, simulate_pair

__version__ = "0.1.0"
