"""Unsupervised two-step denoising for noisy image sequences."""

__version__ = "0.1.0"

from .phantom import (DoseLevel, FrameSequence, PhantomSpec, apply_dose_noise,
                      clean_discrepancy, generate_clean_sequence)
from .sequence_io import (PatchSample, TrainingWindow, load_sequence,
                          make_windows, sample_patches, save_sequence,
                          split_train_val)
from .flow import (FlowEstimatorConfig, FlowField, compensate_window,
                   estimate_flow, warp)
from .temporal import RecursiveFilterConfig, effective_weights, recursive_filter
from .fusion import (FusionProducts, HighpassConfig, SWTBands, cross_fusion,
                     difference_maps, fft_highpass, fusion_products,
                     hf_components, hf_extract, iswt_haar1, local_variance,
                     optimal_average, swt_haar1)
from .networks import (StudentConfig, StudentNet, TeacherConfig, TeacherNet,
                       load_checkpoint, save_checkpoint)
from .losses import loss_hf, loss_pre, loss_recur, loss_step1, loss_total
from .metrics import line_profile, psnr, ssim
from .training import (ABLATION_TABLE, AblationConfig, AblationData,
                       OptimizerConfig, run_ablation, train_step1, train_step2)
from .pipeline import denoise
