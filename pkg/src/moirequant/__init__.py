"""Outlier-aware post-training quantization for a compact demoireing CNN.

The toolkit covers the full loop: a seeded synthetic moire benchmark, a
small trainable residual CNN, affine fake quantization with
straight-through gradients, sampling-based outlier-aware range
estimation with channel smoothing and mixed-precision weight storage,
frequency-weighted calibration of activation bounds, and
compression/quality reporting.
"""

from .bench import (DatasetManifest, ManifestEntry, MoireParams, gen_clean,
                    gen_dataset, gen_moire, load_pairs, psnr, read_manifest,
                    ssim, write_manifest)
from .frequency import (CalibConfig, FreqConfig, LOWPASS_KERNEL, LossReport,
                        PerceptualProxy, calib_loss, calibrate,
                        frequency_extract, frequency_extract_backward,
                        perceptual_proxy, write_loss_trace)
from .network import (ARCH, ConvLayer, LayerQuant, ModelGraph, build_model,
                      evaluate_model, load_checkpoint, model_from_entries,
                      model_to_entries, quantize_model, save_checkpoint,
                      train_fp32, QUANT_METHODS)
from .ops import PadMode, conv2d, conv2d_grad_bias, conv2d_grad_input, conv2d_grad_weight
from .optim import AdamState, adam_step, cosine_lr, cosine_window
from .outliers import (MixedWeight, SamplerConfig, SmoothingVector,
                       apply_smoothing, baseline_bounds,
                       compute_smoothing_factors, mixed_weight_apply,
                       percentile, sample_channel_max, sample_tensor_bounds,
                       split_weights)
from .quantize import (QuantParams, QuantizedTensor, compute_qparams,
                       dequantize_codes, fake_quantize, qconv_forward,
                       quantize_codes, quantize_tensor, ste_backward)
from .reporting import (CompressionReport, dump_histogram,
                        effective_weight_bits, format_report,
                        report_compression, write_report_csv)
from .rng import Xoshiro256, sample_indices, splitmix64
from .tensorio import (BadMagicError, ImageFormatError, TensorFormatError,
                       TruncatedFileError, read_ppm, read_tensor, write_ppm,
                       write_tensor)

__version__ = "0.1.0"
