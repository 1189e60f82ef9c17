"""End-to-end run at toy scale: data, training, quantization, reporting.

Generates a small synthetic moire dataset, trains the reference network
briefly, quantizes it to W4A4 with each bound-estimation method, and
compares test quality and compression.  The full-size benchmark lives in
the acceptance suite; this is the same pipeline shrunk to about a minute.
"""

import os
import tempfile

import numpy as np

import moirequant as mq

workdir = tempfile.mkdtemp(prefix="moirequant_demo_")
print(f"working under {workdir}")

print()
print("=== data ===")
manifest = mq.gen_dataset(7, {"train": 60, "calib": 12, "test": 12}, 48, 48,
                          os.path.join(workdir, "data"))
train = mq.load_pairs(manifest, "train")
calib = mq.load_pairs(manifest, "calib")
test = mq.load_pairs(manifest, "test")
print(f"{len(train)} train / {len(calib)} calib / {len(test)} test pairs at 48x48")

print()
print("=== full-precision backbone ===")
model = mq.build_model(7)
trace = mq.train_fp32(model, train, epochs=10, lr0=1e-3, seed=7)
print(f"trained 10 epochs ({len(trace)} steps), "
      f"loss {trace[0][2]:.4f} -> {trace[-1][2]:.4f}")
_, fp = mq.evaluate_model(model, test)
print(f"test: input psnr {fp['psnr_in']:.2f} dB -> restored {fp['psnr']:.2f} dB")

print()
print("=== W4A4 with each bound estimator ===")
results = {}
for method in ("minmax", "percentile", "sample", "quantdemoire"):
    qm, _ = mq.quantize_model(
        model, calib, 4, 4, method=method,
        sampler=mq.SamplerConfig(seed=7),
        calib_cfg=mq.CalibConfig(epochs=2, crop=48, seed=7))
    _, s = mq.evaluate_model(qm, test)
    results[method] = s
    print(f"  {method:>12}: psnr {s['psnr']:6.2f} dB  ssim {s['ssim']:.4f}")
print("(quantdemoire = sampled bounds + smoothing + fp16 extremes + calibration)")

print()
print("=== compression accounting ===")
qm, _ = mq.quantize_model(model, calib, 4, 4, method="quantdemoire",
                          sampler=mq.SamplerConfig(seed=7),
                          calib_cfg=mq.CalibConfig(epochs=2, crop=48, seed=7))
report = mq.report_compression(qm, 4, 4, 0.005, metrics={
    "psnr": results["quantdemoire"]["psnr"],
    "ssim": results["quantdemoire"]["ssim"]})
print(mq.format_report(report))

ckpt = os.path.join(workdir, "w4a4.qdck")
mq.save_checkpoint(ckpt, mq.model_to_entries(qm, method="quantdemoire",
                                             bits_w=4, beta=0.005))
print(f"quantized checkpoint written to {ckpt} "
      f"({os.path.getsize(ckpt) / 1024:.1f} KiB)")
