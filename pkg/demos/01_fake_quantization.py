"""Walk through affine fake quantization on a handful of values.

Shows how bounds map to a scale/zero-point, what the quantization grid
does to values inside and outside the bounds, and the properties the
rest of the toolkit leans on (idempotence, bounded error, monotonicity).
"""

import numpy as np

import moirequant as mq

print("=== grid from bounds ===")
qp = mq.compute_qparams(-1.0, 1.0, 4)
print(f"bounds [-1, 1] at 4 bits -> scale {float(qp.scale):.6f}, "
      f"zero point {int(qp.zero_point)} of {qp.levels}")

values = np.float32([-1.4, -1.0, -0.3, 0.0, 0.21, 0.97, 1.0, 2.5])
fq = mq.fake_quantize(values, qp)
codes = mq.quantize_codes(values, qp)
print(f"{'value':>8} {'code':>5} {'fake-quantized':>15}")
for v, c, q in zip(values, codes, fq):
    marker = "  (clipped)" if v < -1.0 or v > 1.0 else ""
    print(f"{v:8.3f} {int(c):5d} {q:15.6f}{marker}")

print()
print("=== properties ===")
rng = np.random.default_rng(0)
v = rng.normal(scale=1.2, size=10_000).astype(np.float32)
once = mq.fake_quantize(v, qp)
twice = mq.fake_quantize(once, qp)
print("idempotent (bit-exact):", np.array_equal(once, twice))

inside = v[(v >= -1.0) & (v <= 1.0)]
err = np.abs(mq.fake_quantize(inside, qp) - inside)
print(f"max in-range error {err.max():.6f} <= scale/2 = {float(qp.scale) / 2:.6f}")

sv = np.sort(v)
print("monotone:", bool((np.diff(mq.fake_quantize(sv, qp)) >= 0).all()))

print()
print("=== more bits, finer grid ===")
for bits in (3, 4, 6, 8):
    qp_b = mq.compute_qparams(-1.0, 1.0, bits)
    err = np.abs(mq.fake_quantize(inside, qp_b) - inside).max()
    print(f"  {bits} bits: worst in-range error {err:.6f}")
