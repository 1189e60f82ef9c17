"""Compression accounting and histogram dumps."""

import numpy as np
import pytest

import moirequant as mq


def _quantized(bits_w=4, bits_a=4, beta=0.005, method="quantdemoire"):
    model = mq.build_model(20)
    pairs = []
    for i in range(3):
        clean = mq.gen_clean(200 + i, 16, 16)
        pairs.append((mq.gen_moire(clean, 200 + i), clean))
    qm, _ = mq.quantize_model(model, pairs, bits_w, bits_a, method=method,
                              beta=beta, run_calibration=False)
    return qm


class TestCompression:
    def test_w4_beta0_ops_reduction_exact(self):
        qm = _quantized(beta=0.005, method="minmax")  # beta unused by baselines
        rep = mq.report_compression(qm, 4, 4, 0.0)
        assert all(q.mixed.num_outliers == 0 for q in qm.quant)
        assert rep.ops_reduction_pct == 87.50

    def test_effective_weight_bits_convention(self):
        assert mq.effective_weight_bits(4, 0.005) == pytest.approx(4.06, abs=1e-9)
        rep = mq.report_compression(_quantized(), 4, 4, 0.005)
        assert rep.effective_weight_bits == pytest.approx(4.06, abs=1e-9)

    def test_fp32_zero_reduction(self):
        model = mq.build_model(21)
        rep = mq.report_compression(model, 32, 32, 0.0)
        assert rep.params_reduction_pct == 0.0
        assert rep.ops_reduction_pct == 0.0

    def test_totals_additive(self):
        rep = mq.report_compression(_quantized(), 4, 4, 0.005)
        assert rep.params_eff == pytest.approx(sum(r.params_eff for r in rep.layers))
        assert rep.params_fp32 == pytest.approx(sum(r.params_fp32 for r in rep.layers))
        assert rep.ops_eff == pytest.approx(sum(r.ops_eff for r in rep.layers))
        assert 0.0 <= rep.params_reduction_pct < 100.0
        assert 0.0 <= rep.ops_reduction_pct < 100.0

    def test_outlier_and_scale_overhead_counted(self):
        qm = _quantized(beta=0.01)
        rep = mq.report_compression(qm, 4, 4, 0.01)
        layer = rep.layers[2]
        q = qm.quant[2]
        n_out = q.mixed.num_outliers
        assert n_out > 0
        n_w = qm.layers[2].w.size
        c_out, c_in = qm.layers[2].w.shape[0], qm.layers[2].w.shape[1]
        expect = ((n_w - n_out) * 4 + n_out * 16 + n_out * 32
                  + c_out * 32 + (2 * c_out + 2 + c_in) * 32) / 32.0
        assert layer.params_eff == pytest.approx(expect)

    def test_ops_input_size_default(self):
        rep = mq.report_compression(mq.build_model(22), 32, 32, 0.0)
        n_w = sum(l.w.size for l in mq.build_model(22).layers)
        assert rep.ops_fp32 == pytest.approx(n_w * 224 * 224)

    def test_csv_and_text_deterministic(self, tmp_path):
        rep = mq.report_compression(_quantized(), 4, 4, 0.005)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        mq.write_report_csv(rep, p1)
        mq.write_report_csv(rep, p2)
        assert p1.read_bytes() == p2.read_bytes()
        text = mq.format_report(rep)
        assert "W4A4" in text and "%" in text


class TestHistogram:
    def test_counts_sum(self, tmp_path):
        rng = np.random.default_rng(0)
        vals = rng.uniform(size=100).astype(np.float32)
        p = tmp_path / "h.csv"
        mq.dump_histogram(vals, 10, p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count"
        counts = [int(l.split(",")[2]) for l in lines[1:]]
        assert sum(counts) == 100 and len(counts) == 10

    def test_constant_single_bin(self, tmp_path):
        p = tmp_path / "h.csv"
        mq.dump_histogram(np.full(37, 2.5, np.float32), 16, p)
        lines = p.read_text().strip().splitlines()
        assert len(lines) == 2
        lo, hi, count = lines[1].split(",")
        assert float(lo) == float(hi) == 2.5 and int(count) == 37

    def test_matches_direct_binning(self, tmp_path):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=5000)
        p = tmp_path / "h.csv"
        mq.dump_histogram(vals, 64, p)
        lines = p.read_text().strip().splitlines()[1:]
        counts = np.array([int(l.split(",")[2]) for l in lines])
        lo, hi = vals.min(), vals.max()
        edges = lo + (hi - lo) * np.arange(65) / 64
        direct = np.zeros(64, np.int64)
        for v in vals:  # independent binning pass
            b = int((v - lo) / (hi - lo) * 64)
            direct[min(b, 63)] += 1
        assert np.array_equal(counts, direct)
        # mode bin near zero for a centered gaussian
        centers = (edges[:-1] + edges[1:]) / 2
        assert abs(centers[counts.argmax()]) < 0.5

    def test_bins_validation(self, tmp_path):
        with pytest.raises(ValueError):
            mq.dump_histogram(np.ones(4), 1, tmp_path / "x.csv")
