import math

import numpy as np
import pytest
from scipy.stats import norm

from weighted_bp.channel import make_rng, snr_to_sigma
from weighted_bp.code_graph import CodeError, all_codewords, compile_trellis, uncoded
from weighted_bp.evaluator import (
    BerPoint,
    BerReport,
    BPDecoder,
    MLDecoder,
    NeuralDecoder,
    compare_decoders,
    covariance_audit,
    evaluate_ber,
    gain_db,
    ml_decode,
    snr_at_ber,
    uncoded_ber,
    wilson_interval,
)
from weighted_bp.neural_bp import init_weights


def synthetic_report(snrs, bers, name="x", n=100, frames=10**9):
    points = [BerPoint(s, frames, int(round(b * frames * n)), 0, name, 5, n)
              for s, b in zip(snrs, bers)]
    return BerReport(points, {"iterations": 5, "n": n})


class ThresholdDecoder:
    """Biased hard decision: not symmetric under sign flips."""

    decoder_id = "biased"
    iterations = 0

    def __call__(self, llr):
        return (np.asarray(llr) > 0.5).astype(np.uint8)


class TestMaximumLikelihood:
    def test_matches_min_distance(self, hamming74):
        words = all_codewords(hamming74)
        images = 1.0 - 2.0 * words
        rng = make_rng(0)
        sigma = 0.8
        y = 1.0 + sigma * rng.standard_normal((200, 7))
        llr = -2 * y / sigma**2
        got = ml_decode(hamming74, llr).hard_bits
        dist = ((y[:, None, :] - images[None]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(got, words[np.argmin(dist, axis=1)])

    def test_tie_goes_to_lowest_index(self, hamming74):
        res = ml_decode(hamming74, np.zeros(7))
        assert not res.hard_bits.any()

    def test_soft_output_max_log(self, hamming74):
        words = all_codewords(hamming74)
        llr = make_rng(1).normal(size=7) * 2
        scores = words @ llr
        expected = [scores[words[:, v] == 1].max() - scores[words[:, v] == 0].max()
                    for v in range(7)]
        np.testing.assert_allclose(ml_decode(hamming74, llr).marginals, expected, rtol=1e-12)

    def test_single_flip(self, hamming74):
        llr = np.full(7, -3.0)
        llr[2] = 2.0
        assert not MLDecoder(hamming74)(llr[None]).any()

    def test_refuses_large_k(self, bch63):
        with pytest.raises(CodeError, match="k <= 24"):
            MLDecoder(bch63)

    def test_chunking_invariant(self, bch15):
        llr = make_rng(2).normal(size=(30, 15)) * 3
        a = ml_decode(bch15, llr, chunk=64)
        b = ml_decode(bch15, llr, chunk=4096)
        np.testing.assert_array_equal(a.hard_bits, b.hard_bits)
        np.testing.assert_array_equal(a.marginals, b.marginals)


class TestStatistics:
    @pytest.mark.parametrize("snr", [0.0, 2.0, 5.0])
    def test_uncoded_closed_form(self, snr):
        expected = norm.sf(1 / snr_to_sigma(snr))
        assert uncoded_ber(snr) == pytest.approx(expected, rel=1e-12)

    def test_uncoded_zero_db(self):
        # Q(sqrt 2)
        assert uncoded_ber(0.0) == pytest.approx(0.5 * math.erfc(1.0), rel=1e-15)

    def test_wilson_published(self):
        lo, hi = wilson_interval(5, 100)
        assert lo == pytest.approx(0.0215, abs=1e-4) and hi == pytest.approx(0.1118, abs=1e-4)

    def test_wilson_zero(self):
        lo, hi = wilson_interval(0, 50)
        assert lo == 0.0 and 0 < hi < 0.08

    def test_uncoded_simulation(self):
        code = uncoded(64)
        report = evaluate_ber(code, BPDecoder(code, compile_trellis(code, 1)), [0.0, 4.0],
                              min_frame_errors=None, max_frames=4000, seed=3)
        for p in report.points:
            q = uncoded_ber(p.snr_db)
            sigma = math.sqrt(q * (1 - q) / (p.frames * 64))
            assert abs(p.ber - q) < 3 * sigma


class TestEvaluate:
    def test_deterministic_and_worker_independent(self, bch15, layout15):
        dec = BPDecoder(bch15, layout15)
        a = evaluate_ber(bch15, dec, [2.0, 4.0], min_frame_errors=30, seed=4, chunk_frames=200)
        b = evaluate_ber(bch15, dec, [2.0, 4.0], min_frame_errors=30, seed=4, chunk_frames=200)
        c = evaluate_ber(bch15, dec, [2.0, 4.0], min_frame_errors=30, seed=4, chunk_frames=200,
                         workers=2)
        assert a.to_tsv() == b.to_tsv() == c.to_tsv()

    def test_stops_on_frame_errors(self, bch15, layout15):
        report = evaluate_ber(bch15, BPDecoder(bch15, layout15), [1.0], min_frame_errors=50,
                              chunk_frames=100, seed=0)
        p = report.points[0]
        assert p.frame_errors >= 50 and p.frames % 100 == 0
        assert p.frames < 100_000

    def test_max_frames_cap(self, bch15, layout15):
        report = evaluate_ber(bch15, BPDecoder(bch15, layout15), [8.0], min_frame_errors=10**6,
                              max_frames=250, chunk_frames=100)
        assert report.points[0].frames == 250

    def test_ml_not_worse_than_bp(self, bch15, layout15):
        kw = dict(min_frame_errors=None, max_frames=3000, seed=7)
        bp = evaluate_ber(bch15, BPDecoder(bch15, layout15), [3.0], **kw)
        ml = evaluate_ber(bch15, MLDecoder(bch15), [3.0], **kw)
        assert ml.points[0].bit_errors <= bp.points[0].bit_errors

    def test_report_round_trip(self, bch15, layout15):
        report = evaluate_ber(bch15, BPDecoder(bch15, layout15), [1.0, 2.0],
                              min_frame_errors=None, max_frames=500)
        text = report.to_tsv()
        back = BerReport.from_tsv(text)
        assert back.to_tsv() == text
        assert back.metadata["decoder"] == "bp" and back.points[1].n == 15

    def test_report_requires_n(self):
        text = synthetic_report([1.0], [0.1]).to_tsv().replace("# n=100\n", "")
        with pytest.raises(ValueError, match="lacks n"):
            BerReport.from_tsv(text)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            BerReport.from_tsv("# n=3\nfoo\tbar\n")


class TestComparison:
    def test_log_linear_interpolation(self):
        assert snr_at_ber([1, 2], [1e-2, 1e-4], 1e-3) == pytest.approx(1.5)
        assert snr_at_ber([1, 2], [1e-2, 1e-4], 1e-5) is None

    def test_shifted_waterfall(self):
        snrs = np.arange(0.0, 10.01, 1.0)
        ref = [uncoded_ber(s) for s in snrs]
        better = [uncoded_ber(s + 0.5) for s in snrs]
        gain = gain_db(synthetic_report(snrs, ref), synthetic_report(snrs, better), 1e-4)
        assert gain == pytest.approx(0.5, abs=0.05)

    def test_disjoint_ranges_na(self):
        a = synthetic_report([1, 2, 3], [1e-1, 5e-2, 2e-2], "bp")
        b = synthetic_report([1, 2, 3], [1e-4, 1e-5, 1e-6], "neural")
        cmp = compare_decoders([a, b], targets=(1e-3,))
        assert cmp.gains[("neural:5", 1e-3)] is None
        assert cmp.table.rstrip().endswith("n/a")

    def test_grid_mismatch(self):
        a = synthetic_report([1, 2], [0.1, 0.01])
        b = synthetic_report([1, 3], [0.1, 0.01])
        with pytest.raises(ValueError, match="grid"):
            compare_decoders([a, b])

    def test_ratio_columns(self):
        a = synthetic_report([1, 2], [0.1, 0.01], "bp")
        b = synthetic_report([1, 2], [0.05, 0.002], "neural")
        rows = compare_decoders([a, b], targets=(0.02,)).table.splitlines()
        assert rows[1].split("\t") == ["snr_db", "ber[bp:5]", "ber[neural:5]", "ratio[neural:5]"]
        assert rows[2].split("\t")[-1] == "0.5"


class TestAudit:
    def test_bp_passes(self, bch15, layout15):
        report = covariance_audit(bch15, BPDecoder(bch15, layout15), num_codewords=20)
        assert report.passed and report.summary() == "PASS 20/20 codewords"

    def test_neural_passes(self, bch15, layout15):
        w = init_weights(layout15, init="normal", rng=0)
        assert covariance_audit(bch15, NeuralDecoder(layout15, w), num_codewords=20).passed

    def test_negative_control(self, bch15):
        report = covariance_audit(bch15, ThresholdDecoder(), num_codewords=20)
        assert not report.passed and report.failures
        assert report.summary().startswith("FAIL")

    def test_needs_generator(self):
        from weighted_bp.code_graph import ParityCheckCode
        with pytest.raises(CodeError):
            covariance_audit(ParityCheckCode([[1, 1, 1]]), ThresholdDecoder())
