import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weighted_bp.bp_core import (
    bp_check_layer,
    bp_decode,
    bp_marginalize,
    bp_variable_layer,
    hard_decision,
)
from weighted_bp.channel import make_rng, sample_eval_frames
from weighted_bp.code_graph import (
    ParityCheckCode,
    all_codewords,
    compile_trellis,
    derive_generator,
    encode,
    uncoded,
)

INF = np.inf


def exact_posterior(code, llr):
    """Brute-force bitwise log-odds of one over all codewords."""
    words = all_codewords(code).astype(float)
    scores = words @ llr
    out = np.empty(code.n)
    for v in range(code.n):
        one = np.logaddexp.reduce(scores[words[:, v] == 1])
        zero = np.logaddexp.reduce(scores[words[:, v] == 0])
        out[v] = one - zero
    return out


@pytest.fixture(scope="module")
def single():
    return compile_trellis(ParityCheckCode([[1, 1, 1]]), 1)


@pytest.fixture(scope="module")
def tree_code():
    # two degree-4 checks sharing bit 3: cycle-free, even check degrees
    h = [[1, 1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1, 1]]
    return derive_generator(ParityCheckCode(h))


class TestVariableLayer:
    def test_hand_example(self):
        # bit 0 sits in three checks; edge (0, c0) adds the other two messages
        code = ParityCheckCode([[1, 1], [1, 0], [1, 0]])
        layout = compile_trellis(code, 1)
        llr = np.array([1.0, 0.0])
        prev = np.zeros(layout.num_edges)
        e0, e1, e2 = np.flatnonzero(layout.edge_var == 0)
        prev[e1], prev[e2] = 0.5, -0.25
        out = bp_variable_layer(prev, llr, layout)[0]
        assert out[e0] == pytest.approx(1.25, abs=1e-15)

    def test_first_layer_replicates_llr(self, layout15, bch15):
        llr = make_rng(0).normal(size=15)
        out = bp_variable_layer(np.zeros(32), llr, layout15)[0]
        np.testing.assert_array_equal(out, llr[layout15.edge_var])

    def test_degree_one_ignores_prev(self):
        layout = compile_trellis(ParityCheckCode([[1, 1, 1]]), 1)
        out = bp_variable_layer(np.array([5.0, -3.0, 2.0]), np.array([0.1, 0.2, 0.3]), layout)
        np.testing.assert_array_equal(out[0], [0.1, 0.2, 0.3])

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, 32, elements=st.floats(-50, 50)))
    def test_clipped(self, layout15, prev):
        out = bp_variable_layer(prev, np.full(15, 3.0), layout15, clip=8.0)
        # A bounds the tanh argument, so LLR messages stay within 2A
        assert np.all(np.abs(out) <= 16.0)
        assert np.abs(out).max() == 16.0 or np.abs(prev).max() < 13.0


class TestCheckLayer:
    def test_hand_example(self, single):
        x = 2 * math.atanh(0.5)
        out = bp_check_layer(np.array([0.0, x, x]), single)[0]
        assert out[0] == pytest.approx(0.5108256237659907, rel=1e-12)

    def test_zero_absorbs(self, single):
        out = bp_check_layer(np.array([3.0, 0.0, 2.0]), single)[0]
        assert out[0] == 0.0 and out[2] == 0.0

    def test_sign_parity(self, single):
        base = bp_check_layer(np.array([1.0, 2.0, 3.0]), single)[0]
        flipped = bp_check_layer(np.array([1.0, -2.0, 3.0]), single)[0]
        assert np.all(base > 0)
        np.testing.assert_array_equal(np.sign(flipped), [-1.0, 1.0, -1.0])

    def test_saturation_finite(self, single):
        out = bp_check_layer(np.array([200.0, 200.0, 200.0]), single)[0]
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(2 * math.atanh(1 - 1e-12), rel=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 3, elements=st.floats(-6, 6)))
    def test_matches_direct_formula(self, x):
        layout = compile_trellis(ParityCheckCode([[1, 1, 1, 1]]), 1)
        msgs = np.concatenate([x, [1.5]])
        out = bp_check_layer(msgs, layout)[0]
        for e in range(4):
            prod = np.prod(np.tanh(np.delete(msgs, e) / 2))
            prod = np.clip(prod, -1 + 1e-12, 1 - 1e-12)
            assert out[e] == pytest.approx(2 * math.atanh(prod), rel=1e-9, abs=1e-12)


class TestDecode:
    def test_tree_code_exact(self, tree_code):
        layout = compile_trellis(tree_code, 2)
        rng = make_rng(3)
        for _ in range(20):
            llr = rng.normal(scale=2.0, size=7)
            res = bp_decode(tree_code, layout, llr, clip=INF)
            np.testing.assert_allclose(res.marginals, exact_posterior(tree_code, llr), rtol=1e-9)

    def test_tree_code_converged(self, tree_code):
        # more iterations than the tree depth leave the marginals unchanged
        llr = make_rng(4).normal(size=7)
        a = bp_decode(tree_code, compile_trellis(tree_code, 2), llr, clip=INF).marginals
        b = bp_decode(tree_code, compile_trellis(tree_code, 6), llr, clip=INF).marginals
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_marginalize_sums(self, layout15):
        llr = np.arange(15, dtype=float)
        msgs = np.ones(32)
        out = bp_marginalize(msgs, llr, layout15)[0]
        np.testing.assert_array_equal(out, llr + np.bincount(layout15.edge_var, minlength=15))

    @pytest.mark.parametrize("bit", range(7))
    def test_hamming_single_flip(self, hamming74, bit):
        layout = compile_trellis(hamming74, 5)
        llr = np.full(7, -4.0)
        llr[bit] = 1.0
        res = bp_decode(hamming74, layout, llr)
        assert not res.hard_bits.any() and res.syndrome_ok

    def test_hard_decision_zero_is_zero(self):
        np.testing.assert_array_equal(hard_decision(np.array([0.0, 1e-300, -1.0])), [0, 1, 0])

    def test_agreeing_checks_reinforce(self, hamming74):
        layout = compile_trellis(hamming74, 1)
        llr = np.full(7, -2.0)
        res = bp_decode(hamming74, layout, llr)
        assert np.all(np.abs(res.marginals) > 2.0)

    def test_early_stop(self, bch15, layout15):
        batch = sample_eval_frames(bch15, np.zeros(15), 4.0, 300, make_rng(9))
        full = bp_decode(bch15, layout15, batch.llrs)
        early = bp_decode(bch15, layout15, batch.llrs, early_stop=True)
        assert np.all(early.iterations_run <= 5)
        assert np.any(early.iterations_run < 5)
        np.testing.assert_array_equal(early.syndrome_ok[early.iterations_run < 5], True)
        # frames that never reach a codeword match the full run
        never = ~early.syndrome_ok
        np.testing.assert_array_equal(early.marginals[never], full.marginals[never])

    def test_single_and_batch_agree(self, bch15, layout15):
        llrs = make_rng(2).normal(size=(4, 15)) * 3
        batch = bp_decode(bch15, layout15, llrs)
        for i in range(4):
            one = bp_decode(bch15, layout15, llrs[i])
            np.testing.assert_array_equal(one.marginals, batch.marginals[i])
            assert one.syndrome_ok == batch.syndrome_ok[i]

    def test_codeword_covariance(self, bch63, layout63):
        rng = make_rng(5)
        llr = rng.normal(scale=3, size=(20, 63))
        word = encode(bch63, rng.integers(0, 2, 45))
        sign = 1.0 - 2.0 * word
        a = bp_decode(bch63, layout63, llr)
        b = bp_decode(bch63, layout63, llr * sign)
        np.testing.assert_array_equal(b.hard_bits, a.hard_bits ^ word)
        np.testing.assert_allclose(b.marginals, a.marginals * sign, rtol=1e-12)

    def test_rejects_zero_iterations(self, bch15, layout15):
        with pytest.raises(ValueError):
            bp_decode(bch15, layout15, np.zeros(15), iterations=0)

    def test_uncoded_passthrough(self):
        code = uncoded(4)
        res = bp_decode(code, compile_trellis(code, 1), np.array([-1.0, 2.0, 0.5, -3.0]))
        np.testing.assert_array_equal(res.hard_bits, [0, 1, 1, 0])
