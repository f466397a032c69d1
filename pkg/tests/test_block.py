import numpy as np
import pytest

from alf.autograd import Tape, grad_check
from alf.block import ALFBlock, alf_forward, decode_filters, encode_filters, reconstruction_loss
from alf.errors import ShapeError
from alf.tensor import ConvGeometry, conv2d_naive


def tiny_block(W_ref, E, W_exp, mask=None, **kw):
    W_ref = np.asarray(W_ref, np.float32)
    E = np.asarray(E, np.float32)
    W_exp = np.asarray(W_exp, np.float32)
    return ALFBlock(W_ref, E, W_exp, ConvGeometry(W_ref.shape[0]),
                    None if mask is None else np.asarray(mask, np.float32), **kw)


def random_block(rng, ci=3, co=5, k=3, c_code=None, stride=1, padding=1, **kw):
    b = ALFBlock.init(ci, co, k, stride, padding, c_code=c_code, rng=rng, **kw)
    b.E = rng.normal(size=b.E.shape).astype(np.float32)
    b.W_exp = rng.normal(size=b.W_exp.shape).astype(np.float32)
    return b


class TestEncode:
    def test_hand_example(self):
        b = tiny_block(np.array([2, 4]).reshape(1, 1, 1, 2), [[1], [1]], np.ones((1, 1, 1, 2)), [1])
        np.testing.assert_array_equal(encode_filters(b).ravel(), [6.0])

    def test_identity_encoder(self, rng):
        b = ALFBlock.init(3, 4, 3, rng=rng)
        b.E = np.eye(4, dtype=np.float32)
        np.testing.assert_array_equal(encode_filters(b), b.W_ref)

    def test_mask_annihilates(self, rng):
        b = random_block(rng)
        b.mask[2] = 0
        assert not encode_filters(b)[..., 2].any()
        assert encode_filters(b)[..., 1].any()


class TestDecode:
    def test_hand_example(self):
        out = decode_filters(np.array([6.0], np.float32).reshape(1, 1, 1, 1),
                             np.array([0.5, 0.25], np.float32).reshape(1, 1, 1, 2))
        np.testing.assert_array_equal(out.ravel(), [3.0, 1.5])

    def test_identity_decoder(self, rng):
        w = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
        np.testing.assert_array_equal(decode_filters(w, np.eye(4, dtype=np.float32).reshape(1, 1, 4, 4)), w)

    def test_zeros(self, rng):
        out = decode_filters(np.zeros((3, 3, 2, 4), np.float32), rng.normal(size=(1, 1, 4, 6)))
        assert not out.any()

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            decode_filters(np.zeros((1, 1, 1, 3)), np.zeros((1, 1, 2, 3)))


class TestForward:
    def test_zero_encoder_with_relu_gives_zero(self, rng):
        b = random_block(rng, sigma="relu")
        b.E[:] = 0
        out = alf_forward(b, rng.normal(size=(2, 6, 6, 3)).astype(np.float32))
        assert out.shape == (2, 6, 6, 5)
        assert not out.any()

    def test_hand_example(self):
        b = tiny_block(np.array([3, 0]).reshape(1, 1, 1, 2), [[1], [0]], np.array([1, -1]).reshape(1, 1, 1, 2),
                       sigma="identity")
        out = alf_forward(b, np.array([2.0], np.float32).reshape(1, 1, 1, 1))
        np.testing.assert_array_equal(out.ravel(), [6.0, -6.0])

    def test_equals_decoded_conv(self, rng):
        b = random_block(rng, sigma="identity")
        b.mask[[0, 3]] = 0
        x = rng.uniform(-1, 1, (2, 7, 7, 3)).astype(np.float32)
        ref = conv2d_naive(x, decode_filters(encode_filters(b), b.W_exp), b.geom)
        assert np.abs(alf_forward(b, x) - ref).max() <= 1e-4

    @pytest.mark.parametrize("k,s,p,c_code", [(1, 1, 0, 2), (3, 1, 1, 5), (3, 2, 1, 3), (5, 1, 0, 1)])
    def test_shape_preserved(self, rng, k, s, p, c_code):
        b = random_block(rng, ci=2, co=5, k=k, stride=s, padding=p, c_code=c_code)
        x = rng.normal(size=(2, 9, 9, 2)).astype(np.float32)
        standard = conv2d_naive(x, b.W_ref, b.geom)
        assert alf_forward(b, x).shape == standard.shape
        b.mask[0] = 0 if c_code > 1 else 1
        assert alf_forward(b, x).shape == standard.shape

    def test_tape_matches_numpy_path(self, rng):
        b = random_block(rng, sigma_inter="relu")
        b.mask[1] = 0
        x = rng.normal(size=(2, 5, 5, 3)).astype(np.float32)
        tape = Tape()
        out = b.tape_forward(tape, tape.leaf(x), b.tape_leaves(tape))
        np.testing.assert_allclose(out.value, alf_forward(b, x), atol=1e-5)
        rec = b.tape_reconstruction_loss(tape, b.tape_leaves(tape))
        assert float(rec.value) == pytest.approx(reconstruction_loss(b), rel=1e-5)


class TestReconstruction:
    def test_identity_is_lossless(self, rng):
        b = ALFBlock.init(3, 4, 3, rng=rng)
        b.E = np.eye(4, dtype=np.float32)
        b.W_exp = np.eye(4, dtype=np.float32).reshape(1, 1, 4, 4)
        assert reconstruction_loss(b) == 0.0

    def test_hand_value(self):
        b = tiny_block(np.array([2, 4]).reshape(1, 1, 1, 2), [[1], [1]], np.array([0.5, 0.25]).reshape(1, 1, 1, 2))
        assert reconstruction_loss(b) == pytest.approx(3.625, abs=1e-12)

    def test_scale_cancels(self, rng):
        b = random_block(rng)
        before = reconstruction_loss(b)
        b.W_exp = b.W_exp * 2
        b.E = b.E * 0.5
        assert reconstruction_loss(b) == pytest.approx(before, rel=1e-6)

    def test_non_negative(self, rng):
        assert reconstruction_loss(random_block(rng)) >= 0


def test_encode_decode_superposition(rng):
    b1, b2 = random_block(rng), random_block(rng)
    b2.E = b1.E.copy()
    mixed = ALFBlock(2 * b1.W_ref - 3 * b2.W_ref, b1.E, b1.W_exp, b1.geom)
    np.testing.assert_allclose(encode_filters(mixed), 2 * encode_filters(b1) - 3 * encode_filters(b2), atol=1e-5)
    wc = encode_filters(b1)
    e1, e2 = b1.W_exp, b2.W_exp
    np.testing.assert_allclose(decode_filters(wc, 0.5 * e1 + e2),
                               0.5 * decode_filters(wc, e1) + decode_filters(wc, e2), atol=1e-5)


def test_combined_loss_grad_check(rng):
    b = random_block(rng, ci=2, co=4, k=3, sigma="identity")
    b.mask[1] = 0
    x = rng.normal(size=(2, 4, 4, 2))
    target = rng.normal(size=(2, 4, 4, 4))

    def f(tape, p):
        w_code = b.tape_encode(tape, p)
        task = tape.mse(b.tape_forward(tape, tape.leaf(x), p, w_code), tape.leaf(target))
        return tape.add(task, tape.scale(b.tape_reconstruction_loss(tape, p, w_code), 0.7))

    report = grad_check(f, {k: v.astype(np.float64) for k, v in b.parameters().items()}, tol=1e-3)
    assert report.passed, str(report)


def test_construction_invariants(rng):
    with pytest.raises(ShapeError):
        ALFBlock(np.zeros((3, 3, 2, 4)), np.zeros((4, 5)), np.zeros((1, 1, 5, 4)), ConvGeometry(3))
    with pytest.raises(ValueError):
        ALFBlock(np.zeros((3, 3, 2, 4)), np.zeros((4, 2)), np.zeros((1, 1, 2, 4)), ConvGeometry(3),
                 mask=np.zeros(2))
    b = ALFBlock.init(2, 6, 3, rng=rng)
    assert b.c_code == 6 and b.mask.sum() == 6
    np.testing.assert_allclose(b.E, np.eye(6), atol=0.06)
    np.testing.assert_array_equal(b.W_exp[0, 0], b.E.T)
