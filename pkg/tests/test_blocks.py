import numpy as np
import pytest

from actsched import blocks
from actsched.nn.autodiff import Tensor


def tensor(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_embed_step_width_and_duration_slot():
    table = tensor(np.arange(12.0).reshape(4, 3))
    tokens = np.array([2, 0, 3])
    durs = tensor([[0.25], [0.0], [0.5]])
    out = blocks.embed_step(table, tokens, durs)
    assert out.value.shape == (3, 4)
    np.testing.assert_array_equal(out.value[:, :3], table.value[tokens])
    np.testing.assert_array_equal(out.value[:, 3], [0.25, 0.0, 0.5])


def test_embed_step_rejects_out_of_range_tokens():
    table = tensor(np.zeros((4, 3)))
    with pytest.raises(IndexError):
        blocks.embed_step(table, np.array([4]), tensor([[0.1]]))


def test_unembed_zero_everything_gives_uniform_and_half():
    hidden = tensor(np.zeros((2, 5)))
    w = tensor(np.zeros((5, 7)))
    b = tensor(np.zeros(7))
    logits, dur = blocks.unembed_step(hidden, w, b)
    assert logits.value.shape == (2, 6)
    assert dur.value.shape == (2, 1)
    out = blocks.step_output(logits, dur)
    np.testing.assert_allclose(np.asarray(out.probs), np.full((2, 6), 1 / 6), atol=1e-12)
    np.testing.assert_allclose(np.asarray(out.durations), 0.5, atol=1e-12)


def test_unembed_duration_is_sigmoid_of_last_column():
    hidden = tensor([[1.0, 0.0]])
    w = tensor([[0.0, 0.0, 2.0], [0.0, 0.0, 0.0]])
    b = tensor([0.0, 0.0, 0.0])
    logits, dur = blocks.unembed_step(hidden, w, b)
    assert logits.value.shape == (1, 2)
    np.testing.assert_allclose(dur.value[0, 0], 1 / (1 + np.exp(-2.0)), rtol=1e-12)


def test_encode_labels_is_sum_of_table_rows():
    t0 = tensor([[1.0, 2.0], [3.0, 4.0]])
    t1 = tensor([[10.0, 20.0], [30.0, 40.0], [50.0, 60.0]])
    labels = np.array([[0, 2], [1, 0]])
    out = blocks.encode_labels([t0, t1], labels)
    np.testing.assert_array_equal(out.value, [[51.0, 62.0], [13.0, 24.0]])


def test_encode_labels_rejects_bad_width_and_range():
    t0 = tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        blocks.encode_labels([t0], np.array([[0, 1]]))
    with pytest.raises(ValueError):
        blocks.encode_labels([t0], np.array([[2]]))


def test_latent_sample_zero_eps_returns_mean():
    lp = blocks.LatentParams(tensor([[1.5, -2.0]]), tensor([[0.3, 0.7]]))
    z = blocks.latent_sample(lp, np.zeros((1, 2)))
    np.testing.assert_allclose(z.value, [[1.5, -2.0]], atol=1e-12)


def test_latent_sample_unit_variance_returns_eps():
    lp = blocks.LatentParams(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 3))))
    eps = np.arange(6.0).reshape(2, 3)
    z = blocks.latent_sample(lp, eps)
    np.testing.assert_allclose(z.value, eps, atol=1e-12)


def test_latent_sample_moments():
    rng = np.random.default_rng(11)
    mu = np.array([[0.5, -1.0]])
    logvar = np.array([[0.4, -0.6]])
    lp = blocks.LatentParams(tensor(np.repeat(mu, 20000, 0)), tensor(np.repeat(logvar, 20000, 0)))
    z = blocks.latent_sample(lp, rng.standard_normal((20000, 2))).value
    np.testing.assert_allclose(z.mean(axis=0), mu[0], atol=0.03)
    np.testing.assert_allclose(z.var(axis=0), np.exp(logvar[0]), rtol=0.05)


def test_kld_standard_normal_is_zero():
    lp = blocks.LatentParams(tensor(np.zeros((3, 4))), tensor(np.zeros((3, 4))))
    assert float(blocks.kld(lp).value) == 0.0


def test_kld_unit_mean_shift_is_half_per_dimension():
    lp = blocks.LatentParams(tensor(np.ones((2, 3))), tensor(np.zeros((2, 3))))
    np.testing.assert_allclose(float(blocks.kld(lp).value), 1.5, rtol=1e-12)


def test_kld_inflated_variance_hand_value():
    # 0.5 * (e - 2) per dimension for mu 0, logvar 1
    lp = blocks.LatentParams(tensor(np.zeros((1, 1))), tensor(np.ones((1, 1))))
    np.testing.assert_allclose(float(blocks.kld(lp).value), 0.5 * (np.e - 2), rtol=1e-12)


def test_kld_collapsed_variance_stays_finite():
    lp = blocks.LatentParams(tensor([[0.0]]), tensor([[-20.0]]))
    v = float(blocks.kld(lp).value)
    assert np.isfinite(v)
    np.testing.assert_allclose(v, 0.5 * (np.exp(-20.0) - 1 + 20), rtol=1e-12)


def test_kld_per_sample_shape():
    lp = blocks.LatentParams(tensor(np.ones((4, 2))), tensor(np.zeros((4, 2))))
    per = blocks.kld_per_sample(lp)
    assert per.value.shape == (4,)
    np.testing.assert_allclose(per.value, 1.0, rtol=1e-12)
