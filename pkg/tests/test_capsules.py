import numpy as np
import pytest

from capsctx import tensor as T
from capsctx.capsules import (check_stem, conv_stem, form_primary_capsules, predict, squash,
                              stem_output_size)
from capsctx.config import ConfigError, ModelConfig
from capsctx.model import CapsNet


def test_squash_examples():
    np.testing.assert_allclose(squash(T.Tensor([3.0, 4.0])).data, [15 / 26, 20 / 26], rtol=1e-9)  # delta guard costs ~2e-10
    np.testing.assert_array_equal(squash(T.Tensor(np.zeros(4))).data, np.zeros(4))
    rng = np.random.default_rng(0)
    v = rng.normal(size=5)
    v /= np.linalg.norm(v)
    assert abs(np.linalg.norm(squash(T.Tensor(v)).data) - 0.5) < 1e-8


def test_squash_bounded_and_direction_preserved():
    rng = np.random.default_rng(1)
    v = rng.normal(0, 10, (200, 6))
    out = squash(T.Tensor(v)).data
    n = np.linalg.norm(out, axis=-1)
    assert (n < 1).all()
    cos = (out * v).sum(-1) / (n * np.linalg.norm(v, axis=-1))
    np.testing.assert_allclose(cos, 1.0, atol=1e-12)


def test_stem_shape_arithmetic():
    # 36 -(9, stride 2)-> 14 -(9, stride 1)-> 6
    assert stem_output_size(36, 9, 2, 1) == 6
    feats = CapsNet(ModelConfig(dtype="float64")).features(np.zeros((1, 36, 36, 1)))
    assert feats.shape == (1, 6, 6, 64)


def test_stem_zero_image_zero_bias():
    m = CapsNet(ModelConfig(dtype="float64"))
    assert not m.features(np.zeros((2, 36, 36, 1))).data.any()


def test_stem_deterministic():
    img = np.random.default_rng(0).uniform(size=(2, 36, 36, 1))
    a = CapsNet(ModelConfig(seed=3)).features(img).data
    b = CapsNet(ModelConfig(seed=3)).features(img).data
    assert a.tobytes() == b.tobytes()


def test_check_stem_rejects_inconsistent_grid():
    with pytest.raises(ConfigError):
        check_stem(36, 9, 2, 1, 7)
    with pytest.raises(ConfigError):
        CapsNet(ModelConfig(grid_size=5))


def test_relu_only_after_first_conv():
    # negative second-layer bias must survive: no nonlinearity after conv 2
    img = T.Tensor(np.zeros((1, 5, 5, 1)))
    w1, b1 = T.Tensor(np.zeros((3, 3, 1, 2))), T.Tensor(np.array([-1.0, 2.0]))
    w2, b2 = T.Tensor(np.ones((3, 3, 2, 1))), T.Tensor(np.array([-5.0]))
    out = conv_stem(img, w1, b1, w2, b2, 1, 1).data
    # relu(-1)=0, relu(2)=2 -> 9 taps * 2 - 5
    np.testing.assert_array_equal(out, np.full((1, 1, 1, 1), 13.0))


def test_primary_capsule_counts():
    feats = T.Tensor(np.zeros((1, 6, 6, 64)))
    grid = form_primary_capsules(feats, 8)
    assert grid.depth == 8 and grid.num_capsules == 288
    assert not grid.flat().data.any()


def test_primary_capsules_channel_contiguous_row_major():
    rng = np.random.default_rng(2)
    n, d, ip = 3, 4, 2
    feats = rng.normal(size=(1, n, n, d * ip))
    flat = form_primary_capsules(T.Tensor(feats), ip).flat().data[0]
    seen = set()
    for n1 in range(n):
        for n2 in range(n):
            for dd in range(d):
                k = (n1 * n + n2) * d + dd
                seen.add(k)
                v = feats[0, n1, n2, dd * ip:(dd + 1) * ip]
                nv = np.linalg.norm(v)
                np.testing.assert_allclose(flat[k], v * nv / (1 + nv * nv), atol=1e-12)
    assert seen == set(range(n * n * d))


def test_primary_capsules_divisibility():
    with pytest.raises(ConfigError):
        form_primary_capsules(T.Tensor(np.zeros((1, 2, 2, 10))), 4)


def test_predict_matches_triple_loop():
    rng = np.random.default_rng(4)
    b, k, j, ip, idd = 2, 5, 3, 4, 6
    u = rng.normal(size=(b, k, ip))
    w = rng.normal(size=(k, j, ip, idd))
    got = predict(T.Tensor(u), T.Tensor(w)).data
    want = np.zeros((b, k, j, idd))
    for bb in range(b):
        for kk in range(k):
            for jj in range(j):
                for dd in range(idd):
                    want[bb, kk, jj, dd] = sum(u[bb, kk, i] * w[kk, jj, i, dd] for i in range(ip))
    np.testing.assert_allclose(got, want, atol=1e-12)
