import numpy as np
import pytest

from conftest import gradcheck
from dmmv import autodiff as ad
from dmmv.errors import ShapeMismatch
from dmmv.numerical import LinearForecaster, PatchTransformerForecaster
from dmmv.parameters import ParameterStore


def linear(input_len, horizon, seed=0):
    store = ParameterStore()
    return LinearForecaster(store, input_len, horizon, np.random.default_rng(seed)), store


def patch_tf(input_len, horizon, patch_len=3, dim=4, depth=1, heads=2, seed=0):
    store = ParameterStore()
    model = PatchTransformerForecaster(store, input_len, horizon,
                                       np.random.default_rng(seed), patch_len,
                                       dim, depth, heads)
    return model, store


class TestLinear:
    def test_zero_weight_outputs_bias(self):
        m, _ = linear(6, 4)
        m.weight.value[...] = 0.0
        m.bias.value[...] = 2.5
        out = m.forward(ad.constant(np.random.default_rng(0).standard_normal((3, 6))))
        np.testing.assert_allclose(out.data, 2.5)

    def test_identity_weight_passes_input_through(self):
        m, _ = linear(5, 5)
        m.weight.value[...] = np.eye(5)
        m.bias.value[...] = 0.0
        x = np.random.default_rng(1).standard_normal((2, 5))
        np.testing.assert_allclose(m.forward(ad.constant(x)).data, x, atol=1e-12)

    def test_gradcheck(self):
        m, store = linear(4, 3, seed=2)
        x = ad.constant(np.random.default_rng(3).standard_normal((2, 4)))
        y = ad.constant(np.random.default_rng(4).standard_normal((2, 3)))
        build = lambda: ad.mse(m.forward(x, train=True), y)
        worst = gradcheck([m.weight, m.bias], build)
        assert worst <= 1e-4

    def test_shape_mismatch(self):
        m, _ = linear(4, 3)
        with pytest.raises(ShapeMismatch):
            m.forward(ad.constant(np.zeros((2, 5))))


class TestPatchTransformer:
    def test_patch_count_paper_configuration(self):
        m, _ = patch_tf(336, 96, patch_len=16, dim=8, depth=1, heads=2)
        assert m.n_patches == 336 // 16 + 1 == 22

    @pytest.mark.parametrize("t,l", [(20, 16), (32, 16), (7, 3), (9, 3), (10, 10)])
    def test_patch_count_invariant(self, t, l):
        m, _ = patch_tf(t, 2, patch_len=l, dim=4, depth=1, heads=2)
        assert m.n_patches == t // l + 1

    def test_constant_path_zeroed_head_outputs_bias(self):
        m, _ = patch_tf(9, 4)
        m.head_w.value[...] = 0.0
        m.head_b.value[...] = -1.25
        out = m.forward(ad.constant(np.full((2, 9), 3.0)))
        np.testing.assert_allclose(out.data, -1.25)

    def test_tail_padding_repeats_final_value(self):
        m, _ = patch_tf(7, 2, patch_len=3)
        x = np.arange(7.0)[None, :]
        # 7 // 3 + 1 = 3 patches over [x, repeat(x[-1])]: [0,1,2], [3,4,5], [6,6,6]
        tail = ad.broadcast_to(ad.slice_(ad.constant(x), (slice(None), slice(6, 7))), (1, 3))
        padded = ad.concat([ad.constant(x), tail], axis=1)
        patches = ad.reshape(ad.slice_(padded, (slice(None), slice(0, 9))), (1, 3, 3))
        np.testing.assert_array_equal(patches.data[0],
                                      [[0, 1, 2], [3, 4, 5], [6, 6, 6]])

    def test_gradcheck_all_parameters(self):
        m, store = patch_tf(8, 2, patch_len=3, dim=4, depth=1, heads=2, seed=5)
        x = ad.constant(np.random.default_rng(6).standard_normal((2, 8)))
        y = ad.constant(np.random.default_rng(7).standard_normal((2, 2)))
        build = lambda: ad.mse(m.forward(x, train=True), y)
        worst = gradcheck(list(store), build)
        assert worst <= 1e-4

    def test_deterministic(self):
        m, _ = patch_tf(12, 5, patch_len=4, dim=4, depth=2, heads=2)
        x = ad.constant(np.random.default_rng(8).standard_normal((3, 12)))
        np.testing.assert_array_equal(m.forward(x).data, m.forward(x).data)
