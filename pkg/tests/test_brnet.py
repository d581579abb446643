import numpy as np
import pytest

from bdekit import nn
from bdekit.bitcore import BitSpec, ImageBuffer, degrade, high_bits_equal
from bdekit.brnet import (
    BRNet,
    ModelConfig,
    forward_padded,
    optblock_forward,
    prox_forward,
    resblock_forward,
    restore,
    restore_padded,
    rk4_forward,
    zero_output_groups,
)
from bdekit.errors import InvalidInputError
from bdekit.nn import Tensor
from bdekit.nn.params import ParamStore, conv_params
from helpers import conv2d_shifts, random_image

NF = 64


def relu(a):
    return np.maximum(a, 0)


def block_params(rng, kind, nf=NF, scale=0.05):
    ps = ParamStore(np.float64)
    if kind == "prox":
        for j in (1, 2, 3):
            conv_params(ps, f"p.conv{j}", nf, nf, 3, rng)
    elif kind == "rk4":
        for j in range(1, 5):
            conv_params(ps, f"p.g{j}.conv1", nf, nf, 3, rng)
            conv_params(ps, f"p.g{j}.conv2", nf, nf, 3, rng)
        ps.add("p.h", np.full((1, 1, 1, 1), 0.7))
    for k, t in ps.items():
        if k.endswith("bias"):
            t.data[...] = rng.uniform(-scale, scale, t.data.shape)
    return ps


def zero_all(ps):
    for _, t in ps.items():
        t.data[...] = 0


def conv_np(ps, prefix, x):
    return conv2d_shifts(x, ps[prefix + ".weight"].data, ps[prefix + ".bias"].data)


class TestProx:
    def test_zero_params_identity(self, rng):
        ps = block_params(rng, "prox")
        zero_all(ps)
        f = rng.standard_normal((1, NF, 4, 4))
        np.testing.assert_array_equal(prox_forward(Tensor(f), ps, "p").data, f)

    def test_shape(self, rng):
        f = rng.standard_normal((2, NF, 4, 6))
        assert prox_forward(Tensor(f), block_params(rng, "prox"), "p").shape == f.shape

    def test_composition_oracle(self, rng):
        ps = block_params(rng, "prox")
        f = rng.standard_normal((1, NF, 4, 4))
        y = relu(conv_np(ps, "p.conv1", f))
        y = relu(conv_np(ps, "p.conv2", y))
        expected = f + conv_np(ps, "p.conv3", y)
        np.testing.assert_allclose(prox_forward(Tensor(f), ps, "p").data, expected, atol=1e-10)

    def test_channel_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            prox_forward(Tensor(rng.standard_normal((1, 3, 4, 4))), block_params(rng, "prox"), "p")


class TestRK4:
    def test_zero_g_identity(self, rng):
        ps = block_params(rng, "rk4")
        for k, t in ps.items():
            if not k.endswith(".h"):
                t.data[...] = 0
        f = rng.standard_normal((1, NF, 4, 4))
        np.testing.assert_array_equal(rk4_forward(Tensor(f), ps, "p").data, f)

    def test_h_zero_identity(self, rng):
        ps = block_params(rng, "rk4")
        ps["p.h"].data[...] = 0
        f = rng.standard_normal((1, NF, 4, 4))
        np.testing.assert_array_equal(rk4_forward(Tensor(f), ps, "p").data, f)

    def test_composition_oracle(self, rng):
        ps = block_params(rng, "rk4")
        f = rng.standard_normal((1, NF, 4, 4))
        h = 0.7

        def g(j, v):
            return conv_np(ps, f"p.g{j}.conv2", relu(conv_np(ps, f"p.g{j}.conv1", v)))

        k1 = g(1, f)
        k2 = g(2, f + h / 2 * k1)
        k3 = g(3, f + h / 2 * k2)
        k4 = g(4, f + h * k3)
        expected = f + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        np.testing.assert_allclose(rk4_forward(Tensor(f), ps, "p").data, expected, atol=1e-10)


def optblock_params(rng, steps, nf=NF):
    ps = ParamStore(np.float64)
    for i in range(steps):
        for j in range(1, 5):
            conv_params(ps, f"o.step{i}.rk4.g{j}.conv1", nf, nf, 3, rng)
            conv_params(ps, f"o.step{i}.rk4.g{j}.conv2", nf, nf, 3, rng)
        ps.add(f"o.step{i}.rk4.h", np.ones((1, 1, 1, 1)))
        for j in (1, 2, 3):
            conv_params(ps, f"o.step{i}.prox.conv{j}", nf, nf, 3, rng)
    conv_params(ps, "o.res.conv1", nf, nf, 3, rng)
    conv_params(ps, "o.res.conv2", nf, nf, 3, rng)
    return ps


class TestOptBlock:
    def test_zero_params_identity(self, rng):
        ps = optblock_params(rng, 2)
        zero_all(ps)
        f = rng.standard_normal((1, NF, 4, 4))
        np.testing.assert_array_equal(optblock_forward(Tensor(f), ps, "o", 2).data, f)

    def test_single_step_composition(self, rng):
        ps = optblock_params(rng, 1)
        f = Tensor(rng.standard_normal((1, NF, 4, 4)))
        manual = rk4_forward(f, ps, "o.step0.rk4")
        manual = prox_forward(manual, ps, "o.step0.prox")
        manual = resblock_forward(manual, ps, "o.res")
        np.testing.assert_array_equal(optblock_forward(f, ps, "o", 1).data, manual.data)

    def test_stage_three_has_six_steps(self):
        model = BRNet(ModelConfig(base_filters=4), seed=0)
        steps = {p.split(".")[1] for p in model.params.paths() if p.startswith("enc3.step")}
        assert steps == {f"step{i}" for i in range(6)}
        for s in (1, 2):
            assert {p.split(".")[1] for p in model.params.paths() if p.startswith(f"enc{s}.step")} == {"step0"}


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.base_filters, cfg.opt_steps, cfg.stages, cfg.output_groups) == (64, (1, 1, 6), 3, 1)
        assert ModelConfig(max_bits=16).output_groups == 2

    def test_text_roundtrip(self):
        cfg = ModelConfig(base_filters=8, opt_steps=(1, 2, 3), max_bits=16)
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    @pytest.mark.parametrize("kwargs", [
        dict(opt_steps=(1, 1)), dict(opt_steps=(1, 0, 6)), dict(max_bits=8, output_groups=2),
        dict(max_bits=12),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            ModelConfig(**kwargs)

    def test_parameter_count_default(self):
        # 64 filters: 3x3 64->64 conv = 36928 params
        model = BRNet(seed=0)
        c33 = 64 * 64 * 9 + 64
        convs33 = 3 * 2 + (1 + 1 + 6) * 11 + 2 * 2 + 1  # res blocks, opt steps, dec res, out conv1
        expected = (
            (6 * 64 * 9 + 64) + convs33 * c33 + 8  # input conv, 8 RK step sizes
            + 2 * (64 * 256 + 256) + 2 * (128 * 64 + 64)  # decoder 1x1s
            + (64 * 3 * 9 + 3)
        )
        assert model.params.num_elements() == expected


@pytest.fixture(scope="module")
def small_model():
    return BRNet(ModelConfig(base_filters=8, opt_steps=(1, 1, 2)), seed=3, dtype=np.float64)


class TestForward:
    def test_range_and_shape(self, small_model, rng):
        spec = BitSpec(8, 4)
        lbd = degrade(random_image(rng, 12, 16), spec)
        wm = small_model.forward(lbd, spec)
        assert wm.shape == (12, 16, 3)
        assert np.all(wm.data > 0) and np.all(wm.data < 1)

    def test_half_step_when_output_zeroed(self, rng):
        model = BRNet(ModelConfig(base_filters=8, opt_steps=(1, 1, 1)), seed=1)
        zero_output_groups(model)
        for b in range(1, 8):
            spec = BitSpec(8, b)
            lbd = degrade(random_image(rng, 8, 8), spec)
            wm = model.forward(lbd, spec)
            assert np.all(wm.data == 0.5)
            out = restore(lbd, spec, model)
            np.testing.assert_array_equal(out.data, lbd.data + (1 << (b - 1)))

    def test_restore_192_to_200(self):
        model = BRNet(ModelConfig(base_filters=4, opt_steps=(1, 1, 1)), seed=1)
        zero_output_groups(model)
        lbd = ImageBuffer(np.full((4, 4, 3), 192), 8)
        assert np.all(restore(lbd, BitSpec(8, 4), model).data == 200)

    def test_dims_not_divisible_by_four(self, small_model, rng):
        spec = BitSpec(8, 2)
        lbd = degrade(random_image(rng, 10, 12), spec)
        with pytest.raises(InvalidInputError):
            small_model.forward(lbd, spec)
        wm = forward_padded(lbd, spec, small_model)
        assert wm.shape == (10, 12, 3)
        assert high_bits_equal(restore_padded(lbd, spec, small_model), lbd, spec)

    def test_depth_mismatch(self, small_model, rng):
        spec = BitSpec(16, 4)
        with pytest.raises(InvalidInputError):
            small_model.forward(degrade(random_image(rng, 8, 8, 16), spec), spec)

    def test_restore_preserves_high_bits_and_range(self, small_model, rng):
        for b in (1, 3, 5, 7):
            spec = BitSpec(8, b)
            lbd = degrade(random_image(rng, 8, 8), spec)
            out = small_model.restore(lbd, spec)
            assert high_bits_equal(out, lbd, spec)
            assert np.all(out.data >= lbd.data) and np.all(out.data <= lbd.data + (1 << b) - 1)

    def test_mirror_equivariance(self, rng):
        """With left-right symmetric kernels the network commutes with a horizontal flip."""
        model = BRNet(ModelConfig(base_filters=4, opt_steps=(1, 1, 1)), seed=5, dtype=np.float64)
        for path, t in model.params.items():
            if path.endswith(".weight") and t.data.shape[-1] == 3:
                t.data[...] = 0.5 * (t.data + t.data[..., ::-1])
            if path.endswith("up.weight"):
                # sub-pixel columns dx=0 and dx=1 must carry the same features
                w = t.data.reshape(-1, 2, 2, t.data.shape[1])
                w[:, :, 1] = w[:, :, 0]
            if path.endswith("up.bias"):
                b = t.data.reshape(-1, 2, 2)
                b[:, :, 1] = b[:, :, 0] = rng.uniform(-0.1, 0.1, b[:, :, 0].shape)
        spec = BitSpec(8, 3)
        lbd = degrade(random_image(rng, 8, 12), spec)
        flipped = ImageBuffer(lbd.data[:, ::-1], 8)
        a = model.forward(flipped, spec).data
        b = model.forward(lbd, spec).data[:, ::-1]
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_deterministic(self, rng):
        spec = BitSpec(8, 4)
        lbd = degrade(random_image(rng, 8, 8), spec)
        m1 = BRNet(ModelConfig(base_filters=4), seed=9)
        m2 = BRNet(ModelConfig(base_filters=4), seed=9)
        assert np.array_equal(m1.forward(lbd, spec).data, m2.forward(lbd, spec).data)


class TestHDR:
    def test_two_groups_combined(self, rng):
        model = BRNet(ModelConfig(base_filters=4, opt_steps=(1, 1, 1), max_bits=16), seed=2,
                      dtype=np.float64)
        assert "out2.conv2.weight" in model.params
        spec = BitSpec(16, 12)
        lbd = degrade(random_image(rng, 8, 8, 16), spec)
        x = model.make_input(lbd.data, spec.missing_bits)
        # recompute both groups by hand from the decoder feature
        wm = model(x).data
        assert wm.shape == (1, 3, 8, 8)
        assert np.all((wm >= 0) & (wm <= 1))
        out = model.restore(lbd, spec)
        assert high_bits_equal(out, lbd, spec)

    def test_combination_rule(self, rng):
        model = BRNet(ModelConfig(base_filters=4, opt_steps=(1, 1, 1), max_bits=16), seed=2)
        zero_output_groups(model)
        spec = BitSpec(16, 10)
        lbd = degrade(random_image(rng, 8, 8, 16), spec)
        wm = model.forward(lbd, spec).data
        np.testing.assert_allclose(wm, 0.5 + 0.5 / 256, rtol=1e-7)


def test_gradient_reaches_every_parameter(rng):
    model = BRNet(ModelConfig(base_filters=4, opt_steps=(1, 1, 2), max_bits=16), seed=4,
                  dtype=np.float64)
    lbd = rng.integers(0, 1 << 10, (2, 8, 8, 3)) << 6
    x = model.make_input(lbd, [6, 3])
    model.params.zero_grad()
    nn.l1_loss(model(x), rng.uniform(0, 1, (2, 3, 8, 8))).backward()
    dead = [k for k, t in model.params.items() if not np.any(t.grad != 0)]
    assert dead == []


def test_make_input_planes():
    model = BRNet(ModelConfig(base_filters=4), seed=0, dtype=np.float64)
    lbd = np.full((2, 4, 4, 3), 255)
    x = model.make_input(lbd, [1, 7]).data
    assert np.all(x[:, :3] == 1.0)
    assert np.all(x[0, 3:] == 2 / 255) and np.all(x[1, 3:] == 128 / 255)
