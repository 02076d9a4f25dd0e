import numpy as np
import pytest

from merlin.autodiff.gradcheck import grad_check
from merlin.core.config import preset
from merlin.core.errors import ShapeError
from merlin.models.base import ParamSpec, init_param
from merlin.models.nets import (
    MLP,
    DeepLSTM,
    Encoder,
    ImageDecoder,
    ImageEncoder,
    Linear,
    ResBlock,
    ReturnDecoder,
    TransposedResBlock,
    to_chw,
    to_hwc,
    trunk_shape,
)
from merlin.verification import check_lstm_unroll


def test_linear_shapes_and_names(tape, rng):
    layer = Linear("head", 3, 2)
    assert layer.param_names() == ["head/w", "head/b"]
    p = tape.bind_params(layer.init_params(rng, "float64"))
    assert layer(p, tape.input("x", np.ones(3))).shape == (2,)
    with pytest.raises(ShapeError):
        layer(p, tape.input("y", np.ones(4)))


def test_mlp_layer_names():
    mlp = MLP("prior", 4, [5, 6], 2)
    assert mlp.param_names() == ["prior/l1/w", "prior/l1/b", "prior/l2/w", "prior/l2/b", "prior/l3/w", "prior/l3/b"]
    assert mlp.num_params() == 4 * 5 + 5 + 5 * 6 + 6 + 6 * 2 + 2


def test_truncated_normal_init(rng):
    w = init_param(ParamSpec("w", (400, 50), fan_in=400), rng, "float64")
    std = 1.0 / np.sqrt(400)
    assert np.all(np.abs(w) <= 2 * std)
    assert w.std() == pytest.approx(std * 0.88, rel=0.1)
    np.testing.assert_array_equal(init_param(ParamSpec("b", (3,)), rng), np.zeros(3))


def test_lstm_output_concatenates_layers(tape, rng):
    lstm = DeepLSTM("lstm", 3, 4, layers=2)
    p = tape.bind_params(lstm.init_params(rng, "float64"))
    state, h = lstm(p, lstm.zero_state("float64").on(tape), tape.input("x", rng.normal(size=3)))
    assert h.shape == (8,)
    assert len(state.h) == 2 and state.h[1].shape == (4,)
    np.testing.assert_array_equal(h.value[4:], state.h[1].value)


def test_lstm_zero_input_zero_params_keeps_zero_state(tape):
    lstm = DeepLSTM("lstm", 2, 3)
    p = tape.bind_params(lstm.zero_params("float64"))
    state, h = lstm(p, lstm.zero_state("float64").on(tape), tape.constant(np.zeros(2)))
    np.testing.assert_array_equal(h.value, np.zeros(3))
    np.testing.assert_array_equal(state.s[0].value, np.zeros(3))


def test_lstm_three_step_unroll_gradients():
    assert check_lstm_unroll(seed=3).passed


def test_resblock_and_dual_shapes(tape, rng):
    block = ResBlock("b", 1, 2, 3, stride=2)
    dual = TransposedResBlock("d", 1, 2, 3, stride=2)
    p = tape.bind_params({**block.init_params(rng, "float64"), **dual.init_params(rng, "float64")})
    x = tape.input("x", rng.normal(size=(1, 8, 8)))
    y = block(p, x)
    assert y.shape == (3, 4, 4)
    assert dual(p, y).shape == (1, 8, 8)


def test_resblock_gradients(tape, rng):
    block = ResBlock("b", 2, 2, 2, stride=2)
    params = block.init_params(rng, "float64")
    p = tape.bind_params(params)
    y = block(p, tape.input("x", rng.normal(size=(2, 6, 6))))
    tape.mark_output("loss", (y * tape.constant(rng.normal(size=y.shape))).sum())
    assert grad_check(tape, params, abs_tol=1e-9, max_entries=6, rng=rng) <= 1e-4


def test_image_codec_round_trip_shapes(tiny, tape, rng):
    encoder = ImageEncoder("enc", tiny)
    decoder = ImageDecoder("dec", tiny)
    p = tape.bind_params({**encoder.init_params(rng, "float64"), **decoder.init_params(rng, "float64")})
    e = encoder(p, tape.input("image", rng.uniform(size=(1, 8, 8))))
    assert e.shape == (tiny.embed_size,)
    assert np.all(np.abs(e.value) < 1.0)
    probs = decoder(p, tape.input("z", rng.normal(size=tiny.z_size)))
    assert probs.shape == (1, 8, 8)
    assert np.all((probs.value > 0) & (probs.value < 1))
    assert trunk_shape(tiny) == (tiny.resnet_channels, 4, 4)


def test_image_encoder_rejects_wrong_size(tiny, tape, rng):
    encoder = ImageEncoder("enc", tiny)
    p = tape.bind_params(encoder.init_params(rng, "float64"))
    with pytest.raises(ShapeError):
        encoder(p, tape.input("image", np.zeros((1, 16, 16))))


def test_encoder_appends_action_and_reward(tiny, tape, rng):
    encoder = Encoder("enc", tiny)
    p = tape.bind_params(encoder.init_params(rng, "float64"))
    action = np.zeros(tiny.num_actions)
    action[2] = 1.0
    e = encoder(p, tape.input("image", np.zeros((1, 8, 8))), tape.constant(action), tape.constant(np.float64(1.0)))
    assert e.shape == (encoder.output_size,)
    np.testing.assert_array_equal(e.value[tiny.embed_size:], np.append(action, 1.0))


def test_return_decoder_combines_value_and_advantage(tiny, tape, rng):
    decoder = ReturnDecoder("ret", tiny)
    p = tape.bind_params(decoder.init_params(rng, "float64"))
    action = np.eye(tiny.num_actions)[0]
    pred = decoder(p, tape.input("z", rng.normal(size=tiny.z_size)),
                   tape.input("logits", rng.normal(size=tiny.num_actions)), tape.constant(action))
    assert pred.return_hat.item() == pytest.approx(pred.value.item() + pred.advantage.item())


def test_layout_helpers_are_inverse(rng):
    image = rng.normal(size=(8, 8, 3))
    np.testing.assert_array_equal(to_hwc(to_chw(image)), image)


def test_full_size_trunk_is_four_by_four_by_sixty_four(tape, rng):
    config = preset()
    encoder = ImageEncoder("enc", config)
    p = tape.bind_params(encoder.init_params(rng, "float64"))
    x = tape.input("image", rng.uniform(size=(1, 32, 32)))
    for block in encoder.blocks:
        x = block(p, x)
    assert x.shape == (64, 4, 4)
    assert encoder.trunk_size == 1024
    e = encoder(p, tape["image"])
    assert e.shape == (500,)
    assert np.all(np.abs(e.value) < 1.0)


def test_zero_parameter_decoder_predicts_half(tape, rng):
    config = preset()
    decoder = ImageDecoder("dec", config)
    p = tape.bind_params(decoder.zero_params("float64"))
    probs = decoder(p, tape.input("z", rng.normal(size=config.z_size)))
    assert probs.shape == (1, 32, 32)
    np.testing.assert_array_equal(probs.value, 0.5)


def test_dual_layers_have_matching_kernel_counts():
    config = preset()
    encoder = ImageEncoder("enc", config)
    decoder = ImageDecoder("dec", config)
    assert len(encoder.blocks) == len(decoder.blocks)

    def kernels(block):
        return sorted(s.size for s in block.specs() if s.name.endswith("/w"))

    for down, up in zip(encoder.blocks, reversed(decoder.blocks)):
        assert kernels(down) == kernels(up)
