import math

import numpy as np
import pytest

from tttlab.core import SgdConfig, backward, check_gradients
from tttlab.errors import ConfigError, ShapeError
from tttlab.harness.data import gen_synthetic
from tttlab.harness.train import TrainConfig, train_joint
from tttlab.selfsup import all_rotations
from tttlab.ymodel import (
    DESK_CONFIG, PRESETS, BlockSpec, YModelConfig, build_model, is_extractor, is_main, is_ssl, joint_loss, predict,
)

TINY = YModelConfig(input_shape=(3, 8, 8), blocks=(BlockSpec(8, 1, 4), BlockSpec(8, 2, 4)), split_index=1)


def tiny_images(rng, n=4):
    return rng.random((n, 3, 8, 8)).astype(np.float32)


class TestConfig:
    def test_default_architecture(self):
        cfg = YModelConfig()
        assert [b.channels for b in cfg.blocks] == [16, 32, 64]
        assert [b.stride for b in cfg.blocks] == [1, 2, 2]
        assert cfg.split_index == 2 and cfg.main_classes == 10

    def test_default_parameter_names(self):
        names = build_model(YModelConfig(), 0).tape.names()
        assert sum(n.startswith("extractor/block") and n.endswith("/conv") for n in names) == 2
        assert "main/block3/conv" in names and "ssl/block3/conv" in names
        assert build_model(YModelConfig(), 0).tape["main/head/weight"].shape == (10, 64)
        assert build_model(YModelConfig(), 0).tape["ssl/head/weight"].shape == (4, 64)

    @pytest.mark.parametrize("kwargs", [
        dict(split_index=0), dict(split_index=4), dict(blocks=()), dict(blocks=(BlockSpec(12, 1, 8),)),
        dict(ssl_classes=3), dict(main_classes=1), dict(dtype="int8"), dict(input_shape=(3, 32)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            YModelConfig(**kwargs)

    def test_dict_round_trip(self):
        assert YModelConfig.from_dict(DESK_CONFIG.to_dict()) == DESK_CONFIG

    def test_presets(self):
        assert PRESETS["three-block"] == YModelConfig()
        assert PRESETS["desk"].split_index == 3


class TestStructure:
    def test_prefix_partition(self):
        model = build_model(DESK_CONFIG, 0)
        for name in model.tape.names():
            assert sum((is_extractor(name), is_main(name), is_ssl(name))) == 1

    def test_branch_symmetry(self):
        tape = build_model(TINY, 0).tape
        main = {n[len("main/"):]: tape[n].shape for n in tape.names() if is_main(n)}
        ssl = {n[len("ssl/"):]: tape[n].shape for n in tape.names() if is_ssl(n)}
        assert main.keys() == ssl.keys()
        assert all(main[k] == ssl[k] for k in main if not k.startswith("head/"))
        assert main["head/weight"][0] == 10 and ssl["head/weight"][0] == 4

    def test_same_seed_same_model(self):
        assert build_model(TINY, 3).tape.identical(build_model(TINY, 3).tape)
        assert not build_model(TINY, 3).tape.identical(build_model(TINY, 4).tape)


class TestForward:
    def test_zero_head_uniform(self, rng):
        model = build_model(TINY, 0)
        model.tape["main/head/weight"].data[:] = 0
        model.tape["main/head/bias"].data[:] = 0
        label, probs = predict(model, tiny_images(rng, 1)[0])
        np.testing.assert_allclose(probs, 0.1, atol=1e-6)
        assert label == 0

    def test_probabilities_on_simplex(self, rng):
        probs = build_model(TINY, 1).predict_proba(tiny_images(rng, 5))
        assert probs.shape == (5, 10)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs >= 0).all()

    def test_losses_near_chance_at_init(self):
        model = build_model(DESK_CONFIG, 0)
        data = gen_synthetic(5, 64)
        l_m, l_s = joint_loss(model, data.images, data.labels, np.random.default_rng(0))
        assert abs(float(l_m.data) - math.log(10)) < 0.3
        assert abs(float(l_s.data) - math.log(4)) < 0.3

    def test_wrong_input_shape(self, rng):
        with pytest.raises(ShapeError):
            predict(build_model(TINY, 0), rng.random((3, 9, 9)))
        with pytest.raises(ShapeError):
            build_model(TINY, 0).predict_proba(rng.random((2, 3, 9, 9)))

    def test_batch_independence(self, rng):
        model = build_model(TINY, 0)
        imgs = tiny_images(rng, 6)
        np.testing.assert_allclose(model.predict_proba(imgs)[2], model.predict_proba(imgs[2:3])[0], atol=1e-6)


class TestGradients:
    def test_extractor_gradient_is_sum_of_branches(self, rng):
        model = build_model(TINY, 0)
        imgs, labels = tiny_images(rng), np.array([0, 1, 2, 3])

        def grads(which):
            l_m, l_s = joint_loss(model, imgs, labels, np.random.default_rng(5))
            loss = {"m": l_m, "s": l_s, "both": l_m + l_s}[which]
            backward(loss, model.tape)
            return model.tape.flat_grad(is_extractor)

        np.testing.assert_allclose(grads("both"), grads("m") + grads("s"), atol=1e-5)

    def test_branch_isolation(self, rng):
        model = build_model(TINY, 0)
        l_m, l_s = joint_loss(model, tiny_images(rng), np.array([0, 1, 2, 3]), rng)
        backward(l_m, model.tape)
        assert not model.tape.flat_grad(is_ssl).any()
        assert model.tape.flat_grad(is_main).any()
        backward(l_s, model.tape)
        assert not model.tape.flat_grad(is_main).any()
        assert model.tape.flat_grad(is_ssl).any()

    def test_trainable_mask_freezes_rest(self, rng):
        model = build_model(TINY, 0)
        rot = all_rotations(tiny_images(rng, 1))
        backward(model.ssl_loss(rot.images, rot.rotation_labels, model.params(is_extractor)), model.tape)
        assert model.tape.flat_grad(is_extractor).any()
        assert not model.tape.flat_grad(lambda n: not is_extractor(n)).any()

    def test_matches_finite_differences(self, rng):
        cfg = YModelConfig(input_shape=(2, 4, 4), blocks=(BlockSpec(4, 1, 2), BlockSpec(4, 2, 2)),
                           split_index=1, dtype="float64")
        model = build_model(cfg, 0)
        imgs = rng.random((3, 2, 4, 4))
        labels = np.array([1, 5, 9])

        def loss():
            l_m, l_s = joint_loss(model, imgs, labels, np.random.default_rng(2))
            return l_m + l_s

        errors = check_gradients(loss, model.tape, h=1e-6)
        assert max(errors.values()) < 1e-5, errors


class TestTraining:
    def test_memorises_small_set(self):
        data = gen_synthetic(9, 64)
        model = build_model(DESK_CONFIG, 0)
        cfg = TrainConfig(epochs=60, batch_size=16, sgd=SgdConfig(0.05, momentum=0.9), milestones=(), augment=False)
        model, history = train_joint(model, data, cfg, seed=0)
        preds = model.predict_proba(data.images).argmax(axis=1)
        assert np.mean(preds == data.labels) >= 0.95
        assert history[-1]["l_m"] < history[0]["l_m"]
