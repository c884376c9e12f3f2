import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adast.errors import CompatibilityError, FormatError, ShapeError
from adast.model import (CKPT_MAGIC, AdastModel, ArchConfig, load_checkpoint, read_records,
                         save_checkpoint, write_records)
from adast.tensor import Tensor, backward

SMALL = ArchConfig(epoch_len=60, channels=(4, 4, 8), kernels=(5, 3, 3), strides=(2, 1, 1),
                   disc_hidden=8, cls_hidden=8)


def small_model(seed=0, **kw):
    return AdastModel(SMALL, seed, **kw)


def batch(rng, b=2, t=60):
    return Tensor(rng.standard_normal((b, 1, t)))


def set_constant_head(clf, probs):
    """Make a classifier output ``probs`` for every input (zero weights, logit biases)."""
    for p in (clf.fc1.weight, clf.fc1.bias, clf.fc2.weight):
        p.data[...] = 0.0
    clf.fc2.bias.data[...] = np.log(probs)


class TestArch:
    def test_default_feature_shape(self):
        # 300 -> conv25/s3 -> 92 -> pool 46 -> conv8 39 -> pool 19 -> conv8 12 -> pool 6
        assert ArchConfig().feature_shape() == (32, 6)

    def test_too_short_input_is_reported(self):
        problems = ArchConfig(epoch_len=20).validate()
        assert problems


class TestForward:
    def test_shapes_and_normalisation(self, rng):
        model = small_model()
        d, l = SMALL.feature_shape()
        feat, p = model.forward_source(batch(rng))
        assert feat.shape == (2, d, l)
        assert p.shape == (2, 5)
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-9)

    def test_average_of_heads(self, rng):
        arch = ArchConfig(epoch_len=60, n_classes=2, channels=(4, 4, 8), kernels=(5, 3, 3),
                          strides=(2, 1, 1), disc_hidden=8, cls_hidden=8)
        model = AdastModel(arch, 0)
        set_constant_head(model.C1, [0.6, 0.4])
        set_constant_head(model.C2, [0.2, 0.8])
        _, p = model.forward_source(batch(rng, 1))
        np.testing.assert_allclose(p.data, [[0.4, 0.6]], atol=1e-12)
        set_constant_head(model.C1, [0.5, 0.5])
        set_constant_head(model.C2, [0.5, 0.5])
        _, p = model.forward_target(batch(rng, 1))
        np.testing.assert_allclose(p.data, [[0.5, 0.5]], atol=1e-12)

    def test_identical_heads_give_that_head(self, rng):
        model = small_model()
        for a, b in zip(model.C1.parameters(), model.C2.parameters()):
            b.data[...] = a.data
        x = batch(rng)
        feat, p = model.forward_source(x)
        np.testing.assert_array_equal(p.data, model.C1(feat).data)

    def test_copied_attention_gives_same_paths(self, rng):
        model = small_model()
        for a, b in zip(model.A_s.parameters(), model.A_t.parameters()):
            b.data[...] = a.data
        model.eval()
        x = batch(rng, 3)
        np.testing.assert_array_equal(model.forward_source(x)[1].data, model.forward_target(x)[1].data)

    def test_target_predictions_in_range(self, rng):
        _, p = small_model(3).forward_target(batch(rng, 3))
        pred = p.data.argmax(axis=1)
        assert pred.shape == (3,) and np.all((pred >= 0) & (pred < 5))

    def test_without_attention_paths_agree(self, rng):
        model = small_model(use_attention=False).eval()
        x = batch(rng)
        np.testing.assert_array_equal(model.forward_source(x)[1].data, model.forward_target(x)[1].data)

    def test_single_classifier(self, rng):
        model = small_model(dual_classifiers=False)
        assert model.C2 is None
        feat, p = model.forward_source(batch(rng))
        np.testing.assert_array_equal(p.data, model.C1(feat).data)
        with pytest.raises(ShapeError):
            model.classifier_param_vectors()

    def test_wrong_input_shape(self, rng):
        with pytest.raises(ShapeError):
            small_model().forward_source(Tensor(rng.standard_normal((2, 1, 59))))
        with pytest.raises(ShapeError):
            small_model().forward_source(Tensor(rng.standard_normal((2, 60))))

    @settings(max_examples=10)
    @given(seed=st.integers(0, 2**16), b=st.integers(2, 4))
    def test_probability_rows_sum_to_one(self, seed, b):
        model = small_model(seed)
        x = batch(np.random.default_rng(seed), b)
        for path in (model.forward_source, model.forward_target):
            np.testing.assert_allclose(path(x)[1].data.sum(axis=1), 1.0, atol=1e-9)


class TestDiscriminator:
    def test_zero_weights_give_half(self, rng):
        model = small_model()
        for p in model.D.parameters():
            p.data[...] = 0.0
        d, l = SMALL.feature_shape()
        out = model.discriminate(Tensor(rng.standard_normal((3, d, l))))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-15)

    def test_large_bias_saturates(self, rng):
        model = small_model()
        model.D.fc2.bias.data[...] = 50.0
        d, l = SMALL.feature_shape()
        out = model.discriminate(Tensor(rng.standard_normal((2, d, l))))
        assert np.all(out.data > 1 - 1e-9) and np.all(out.data < 1)

    def test_random_init_range(self, rng):
        model = small_model()
        feat, _ = model.forward_source(batch(rng, 4))
        out = model.discriminate(feat).data
        assert out.shape == (4,)
        assert np.all(np.isfinite(out)) and np.all((out > 0) & (out < 1))

    def test_bad_feature_shape(self, rng):
        with pytest.raises(ShapeError):
            small_model().discriminate(Tensor(rng.standard_normal((2, 3, 3))))


class TestParameterStructure:
    def test_extractor_is_shared_attention_is_not(self, rng):
        model = small_model()
        x = batch(rng)
        model.eval()
        before_t = model.forward_target(x)[1].data.copy()
        # nudging A_s leaves the target path alone
        for p in model.A_s.parameters():
            p.data += 0.1
        np.testing.assert_array_equal(model.forward_target(x)[1].data, before_t)
        # nudging F moves both paths
        model.F.blocks[0].conv.weight.data += 0.1
        assert not np.array_equal(model.forward_target(x)[1].data, before_t)

    def test_attention_modules_disjoint(self):
        model = small_model()
        ids_s = {id(p) for p in model.A_s.parameters()}
        ids_t = {id(p) for p in model.A_t.parameters()}
        assert ids_s and not ids_s & ids_t

    def test_parameter_groups_partition_the_model(self):
        model = small_model()
        main = {id(p) for _, p in model.main_parameters()}
        disc = {id(p) for _, p in model.discriminator_parameters()}
        assert not main & disc
        assert main | disc == {id(p) for p in model.parameters()}

    def test_classifiers_independent_init(self):
        model = small_model()
        t1, t2 = model.classifier_param_vectors()
        assert t1.shape == t2.shape
        assert not np.array_equal(t1.data, t2.data)

    def test_param_vector_length(self):
        model = small_model()
        d, l = SMALL.feature_shape()
        expected = d * l * SMALL.cls_hidden + SMALL.cls_hidden * SMALL.n_classes
        assert model.classifier_param_vectors()[0].size == expected

    def test_param_vector_row_major(self):
        model = small_model()
        model.C1.fc1.weight.data[...] = 0.0
        model.C1.fc1.weight.data[:2, :2] = [[1.0, 2.0], [3.0, 4.0]]
        flat = model.C1.weight_vector().data
        np.testing.assert_array_equal(flat[:2], [1.0, 2.0])
        n_in = model.C1.fc1.weight.shape[1]
        np.testing.assert_array_equal(flat[n_in : n_in + 2], [3.0, 4.0])

    def test_identical_classifiers_identical_vectors(self):
        model = small_model()
        for a, b in zip(model.C1.parameters(), model.C2.parameters()):
            b.data[...] = a.data
        t1, t2 = model.classifier_param_vectors()
        np.testing.assert_array_equal(t1.data, t2.data)

    def test_param_vectors_carry_gradient(self):
        model = small_model()
        t1, t2 = model.classifier_param_vectors()
        backward((t1 * t2).sum())
        np.testing.assert_array_equal(model.C1.fc2.weight.grad, model.C2.fc2.weight.data)

    def test_seed_determines_init(self):
        a, b = small_model(5).state_dict(), small_model(5).state_dict()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = small_model(6).state_dict()
        assert not np.array_equal(a["F.blocks.0.conv.weight"], c["F.blocks.0.conv.weight"])


class TestCheckpoint:
    def _trained(self, rng):
        model = small_model(2)
        model.train()
        model.forward_source(batch(rng, 4))  # moves the running statistics
        return model

    def test_round_trip_bit_exact(self, tmp_path, rng):
        model = self._trained(rng)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        a, b = model.state_dict(), back.state_dict()
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].tobytes() == b[k].tobytes(), k
        assert back.arch == model.arch
        x = batch(rng)
        model.eval(), back.eval()
        np.testing.assert_array_equal(model.forward_target(x)[1].data, back.forward_target(x)[1].data)

    @pytest.mark.parametrize("att,dc", [(False, False), (True, False), (False, True)])
    def test_round_trip_variants(self, tmp_path, att, dc):
        model = small_model(1, use_attention=att, dual_classifiers=dc)
        save_checkpoint(model, tmp_path / "v.ckpt")
        back = load_checkpoint(tmp_path / "v.ckpt")
        assert (back.use_attention, back.dual_classifiers) == (att, dc)
        assert save_bytes(model, tmp_path / "a") == save_bytes(back, tmp_path / "b")

    def test_records_round_trip_special_values(self, tmp_path):
        recs = {"a": np.array([0.0, -0.0, np.inf, -np.inf, 5e-324]), "s": np.array(3.5),
                "é": np.zeros((2, 0))}
        write_records(tmp_path / "r", recs)
        back = read_records(tmp_path / "r")
        assert list(back) == list(recs)
        for k in recs:
            assert back[k].shape == recs[k].shape
            assert back[k].tobytes() == recs[k].tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        save_checkpoint(small_model(), path)
        raw = bytearray(path.read_bytes())
        raw[: len(CKPT_MAGIC)] = b"X" * len(CKPT_MAGIC)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as exc:
            load_checkpoint(path)
        assert exc.value.offset == 0

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(small_model(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_state_mismatch(self):
        model = small_model()
        state = model.state_dict()
        state.pop("D.fc2.bias")
        with pytest.raises(CompatibilityError):
            model.load_state_dict(state)
        other = AdastModel(ArchConfig(), 0).state_dict()
        with pytest.raises(CompatibilityError):
            model.load_state_dict(other)


def save_bytes(model, path):
    save_checkpoint(model, path)
    return path.read_bytes()
