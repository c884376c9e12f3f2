import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adast.data import DomainDataset, subject_split
from adast.errors import LabelError
from adast.metrics import (ConfusionMatrix, EmptyEvaluationError, accuracy, evaluate, macro_f1,
                           report_csv, report_text)
from adast.model import AdastModel, ArchConfig

sk = pytest.importorskip("sklearn.metrics")

BINARY = ConfusionMatrix(np.array([[3, 2], [1, 4]]))
counts = arrays(np.int64, st.tuples(st.just(4), st.just(4)), elements=st.integers(0, 20))


class TestScores:
    def test_perfect(self):
        cm = ConfusionMatrix(np.diag([5, 5]))
        assert accuracy(cm) == 1.0 and macro_f1(cm) == 1.0

    def test_binary_hand_example(self):
        assert accuracy(BINARY) == pytest.approx(0.7, abs=1e-15)
        # F1_0 = 2/3, F1_1 = 8/11
        assert macro_f1(BINARY) == pytest.approx((2 / 3 + 8 / 11) / 2, abs=1e-15)
        assert macro_f1(BINARY) == pytest.approx(0.6970, abs=1e-4)

    def test_all_wrong(self):
        cm = ConfusionMatrix(np.array([[0, 3], [4, 0]]))
        assert accuracy(cm) == 0.0 and macro_f1(cm) == 0.0

    def test_absent_class_scores_zero(self):
        cm = ConfusionMatrix(np.array([[6, 0], [0, 0]]))
        assert macro_f1(cm) == 0.5

    def test_counts_bookkeeping(self):
        assert BINARY.total == 10
        np.testing.assert_array_equal(BINARY.tp(), [3, 4])
        np.testing.assert_array_equal(BINARY.fn(), [2, 1])
        np.testing.assert_array_equal(BINARY.fp(), [1, 2])

    def test_empty(self):
        cm = ConfusionMatrix(np.zeros((3, 3), dtype=np.int64))
        with pytest.raises(EmptyEvaluationError):
            accuracy(cm)
        with pytest.raises(EmptyEvaluationError):
            macro_f1(cm)

    def test_from_labels(self):
        cm = ConfusionMatrix.from_labels([0, 0, 1, 2], [0, 1, 1, 0], 3)
        np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])
        with pytest.raises(LabelError):
            ConfusionMatrix.from_labels([0, 3], [0, 0], 3)

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
    def test_matches_reference_implementation(self, pairs):
        y, p = map(list, zip(*pairs))
        cm = ConfusionMatrix.from_labels(y, p, 5)
        assert accuracy(cm) == pytest.approx(sk.accuracy_score(y, p), abs=1e-12)
        ref = sk.f1_score(y, p, labels=list(range(5)), average="macro", zero_division=0)
        assert macro_f1(cm) == pytest.approx(ref, abs=1e-12)

    @given(counts, st.permutations(range(4)))
    def test_permutation_invariance(self, c, perm):
        if c.sum() == 0:
            return
        perm = np.asarray(perm)
        a, b = ConfusionMatrix(c), ConfusionMatrix(c[np.ix_(perm, perm)])
        assert accuracy(a) == accuracy(b)
        assert macro_f1(a) == pytest.approx(macro_f1(b), abs=1e-12)

    @given(counts)
    def test_bounds(self, c):
        if c.sum() == 0:
            return
        cm = ConfusionMatrix(c)
        assert 0.0 <= macro_f1(cm) <= 1.0
        assert 0.0 <= accuracy(cm) <= 1.0


class TestReports:
    def test_text(self):
        text = report_text(BINARY, "demo")
        assert "demo" in text and "ACC 0.7000" in text and "MF1 0.6970" in text

    def test_csv(self):
        rows = report_csv(BINARY).strip().splitlines()
        assert rows[0] == "class,precision,recall,f1,support"
        assert len(rows) == 1 + 2 + 2
        assert rows[-2].startswith("acc,0.7")


ARCH = ArchConfig(epoch_len=60, channels=(4, 4, 8), kernels=(5, 3, 3), strides=(2, 1, 1),
                  disc_hidden=8, cls_hidden=8)


def balanced_dataset(per_class=20, seed=0):
    rng = np.random.default_rng(seed)
    n = 5 * per_class
    stages = np.tile(np.arange(5), per_class)
    subjects = np.arange(n) % 10
    ds = DomainDataset(subjects, rng.standard_normal((n, 60)), stages, 60, 5)
    return subject_split(ds, seed=0)


class TestEvaluate:
    def test_constant_predictor_on_balanced_data(self):
        model = AdastModel(ARCH, 0)
        for clf in (model.C1, model.C2):
            for p in clf.parameters():
                p.data[...] = 0.0
            clf.fc2.bias.data[3] = 5.0
        acc, mf1, cm = evaluate(model, balanced_dataset(), "all")
        assert acc == pytest.approx(0.2, abs=1e-15)
        assert cm.counts[:, 3].sum() == cm.total

    def test_consistent_with_confusion_matrix(self):
        acc, mf1, cm = evaluate(AdastModel(ARCH, 1), balanced_dataset(), "test")
        assert acc == accuracy(cm) and mf1 == macro_f1(cm)
        assert cm.total == 20  # 2 of 10 subjects

    def test_random_init_near_chance(self):
        accs = [evaluate(AdastModel(ARCH, s), balanced_dataset(seed=s), "all")[0] for s in range(5)]
        assert all(0.05 <= a <= 0.5 for a in accs)

    def test_unlabeled_split(self):
        ds = balanced_dataset().without_labels("train")
        with pytest.raises(LabelError):
            evaluate(AdastModel(ARCH, 0), ds, "train")
        evaluate(AdastModel(ARCH, 0), ds, "val")

    def test_restores_training_mode(self):
        model = AdastModel(ARCH, 0).train()
        before = model.state_dict()
        evaluate(model, balanced_dataset(), "all")
        assert model.training
        after = model.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)
