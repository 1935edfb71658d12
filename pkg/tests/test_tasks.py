import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drnn.linalg import Rng
from drnn.tasks import (CharVocab, SineTaskSpec, expected_reversal_tpr, gen_masked_corpus,
                        gen_reversal, gen_sine, normalize_text, per_token_accuracy,
                        reversal_tpr_bruteforce, sine_labels)


def test_reversal_labels_exhaustive():
    ds = gen_reversal(Rng(0), 300, 100, 100, T=9, V=4)
    for split in ds.splits.values():
        T = split.inputs.shape[1]
        for t in range(T):
            assert np.array_equal(split.labels[:, t], split.inputs[:, T - 1 - t])
        assert split.mask.all()


def test_reversal_examples():
    ds = gen_reversal(Rng(0), 5, 5, 5, T=4, V=4)
    x = ds.splits["train"].inputs[0]
    assert list(ds.splits["train"].labels[0]) == list(x[::-1])
    pal = np.array([1, 2, 2, 1])
    assert np.array_equal(pal[::-1], pal)


def test_reversal_default_sizes_and_disjoint_splits():
    ds = gen_reversal(Rng(1))
    assert [len(ds.splits[k]) for k in ("train", "val", "test")] == [10000, 2000, 2000]
    assert ds.input_dim == 4 and ds.splits["train"].inputs.shape[1] == 20
    small = gen_reversal(Rng(2), 200, 50, 50, T=6, V=3)
    seen = {r.tobytes() for r in small.splits["train"].inputs}
    for name in ("val", "test"):
        assert not seen & {r.tobytes() for r in small.splits[name].inputs}
    with pytest.raises(ValueError):
        gen_reversal(Rng(0), 4, 4, 4, T=1, V=2)


def test_reversal_one_hot_batch():
    ds = gen_reversal(Rng(0), 3, 1, 1, T=5, V=4)
    xs, ys, mask = ds.splits["train"].batch([0, 2], 4)
    assert xs.shape == (5, 2, 4) and ys.shape == (5, 2) and mask.shape == (5, 2)
    assert np.array_equal(xs.argmax(-1), ds.splits["train"].inputs[[0, 2]].T)
    assert np.all(xs.sum(-1) == 1)


def test_expected_tpr_values():
    assert expected_reversal_tpr(20, 4, 0) == 0.625
    assert expected_reversal_tpr(20, 4, 19) == 1.0
    assert [expected_reversal_tpr(20, 4, d) for d in (0, 4, 9, 14, 19)] == \
        pytest.approx([0.625, 0.7, 0.8125, 0.8875, 1.0])
    for d in range(6):
        assert expected_reversal_tpr(20, 1, d) == 1.0
    assert expected_reversal_tpr(20, 4, 100) == 1.0


@pytest.mark.parametrize("T", [2, 4, 10, 20])
@pytest.mark.parametrize("V", [1, 2, 4, 7])
def test_expected_tpr_matches_counting_for_even_lengths(T, V):
    for d in range(T + 3):
        assert expected_reversal_tpr(T, V, d) == pytest.approx(reversal_tpr_bruteforce(T, V, d))


def test_expected_tpr_nondecreasing():
    vals = [expected_reversal_tpr(20, 4, d) for d in range(30)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_sine_gamma_zero_gives_zero_labels():
    ds = gen_sine(Rng(0), SineTaskSpec(T=10, a=3, c=2, gamma=0.0), 4, 2, 2)
    assert all(np.count_nonzero(s.labels) == 0 for s in ds.splits.values())


def test_sine_single_tap_is_pointwise():
    spec = SineTaskSpec(T=6, a=0, c=1, gamma=1.7)
    x = Rng(0).uniform(0, 1, (3, 6))
    assert np.allclose(sine_labels(x, np.array([1.0]), spec), np.sin(1.7 * x), atol=0)


def test_sine_direct_summation():
    spec = SineTaskSpec(T=7, a=2, c=3, gamma=1.3)
    w = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    x = np.array([[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]])
    y = sine_labels(x, w, spec)
    for t in range(1, 8):
        total = 0.0
        for j in range(-2, 3):
            if 1 <= t + j <= 7:
                total += w[j + 3 - 1] * x[0, t + j - 1]
        assert y[0, t - 1] == pytest.approx(math.sin(1.3 * total), abs=1e-15)
    # t = 1, a hand expansion: j = 0, 1, 2 reach x_1, x_2, x_3
    assert y[0, 0] == pytest.approx(math.sin(1.3 * (0.3 * 0.9 + 0.4 * 0.8 + 0.5 * 0.7)))


def test_sine_regeneration_bit_exact():
    spec = SineTaskSpec()
    ds = gen_sine(Rng(3), spec, 20, 5, 5)
    w = np.array(ds.meta["filter"])
    assert len(w) == 20 and np.all((0 <= w) & (w < 1))
    for split in ds.splits.values():
        again = sine_labels(split.inputs[..., 0], w, spec)
        assert np.array_equal(again, split.labels[..., 0])


def test_sine_spec_validation():
    with pytest.raises(ValueError):
        SineTaskSpec(a=-1)
    with pytest.raises(ValueError):
        SineTaskSpec(a=0, c=0)


def test_vocab():
    v = CharVocab()
    assert v.size == 27 and v.input_size == 28 and v.mask_id == 27
    assert list(v.encode("az ")) == [0, 25, 26]
    with pytest.raises(ValueError):
        v.encode("Hi")
    assert v.decode([7, 27, 26]) == "h_ "


def test_normalize_text():
    assert normalize_text("Hello, World!") == "hello  world "
    assert normalize_text("Hello, World!", collapse=True) == "hello world "
    assert normalize_text("text eight") == "text eight"


def test_masked_corpus_zero_probability():
    text = "the quick brown fox jumps over the lazy dog " * 20
    ds = gen_masked_corpus(Rng(0), text, 0.0, seq_len=30)
    for split in ds.splits.values():
        assert not split.mask.any()
        assert np.array_equal(split.inputs, split.labels)


def test_masked_corpus_fraction_and_labels():
    rng = Rng(1)
    text = "".join(CharVocab.alphabet[i] for i in rng.integers(0, 27, (1_000_000,)))
    ds = gen_masked_corpus(Rng(2), text, 0.2, seq_len=180)
    masked = sum(int(s.mask.sum()) for s in ds.splits.values())
    total = sum(s.mask.size for s in ds.splits.values())
    assert abs(masked / total - 0.2) <= 0.005
    for s in ds.splits.values():
        assert np.all(s.inputs[s.mask] == CharVocab.mask_id)
        assert np.array_equal(s.inputs[~s.mask], s.labels[~s.mask])
        assert s.labels.max() < 27
    assert ds.input_dim == 28 and ds.output_dim == 27
    assert len(ds.splits["train"]) == 5000 and len(ds.splits["val"]) == 277


def test_masked_corpus_rejects_foreign_characters():
    with pytest.raises(ValueError):
        gen_masked_corpus(Rng(0), "abc1", 0.2, seq_len=2)
    with pytest.raises(ValueError):
        gen_masked_corpus(Rng(0), "abcd", 1.0, seq_len=2)


def test_masked_corpus_contiguous_split():
    text = "".join(CharVocab.alphabet[i % 26] for i in range(2000))
    ds = gen_masked_corpus(Rng(0), text, 0.0, seq_len=10)
    vocab = CharVocab()
    assert vocab.decode(ds.splits["train"].labels[0]) == text[:10]
    assert vocab.decode(ds.splits["val"].labels[0]) == text[1800:1810]
    assert vocab.decode(ds.splits["test"].labels[0]) == text[1900:1910]


def test_per_token_accuracy():
    labels = np.array([[0, 1, 2]])
    perfect = np.eye(3)[labels]
    assert per_token_accuracy(perfect, labels, np.ones((1, 3), bool)) == 1.0
    wrong = np.eye(3)[(labels + 1) % 3]
    assert per_token_accuracy(wrong, labels, np.ones((1, 3), bool)) == 0.0
    with pytest.raises(ValueError):
        per_token_accuracy(perfect, labels, np.zeros((1, 3), bool))


def test_per_token_accuracy_ties_pick_lowest_index():
    rng = Rng(5)
    labels = rng.integers(0, 4, (50_000,))
    uniform = np.full((50_000, 4), 0.25)
    acc = per_token_accuracy(uniform, labels, np.ones(50_000, bool))
    assert acc == np.mean(labels == 0)
    assert abs(acc - 0.25) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_masked_labels_equal_original(seed):
    rng = Rng(seed)
    text = "".join(CharVocab.alphabet[i] for i in rng.integers(0, 27, (400,)))
    ds = gen_masked_corpus(Rng(seed + 1), text, 0.3, seq_len=20)
    joined = np.concatenate([ds.splits[k].labels.ravel() for k in ("train", "val", "test")])
    assert CharVocab().decode(joined) == text[:len(joined)] or len(joined) < 400
