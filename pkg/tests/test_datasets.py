import pytest
import numpy as np
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.training import DatasetConfig, Task
from app.services.datasets import gen_dataset


def _config(task, **kw):
    base = {"n": 40, "grid_side": 4, "d_v": 8, "k": 4, "seed": 3}
    return DatasetConfig(task=task, **{**base, **kw})


@pytest.mark.parametrize("task", list(Task))
def test_shapes_and_label_range(task):
    data = gen_dataset(_config(task))
    assert data.features.shape == (40, 16, 8)
    assert data.labels.shape == (40,)
    assert set(data.labels.tolist()) == {0, 1, 2, 3}
    assert np.bincount(data.labels).tolist() == [10, 10, 10, 10]


@pytest.mark.parametrize("task", list(Task))
def test_generation_is_deterministic(task):
    a, b = gen_dataset(_config(task)), gen_dataset(_config(task))
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c = gen_dataset(_config(task, seed=4))
    assert not np.array_equal(a.features, c.features)


def test_signals_are_orthonormal():
    data = gen_dataset(_config(Task.COARSE))
    assert np.allclose(data.signals @ data.signals.T, np.eye(4), atol=1e-12)


def test_coarse_patches_share_the_label_direction():
    data = gen_dataset(_config(Task.COARSE, noise_scale=0.0))
    for i in range(len(data)):
        expected = 2.0 * data.signals[data.labels[i]]
        assert np.allclose(data.features[i], expected[None, :], atol=1e-12)


def test_fine_plants_one_signal_patch():
    data = gen_dataset(_config(Task.FINE, noise_scale=0.0))
    for i in range(len(data)):
        nonzero = np.flatnonzero(np.abs(data.features[i]).sum(axis=1))
        assert nonzero.tolist() == [data.planted[i, 0]]
        assert np.allclose(data.features[i, nonzero[0]], 2.0 * data.signals[data.labels[i]])
    assert np.all(data.planted[:, 1] == -1)


def test_reasoning_label_is_sum_of_planted_classes():
    data = gen_dataset(_config(Task.REASONING, noise_scale=0.0))
    for i in range(len(data)):
        a, b = data.planted[i]
        assert a != b
        first = int(np.argmax(data.signals @ data.features[i, a]))
        second = int(np.argmax(data.signals @ data.features[i, b]))
        assert (first + second) % 4 == data.labels[i]


def test_reasoning_needs_two_patches():
    with pytest.raises(ConfigError):
        gen_dataset(_config(Task.REASONING, grid_side=1))


def test_more_classes_than_channels_rejected():
    with pytest.raises(ConfigError):
        gen_dataset(_config(Task.COARSE, k=9))


def test_k_must_exceed_one():
    with pytest.raises(ValidationError):
        _config(Task.COARSE, k=1)


def test_split_is_tail_held_out():
    data = gen_dataset(_config(Task.FINE, eval_fraction=0.25))
    assert data.n_test == 10
    assert data.train_indices.tolist() == list(range(30))
    assert data.test_indices.tolist() == list(range(30, 40))


def test_zero_eval_fraction_evaluates_on_training_set():
    data = gen_dataset(_config(Task.FINE, eval_fraction=0.0))
    assert data.test_indices.tolist() == data.train_indices.tolist() == list(range(40))


def test_no_training_samples_left():
    with pytest.raises(ConfigError):
        gen_dataset(_config(Task.FINE, n=1, eval_fraction=0.9))


def test_samples_carry_their_task_label():
    data = gen_dataset(_config(Task.REASONING))
    sample = data.sample(5)
    assert sample.label(Task.REASONING) == data.labels[5]
    assert sample.coarse_label is None
    assert sample.patches.features.shape == (16, 8)
    assert len(list(data.samples())) == 40


def test_shuffled_labels_keep_features_and_class_counts():
    data = gen_dataset(_config(Task.COARSE))
    shuffled = data.with_shuffled_labels(seed=1)
    assert shuffled.features is data.features
    assert sorted(shuffled.labels.tolist()) == sorted(data.labels.tolist())
    assert not np.array_equal(shuffled.labels, data.labels)
