import hashlib

import numpy as np
import pytest

from granusense.classify import (CLASS_NAMES, ClassLabel, ConfusionMatrix, DatasetConfig,
                                 DatasetManifest, ModelConfigError, ModelFormatError,
                                 ModelParams, TrainConfig, TrainingDiverged, augment, evaluate,
                                 fit, generate_dataset, gradient_check, predict, train)
from granusense.classify.dataset import render_sample, split_sizes
from granusense.classify.model import PARAM_NAMES, softmax
from granusense.tactile import TactileImage

SMALL = DatasetConfig(per_class=30)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(root, config=SMALL, seed=5)
    return root, manifest


def test_nine_distinct_labels():
    assert len(set(CLASS_NAMES)) == 9
    assert ClassLabel("HexagonSand").shape == "Hexagon" and ClassLabel("HexagonSand").sandy
    assert ClassLabel.ZERO_CONTACT.shape is None


def test_split_sizes():
    assert split_sizes(300) == (240, 40, 20)
    assert split_sizes(1500) == (1200, 200, 100)
    assert sum(split_sizes(37)) == 37


def test_per_class_minimum(tmp_path):
    with pytest.raises(ValueError, match="30"):
        generate_dataset(tmp_path, per_class=29)


def test_manifest_structure(small_dataset):
    root, manifest = small_dataset
    assert len(manifest.entries) == 270
    for label, counts in manifest.counts().items():
        assert (counts["Train"], counts["Val"], counts["Test"]) == split_sizes(30)
    for e in manifest.entries:
        assert (root / e.image).exists()
        assert e.config_hash == manifest.config_hash
    back = DatasetManifest.read(root)
    assert back.entries == manifest.entries


def test_split_hygiene(small_dataset):
    root, manifest = small_dataset
    seen = {}
    for e in manifest.entries:
        digest = hashlib.sha256((root / e.image).read_bytes()).hexdigest()
        assert seen.setdefault(digest, e.split) == e.split


def test_generation_deterministic(tmp_path, small_dataset):
    root, manifest = small_dataset
    again = generate_dataset(tmp_path, config=SMALL, seed=5)
    assert (tmp_path / "manifest.jsonl").read_bytes() == (root / "manifest.jsonl").read_bytes()
    for e in again.entries[::17]:
        assert (tmp_path / e.image).read_bytes() == (root / e.image).read_bytes()


def test_bad_manifest_line(tmp_path):
    (tmp_path / "manifest.jsonl").write_text('{"image": 1}\n')
    with pytest.raises(ValueError, match=":1:"):
        DatasetManifest.read(tmp_path)


def test_zero_contact_samples_are_flat_gel():
    img, shape = render_sample(ClassLabel.ZERO_CONTACT, 3, DatasetConfig(sensor_noise=0.0))
    assert shape is None
    assert np.ptp(img.pixels[..., 0]) == 0


# -- augmentation ------------------------------------------------------------------

def test_identity_augmentation():
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    out = augment(img, np.random.default_rng(1), min_crop_area=1.0, max_rotation=0.0,
                  noise_sigma=0.0)
    np.testing.assert_array_equal(out, img)


def test_augmentation_repeatable_and_bounded():
    img = TactileImage(np.random.default_rng(0).uniform(size=(32, 32, 3)))
    a = augment(img, np.random.default_rng(4))
    b = augment(img, np.random.default_rng(4))
    np.testing.assert_array_equal(a.pixels, b.pixels)
    assert a.pixels.min() >= 0 and a.pixels.max() <= 1


def test_noise_only_mean_abs_change():
    img = np.full((64, 64, 3), 0.5)
    out = augment(img, np.random.default_rng(8), min_crop_area=1.0, max_rotation=0.0,
                  noise_sigma=0.02)
    assert np.abs(out - img).mean() == pytest.approx(0.02 * np.sqrt(2 / np.pi), rel=0.03)


# -- model -------------------------------------------------------------------------

def test_model_dimensions():
    m = ModelParams.initialize(seed=0)
    assert m.hidden == 128 and m.n_classes == 9
    assert set(m.params) == set(PARAM_NAMES)
    with pytest.raises(ModelConfigError):
        ModelParams.initialize(input_shape=(30, 30, 3))


def test_softmax_sums_to_one():
    logits = np.random.default_rng(0).normal(scale=30, size=(50, 9))
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-9)
    assert p.min() >= 0 and p.max() <= 1


def test_uniform_model_gives_one_ninth():
    m = ModelParams.initialize(seed=0)
    for k in m.params:
        m.params[k][...] = 0.0
    probs = m.predict_proba(np.random.default_rng(0).uniform(size=(3, 64, 64, 3)))
    np.testing.assert_allclose(probs, 1 / 9, atol=1e-12)


def test_gradient_check_three_image_batch():
    rng = np.random.default_rng(0)
    m = ModelParams.initialize(seed=1, input_shape=(8, 8, 3), dtype=np.float64)
    errs = gradient_check(m, rng.uniform(size=(3, 8, 8, 3)), np.array([0, 4, 8]))
    assert set(errs) == set(PARAM_NAMES)
    assert max(errs.values()) < 1e-4


def test_weights_round_trip(tmp_path):
    m = ModelParams.initialize(seed=3)
    m.input_mean = (0.6, 0.61, 0.62)
    m.extra = {"note": "x"}
    m.save(tmp_path / "w.bin")
    back = ModelParams.load(tmp_path / "w.bin")
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(back.params[k], m.params[k])
    assert back.input_mean == m.input_mean and back.extra == m.extra
    assert back.to_bytes() == m.to_bytes()


@pytest.mark.parametrize("mutate, message", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + b"\x09\x00" + b[6:], "version"),
    (lambda b: b[:-8], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_weights_corruption_detected(mutate, message):
    data = ModelParams.initialize(seed=0, input_shape=(8, 8, 3)).to_bytes()
    with pytest.raises(ModelFormatError, match=message):
        ModelParams.from_bytes(mutate(data))


def test_input_size_mismatch():
    m = ModelParams.initialize(seed=0)
    with pytest.raises(ModelConfigError, match="64x64"):
        m.forward(np.zeros((1, 32, 32, 3)))
    with pytest.raises(ModelConfigError, match="64x64"):
        predict(m, np.zeros((32, 32, 3)))


# -- training ----------------------------------------------------------------------

def tiny_set():
    cfg = DatasetConfig(width=16, height=16, resolution_mm=1.0, diameter_mm=10.0, margin_mm=0.5)
    xs, ys = [], []
    for label in ClassLabel:
        for i in range(2):
            img, _ = render_sample(label, 100 * label.index + i, cfg)
            xs.append(img.pixels)
            ys.append(label.index)
    return np.array(xs, dtype=np.float32), np.array(ys)


def test_overfit_two_per_class():
    x, y = tiny_set()
    cfg = TrainConfig(epochs=50, batch_size=6, learning_rate=0.05, decay_every=100,
                      augment=False, seed=0)
    result = fit(x, y, cfg)
    assert result.history[-1].train_accuracy == 1.0
    cm = ConfusionMatrix(np.zeros((9, 9), int))
    from granusense.classify.train import confusion

    cm = confusion(result.model, x, y)
    assert np.trace(cm.counts) == cm.total
    np.testing.assert_array_equal(cm.row_sums(), np.full(9, 2))


def test_training_deterministic():
    x, y = tiny_set()
    cfg = TrainConfig(epochs=3, batch_size=4, seed=7)
    a = fit(x, y, cfg).model.to_bytes()
    b = fit(x, y, cfg).model.to_bytes()
    assert a == b


def test_divergence_reported():
    x, y = tiny_set()
    x = x * 1e6
    cfg = TrainConfig(epochs=2, batch_size=18, learning_rate=1e6, clip_norm=None, augment=False,
                      seed=0)
    model = ModelParams.initialize(seed=0, input_shape=x.shape[1:], dtype=np.float32)
    with pytest.raises(TrainingDiverged, match="learning rate"):
        fit(x, y, cfg, model=model)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    assert TrainConfig().rate(0) == 0.05
    assert TrainConfig().rate(3) == 0.025
    assert TrainConfig().rate(9) == 0.05 / 8


def test_train_and_evaluate_small_manifest(small_dataset):
    _, manifest = small_dataset
    result = train(manifest, TrainConfig(epochs=2, seed=0))
    assert len(result.history) == 2
    assert result.log_csv().startswith("epoch,learning_rate")
    cm = evaluate(result.model, manifest, "Test")
    assert cm.total == 9 * split_sizes(30)[2]
    np.testing.assert_array_equal(cm.row_sums(), np.full(9, split_sizes(30)[2]))
    label, conf = predict(result.model, np.zeros((64, 64, 3)))
    assert label in CLASS_NAMES and 0 <= conf <= 1


def test_confusion_matrix_csv_and_pairing():
    counts = np.eye(9, dtype=int) * 5
    counts[0, 4] = 3  # TriangleClean -> TriangleSand
    counts[1, 2] = 1  # SquareClean -> HexagonClean
    cm = ConfusionMatrix(counts)
    assert cm.accuracy == pytest.approx(45 / 49)
    assert cm.same_shape_confusion() == pytest.approx(0.75)
    back = ConfusionMatrix.from_csv(cm.to_csv())
    np.testing.assert_array_equal(back.counts, counts)
    assert back.classes == CLASS_NAMES
    assert np.isnan(ConfusionMatrix(np.eye(9, dtype=int)).same_shape_confusion())
